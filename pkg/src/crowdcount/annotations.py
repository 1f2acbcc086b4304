"""Point-level head annotations and their on-disk JSONL format."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PointAnnotations:
    """Sub-pixel head coordinates for one image.

    ``points`` is an (n, 2) float64 array of (x, y) positions in image
    pixels; every point must lie inside [0, width) x [0, height).
    """

    points: np.ndarray
    image_size: tuple[int, int]  # (height, width)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValueError(f"invalid image size {self.image_size}")
        if len(pts):
            x, y = pts[:, 0], pts[:, 1]
            bad = (x < 0) | (x >= w) | (y < 0) | (y >= h)
            if bad.any():
                i = int(np.argmax(bad))
                raise ValueError(
                    f"point {i} at ({x[i]}, {y[i]}) outside image {w}x{h}"
                )

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class AnnotationRecord:
    """One line of an annotation file: an image path plus its points."""

    image: str
    width: int
    height: int
    points: list = field(default_factory=list)

    def to_point_annotations(self) -> PointAnnotations:
        return PointAnnotations(
            points=np.array(self.points, dtype=np.float64).reshape(-1, 2),
            image_size=(self.height, self.width),
        )


def save_annotations(records: list[AnnotationRecord], path: str | Path) -> None:
    """Write records as UTF-8 line-delimited JSON, one object per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for r in records:
            obj = {
                "image": r.image,
                "width": int(r.width),
                "height": int(r.height),
                "points": [[float(x), float(y)] for x, y in r.points],
            }
            f.write(json.dumps(obj) + "\n")


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no + 1}: malformed record") from e
            records.append(
                AnnotationRecord(
                    image=obj["image"],
                    width=int(obj["width"]),
                    height=int(obj["height"]),
                    points=[[float(x), float(y)] for x, y in obj["points"]],
                )
            )
    return records
