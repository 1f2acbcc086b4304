"""Background-inpainting augmentation.

The classification branch separates foreground from background (bin 0 means
a zero-count cell); background cells are handed to an inpainting backend
together with a sampled prompt pair.  Unmasked pixels are preserved
bit-exact by compositing the generated image under the mask.  The weighted
mask machinery turns the teacher's strong/weak disagreement on an inpainted
image into per-cell loss weights that fade out unreliable regions.
"""

import base64
import hashlib
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
import torch
from PIL import Image

from .prompts import PromptStore
from .synth import value_noise


class InpaintError(Exception):
    pass


class RetriableInpaintError(InpaintError):
    """Transient backend failure (timeout, connection, 5xx); safe to retry."""


class PermanentInpaintError(InpaintError):
    """Malformed response or contract violation; retrying will not help."""


# --------------------------------------------------------------------------
# masks and weights


def build_inpaint_mask(probs, image_size: tuple[int, int], stride: int = 8) -> np.ndarray:
    """Per-cell background decision (argmax bin == 0) upsampled
    nearest-neighbour to image resolution; 1 marks pixels to inpaint."""
    if torch.is_tensor(probs):
        probs = probs.detach().cpu().numpy()
    if probs.ndim != 3:
        raise ValueError(f"expected (K, h, w) probabilities, got {probs.shape}")
    cells = (probs.argmax(axis=0) == 0).astype(np.uint8)
    full = np.repeat(np.repeat(cells, stride, axis=0), stride, axis=1)
    h, w = image_size
    return full[:h, :w]


def mask_to_size(mask: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour rescale of a binary mask to ``image_size``."""
    h, w = image_size
    mh, mw = mask.shape
    if (mh, mw) == (h, w):
        return mask
    rows = (np.arange(h) * mh) // h
    cols = (np.arange(w) * mw) // w
    return mask[rows][:, cols]


def inconsistency_levels(p_s: torch.Tensor, p_w: torch.Tensor) -> torch.Tensor:
    """Per-cell integer disagreement |argmax(p_s) - argmax(p_w)| between the
    strong- and weak-view bin predictions; bin axis is dim -3."""
    if p_s.shape != p_w.shape:
        raise ValueError("prediction shapes do not align")
    return (p_s.argmax(dim=-3) - p_w.argmax(dim=-3)).abs()


def level_weights(t: int, max_level: int, t_inpw: int) -> np.ndarray:
    """softmax over l = 0..L of exp(-l * t / T); uniform at t = 0 and
    concentrating on level 0 as t grows."""
    if t < 0 or max_level < 0 or t_inpw <= 0:
        raise ValueError("need t >= 0, max_level >= 0, t_inpw > 0")
    levels = np.arange(max_level + 1, dtype=np.float64)
    x = np.exp(-levels * t / t_inpw)
    e = np.exp(x - x.max())
    return e / e.sum()


def weighted_mask(levels: torch.Tensor, t: int, max_level: int, t_inpw: int) -> torch.Tensor:
    """Cell weight = omega_level for levels <= L, else 0."""
    w = torch.from_numpy(level_weights(t, max_level, t_inpw))
    capped = levels.clamp(max=max_level).long()
    return w.to(levels.device)[capped] * (levels <= max_level)


# --------------------------------------------------------------------------
# backends


class MockInpainter:
    """Deterministic offline stand-in: multi-octave value noise colored by a
    two-color palette hashed from the prompt."""

    tag = "mock"

    def generate(self, image, mask, prompt, negative_prompt, seed):
        h, w = image.shape[:2]
        rng = np.random.default_rng(seed)
        noise = value_noise(rng, h, w)[:, :, None]
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        c0 = np.frombuffer(digest[0:3], dtype=np.uint8) / 255.0
        c1 = np.frombuffer(digest[3:6], dtype=np.uint8) / 255.0
        out = c0 * (1 - noise) + c1 * noise
        return np.rint(out * 255.0).astype(np.uint8)


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _b64_png(payload: str) -> np.ndarray:
    data = base64.b64decode(payload)
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


class DiffusionServiceInpainter:
    """HTTP client for a diffusion inpainting service.

    Wire contract: POST {image, mask, prompt, negative_prompt, seed} where
    image/mask are base64 PNGs (mask value 255 = inpaint); the response is
    {"image": base64 PNG}.  Connection problems and 5xx responses are
    retried; malformed responses are permanent failures.
    """

    tag = "diffusion-service"

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2, backoff: float = 0.1):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.session = requests.Session()

    def _post_once(self, body):
        try:
            resp = self.session.post(self.url, json=body, timeout=self.timeout)
        except (requests.Timeout, requests.ConnectionError) as e:
            raise RetriableInpaintError(f"inpainting service unreachable: {e}") from e
        if resp.status_code >= 500:
            raise RetriableInpaintError(f"service error {resp.status_code}")
        if resp.status_code != 200:
            raise PermanentInpaintError(f"service rejected request: {resp.status_code}")
        try:
            payload = resp.json()["image"]
            return _b64_png(payload)
        except (ValueError, KeyError, OSError) as e:
            raise PermanentInpaintError(f"malformed service response: {e}") from e

    def generate(self, image, mask, prompt, negative_prompt, seed):
        body = {
            "image": _png_b64(image),
            "mask": _png_b64((mask * 255).astype(np.uint8)),
            "prompt": prompt,
            "negative_prompt": negative_prompt,
            "seed": int(seed),
        }
        attempt = 0
        while True:
            try:
                out = self._post_once(body)
                break
            except RetriableInpaintError:
                if attempt >= self.retries:
                    raise
                time.sleep(self.backoff * 2**attempt)
                attempt += 1
        if out.shape[:2] != image.shape[:2]:
            raise PermanentInpaintError(
                f"service returned {out.shape[:2]}, expected {image.shape[:2]}"
            )
        return out


def get_inpaint_backend(name: str, **kwargs):
    if name == "mock":
        return MockInpainter()
    if name == "diffusion-service":
        return DiffusionServiceInpainter(**kwargs)
    raise ValueError(f"unknown inpaint backend {name!r}")


# --------------------------------------------------------------------------
# records and the on-disk store


@dataclass
class InpaintRecord:
    source_id: str
    image: np.ndarray
    mask: np.ndarray
    prompt_index: int
    created_epoch: int
    backend: str


def inpaint(
    image: np.ndarray,
    mask: np.ndarray,
    prompts: tuple[str, str],
    backend,
    *,
    seed: int = 0,
    source_id: str = "",
    epoch: int = 0,
    prompt_index: int = -1,
) -> InpaintRecord:
    """Run the backend and composite so unmasked pixels stay bit-identical
    to the source."""
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not align to image {image.shape[:2]}")
    positive, negative = prompts
    generated = backend.generate(image, mask, positive, negative, seed)
    out = np.where(mask[:, :, None] != 0, generated, image)
    return InpaintRecord(
        source_id=source_id,
        image=out,
        mask=mask.astype(np.uint8),
        prompt_index=prompt_index,
        created_epoch=epoch,
        backend=backend.tag,
    )


def make_inpaint_record(
    image: np.ndarray,
    probs,
    store: PromptStore,
    backend,
    *,
    source_id: str,
    epoch: int,
    seed: int,
    stride: int = 8,
    mask: np.ndarray | None = None,
) -> InpaintRecord:
    """Mask from the classification probabilities (or an explicit one),
    prompt from the table, then :func:`inpaint`."""
    if mask is None:
        mask = build_inpaint_mask(probs, image.shape[:2], stride)
    idx, pos, neg = store.sample(seed)
    return inpaint(
        image,
        mask,
        (pos, neg),
        backend,
        seed=seed,
        source_id=source_id,
        epoch=epoch,
        prompt_index=idx,
    )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class InpaintStore:
    """One directory per source image holding the latest inpainted sample.

    Writers stage into temp files and atomically rename, metadata last, so a
    reader either sees a complete, checksum-consistent record or skips it.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, record: InpaintRecord) -> None:
        rec_dir = self.root / record.source_id
        rec_dir.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        Image.fromarray(record.image).save(buf, format="PNG")
        image_bytes = buf.getvalue()
        meta = {
            "source_id": record.source_id,
            "prompt_index": record.prompt_index,
            "created_epoch": record.created_epoch,
            "backend": record.backend,
            "mask_sha256": _sha256(record.mask.tobytes()),
            "image_sha256": _sha256(image_bytes),
        }
        self._atomic_write(rec_dir / "inpaint.png", image_bytes)
        self._atomic_write(
            rec_dir / "meta.json", json.dumps(meta, sort_keys=True).encode("utf-8")
        )

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def snapshot(self) -> list[dict]:
        """Consistent view of complete records, sorted by source id."""
        records = []
        for rec_dir in sorted(self.root.iterdir()):
            meta_path = rec_dir / "meta.json"
            img_path = rec_dir / "inpaint.png"
            if not (meta_path.is_file() and img_path.is_file()):
                continue
            try:
                meta = json.loads(meta_path.read_text())
                image_bytes = img_path.read_bytes()
                if _sha256(image_bytes) != meta.get("image_sha256"):
                    continue
                image = np.asarray(Image.open(io.BytesIO(image_bytes)).convert("RGB"))
            except (ValueError, OSError):
                continue
            meta["image"] = image
            records.append(meta)
        return records
