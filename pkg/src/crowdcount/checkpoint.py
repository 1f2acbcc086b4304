"""Checkpoint save/load with config-digest verification."""

from pathlib import Path

import torch

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, **state) -> None:
    state["format_version"] = FORMAT_VERSION
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_digest: str | None = None) -> dict:
    state = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = state.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format {version} not supported (expected {FORMAT_VERSION})"
        )
    if expected_digest is not None and state.get("config_digest") != expected_digest:
        raise ValueError(
            "checkpoint was written with a different configuration "
            f"(digest {state.get('config_digest')!r} != {expected_digest!r}); "
            "refusing to load"
        )
    return state
