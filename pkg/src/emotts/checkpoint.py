"""Versioned checkpoint container shared by every trained model."""

from pathlib import Path

import torch

from .errors import MissingFile, UnsupportedFormat

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    kind: str,
    model_config: dict,
    state_dict: dict,
    phase: str | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    """Persist model weights with an architecture descriptor and training metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": FORMAT_VERSION,
            "kind": kind,
            "model_config": model_config,
            "state_dict": state_dict,
            "phase": phase,
            "seed": seed,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, expected_kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise UnsupportedFormat(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != FORMAT_VERSION:
        raise UnsupportedFormat(f"unrecognized checkpoint format in {path}")
    if expected_kind is not None and payload.get("kind") != expected_kind:
        raise UnsupportedFormat(
            f"expected a {expected_kind!r} checkpoint, found {payload.get('kind')!r} in {path}"
        )
    return payload
