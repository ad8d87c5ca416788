"""Dense flow fields and the Middlebury ``.flo`` file layout."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import IoError, ParseError

FLO_MAGIC = 202021.25


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement ``(u, v)`` from a source image to a target image."""

    source_frame: int
    source_side: str
    target_frame: int
    target_side: str
    data: np.ndarray  # (height, width, 2)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 2:
            raise ValueError(f"flow data must be (H, W, 2), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("flow contains non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple:
        return self.data.shape[:2]

    @classmethod
    def zeros(cls, shape, source_frame, source_side, target_frame, target_side) -> "FlowField":
        return cls(source_frame, source_side, target_frame, target_side, np.zeros((*shape, 2), np.float32))


def write_flo(path, data) -> None:
    """Write ``(H, W, 2)`` flow in Middlebury layout (little-endian)."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError(f"flow data must be (H, W, 2), got {data.shape}")
    h, w = data.shape[:2]
    try:
        with open(path, "wb") as fh:
            np.array([FLO_MAGIC], dtype="<f4").tofile(fh)
            np.array([w, h], dtype="<i4").tofile(fh)
            fh.write(np.ascontiguousarray(data).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_flo(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12:
        raise ParseError(f"{path}: truncated .flo header")
    magic = np.frombuffer(raw, "<f4", 1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise ParseError(f"{path}: bad .flo magic {magic}")
    w, h = (int(x) for x in np.frombuffer(raw, "<i4", 2, offset=4))
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: invalid .flo dimensions {w}x{h}")
    n = w * h * 2
    if len(raw) - 12 < n * 4:
        raise ParseError(f"{path}: truncated .flo body")
    data = np.frombuffer(raw, "<f4", n, offset=12).reshape(h, w, 2).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite flow values")
    return data


def load_flow(path, source_frame, source_side, target_frame, target_side) -> FlowField:
    return FlowField(source_frame, source_side, target_frame, target_side, read_flo(path))
