"""Instance masks, flow-based mask transport and mask overlap."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import EmptyPrediction, IoError, ParseError

SIDES = ("left", "right")
MIN_MASK_AREA = 25


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Binary raster of one object instance in one image.

    The area lower bound for detections is applied by
    :func:`masks_from_label_image`; predictions produced by warping may be
    smaller than that.
    """

    frame_index: int
    side: str
    pixels: np.ndarray
    instance_label: int = 1

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.instance_label <= 0:
            raise ValueError("instance_label must be positive")
        px = np.asarray(self.pixels, dtype=bool)
        if px.ndim != 2:
            raise ValueError("mask raster must be 2-D")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.side == other.side
            and self.instance_label == other.instance_label
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


def warp_mask(mask: InstanceMask, flow) -> InstanceMask:
    """Transport every set pixel ``(x, y)`` to ``round(x + u, y + v)`` in the flow target.

    Targets outside the image are dropped. Raises :class:`EmptyPrediction`
    if nothing lands inside the image.
    """
    if (flow.source_frame, flow.source_side) != (mask.frame_index, mask.side):
        raise ValueError(
            f"flow source ({flow.source_frame}, {flow.source_side}) "
            f"does not match mask ({mask.frame_index}, {mask.side})"
        )
    if flow.shape != mask.shape:
        raise ValueError(f"flow shape {flow.shape} != mask shape {mask.shape}")
    h, w = mask.shape
    ys, xs = np.nonzero(mask.pixels)
    uv = flow.data[ys, xs].astype(float)
    tx = np.floor(xs + uv[:, 0] + 0.5).astype(np.int64)
    ty = np.floor(ys + uv[:, 1] + 0.5).astype(np.int64)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    if not np.any(inside):
        raise EmptyPrediction(f"all pixels of mask {mask.instance_label} left the image")
    out = np.zeros((h, w), dtype=bool)
    out[ty[inside], tx[inside]] = True
    return InstanceMask(flow.target_frame, flow.target_side, out, mask.instance_label)


def overlap(pred: InstanceMask, det: InstanceMask, mode: str = "iou") -> float:
    """Overlap score in [0, 1].

    ``mode="iou"`` is intersection over union (symmetric);
    ``mode="iop"`` is intersection over the prediction's area.
    """
    if pred.shape != det.shape:
        raise ValueError(f"raster shapes differ: {pred.shape} vs {det.shape}")
    inter = np.count_nonzero(pred.pixels & det.pixels)
    if mode == "iou":
        denom = np.count_nonzero(pred.pixels | det.pixels)
    elif mode == "iop":
        denom = np.count_nonzero(pred.pixels)
    else:
        raise ValueError(f"unknown overlap mode {mode!r}")
    return float(inter / denom) if denom else 0.0


def masks_from_label_image(labels, frame_index: int, side: str, min_area: int = MIN_MASK_AREA) -> list:
    """Split a label raster (0 = unlabeled) into detections, dropping tiny ones."""
    labels = np.asarray(labels)
    out = []
    for lab in np.unique(labels):
        if lab == 0:
            continue
        px = labels == lab
        if np.count_nonzero(px) >= min_area:
            out.append(InstanceMask(frame_index, side, px, int(lab)))
    return out


def masks_to_label_image(masks, shape=None) -> np.ndarray:
    """Inverse of :func:`masks_from_label_image`; later masks overwrite earlier ones."""
    if shape is None:
        shape = masks[0].shape
    out = np.zeros(shape, dtype=np.int64)
    for m in masks:
        out[m.pixels] = m.instance_label
    return out


# PGM (P5) label rasters


def write_pgm(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("PGM raster must be 2-D")
    if labels.min(initial=0) < 0:
        raise ValueError("labels must be non-negative")
    maxval = 255 if labels.max(initial=0) <= 255 else 65535
    if labels.max(initial=0) > 65535:
        raise ValueError("labels above 65535 cannot be stored in PGM")
    h, w = labels.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    body = labels.astype(">u2" if maxval > 255 else "u1").tobytes()
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if data[:2] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _pgm_tokens(data, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ParseError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * dtype.itemsize
    if len(data) - offset < n:
        raise ParseError(f"{path}: truncated PGM body")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).reshape(h, w).astype(np.int64)
