"""Stereo feature pairing and baseline-based scale resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DegenerateBaseline, NonPositiveScale, NoStereoFrames
from ..geometry import CameraPose
from ..recon import Reconstruction

Y_TOLERANCE = 3.0


@dataclass(frozen=True)
class StereoObservation:
    """Left/right observation pair of one point in one frame, sharing ``v``."""

    point_id: int
    frame_index: int
    u_left: float
    u_right: float
    v: float
    left_camera_id: int
    right_camera_id: int


@dataclass(frozen=True)
class MonoObservation:
    point_id: int
    frame_index: int
    side: str
    camera_id: int
    x: float
    y: float


def pair_stereo_features(recon: Reconstruction, y_tolerance: float = Y_TOLERANCE):
    """Split observations into stereo pairs and leftover mono observations.

    A point seen in the left and right image of the same frame becomes a
    :class:`StereoObservation` when the two ``y`` coordinates differ by less
    than ``y_tolerance`` pixels; ``v`` is their mean. Every observation ends
    up in exactly one of the two returned lists.
    """
    stereo, mono = [], []
    for pt in recon.points:
        by_slot = {}
        extra = []
        for cid, x, y in pt.observations:
            cam = recon.camera(cid)
            slot = (cam.frame_index, cam.side)
            if slot in by_slot:
                extra.append((cam, x, y))
            else:
                by_slot[slot] = (cam, x, y)
        for (frame, side), (cam, x, y) in sorted(by_slot.items()):
            if side == "right" and (frame, "left") in by_slot:
                continue  # handled with its left partner
            other = by_slot.get((frame, "right")) if side == "left" else None
            if other is not None and abs(y - other[2]) < y_tolerance:
                stereo.append(
                    StereoObservation(pt.point_id, frame, x, other[1], (y + other[2]) / 2.0, cam.camera_id, other[0].camera_id)
                )
                continue
            mono.append(MonoObservation(pt.point_id, frame, side, cam.camera_id, x, y))
            if other is not None:
                mono.append(MonoObservation(pt.point_id, frame, "right", other[0].camera_id, other[1], other[2]))
        for cam, x, y in extra:
            mono.append(MonoObservation(pt.point_id, cam.frame_index, cam.side, cam.camera_id, x, y))
    return stereo, mono


def estimate_scale(recon: Reconstruction, nominal_baseline: float = 1.0) -> float:
    """Factor that brings the median per-frame stereo baseline to ``nominal_baseline``.

    The median keeps a few badly registered cameras from skewing the result.
    """
    baselines = list(recon.baselines().values())
    if not baselines:
        raise NoStereoFrames(f"{recon.kind} reconstruction has no frame with both stereo cameras")
    med = float(np.median(baselines))
    if not med > 0.0:
        raise DegenerateBaseline(f"median stereo baseline is {med}")
    return nominal_baseline / med


def apply_scale(recon: Reconstruction, s: float) -> Reconstruction:
    """Scale camera centers and points by ``s``; rotations and observations are kept."""
    if not s > 0.0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    if s == 1.0:
        return recon
    poses = {c.camera_id: CameraPose(c.pose.rotation, c.pose.center * s) for c in recon.cameras}
    positions = {p.point_id: p.position * s for p in recon.points}
    return recon.with_geometry(poses=poses, positions=positions)
