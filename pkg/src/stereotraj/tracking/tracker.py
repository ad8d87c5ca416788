"""Stereo multi-object tracking on pixel level.

Tracks live in the left image sequence. Each temporal step warps the
current left masks into the next left image with optical flow and
associates the predictions with the next detections; each stereo step warps
the left masks into the right image of the same frame and attaches the
matching right detections to the tracks. The two association problems are
solved one after the other as 2-D assignments rather than as one joint
4-D matching.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import EmptyPrediction, FrameOrderError
from .assignment import assign
from .masks import InstanceMask, overlap, warp_mask

ACTIVE = "active"
LOST = "lost"


@dataclass(frozen=True)
class Prediction:
    track_id: int
    mask: InstanceMask | None  # None when the warped mask left the image


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Overlap scores, rows = predictions (track ids), columns = detections."""

    values: np.ndarray
    row_ids: tuple
    col_ids: tuple

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class Track:
    track_id: int
    category: str = "object"
    left_masks: dict = field(default_factory=dict)
    right_masks: dict = field(default_factory=dict)
    status: str = ACTIVE
    lost_count: int = 0
    last_mask: InstanceMask | None = None  # most recent left mask or carried prediction

    def copy(self) -> "Track":
        return dataclasses.replace(self, left_masks=dict(self.left_masks), right_masks=dict(self.right_masks))


@dataclass
class TrackerState:
    frame_index: int
    tracks: dict = field(default_factory=dict)
    finished: dict = field(default_factory=dict)
    next_id: int = 1

    def copy(self) -> "TrackerState":
        return TrackerState(
            self.frame_index,
            {k: t.copy() for k, t in self.tracks.items()},
            dict(self.finished),
            self.next_id,
        )

    @property
    def active_ids(self) -> list:
        return sorted(k for k, t in self.tracks.items() if t.status == ACTIVE)

    def all_tracks(self) -> dict:
        out = dict(self.finished)
        out.update(self.tracks)
        return out


def build_affinity(preds, dets, mode: str = "iou") -> AffinityMatrix:
    """Entry ``(u, v)`` is the overlap of prediction ``u`` with detection ``v``."""
    preds = list(preds)
    dets = list(dets)
    values = np.zeros((len(preds), len(dets)))
    for u, p in enumerate(preds):
        if p.mask is None:
            continue
        for v, d in enumerate(dets):
            values[u, v] = overlap(p.mask, d, mode)
    return AffinityMatrix(values, tuple(p.track_id for p in preds), tuple(range(len(dets))))


def predict(masks, flow) -> list:
    """Warp ``(track_id, mask)`` pairs with ``flow``; empty warps become ``mask=None``."""
    out = []
    for tid, m in masks:
        try:
            out.append(Prediction(tid, warp_mask(m, flow)))
        except EmptyPrediction:
            out.append(Prediction(tid, None))
    return out


def init_state(dets_left, frame_index: int = 0, category: str = "object") -> TrackerState:
    """Start one track per left detection of the first frame."""
    state = TrackerState(frame_index)
    for det in dets_left:
        if det.frame_index != frame_index or det.side != "left":
            raise FrameOrderError(f"detection ({det.frame_index}, {det.side}) is not from left frame {frame_index}")
        _spawn(state, det, category)
    return state


def _spawn(state: TrackerState, det: InstanceMask, category: str) -> None:
    tid = state.next_id
    state.next_id += 1
    state.tracks[tid] = Track(tid, category, {det.frame_index: det}, last_mask=det)


def step_temporal(
    state: TrackerState,
    flow_ln,
    dets_next_left,
    *,
    min_overlap: float = 0.3,
    max_lost: int = 2,
    mode: str = "iou",
    category: str = "object",
) -> TrackerState:
    """Advance the tracker from left frame ``i`` to left frame ``i + 1``."""
    i = state.frame_index
    if (flow_ln.source_frame, flow_ln.source_side, flow_ln.target_frame, flow_ln.target_side) != (
        i,
        "left",
        i + 1,
        "left",
    ):
        raise FrameOrderError(
            f"expected flow left {i} -> left {i + 1}, got "
            f"{flow_ln.source_side} {flow_ln.source_frame} -> {flow_ln.target_side} {flow_ln.target_frame}"
        )
    dets = list(dets_next_left)
    for d in dets:
        if d.frame_index != i + 1 or d.side != "left":
            raise FrameOrderError(f"detection ({d.frame_index}, {d.side}) is not from left frame {i + 1}")

    new = state.copy()
    new.frame_index = i + 1
    tids = sorted(new.tracks)
    preds = predict([(t, new.tracks[t].last_mask) for t in tids], flow_ln)
    aff = build_affinity(preds, dets, mode)
    pairs = assign(aff, min_overlap)

    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    for r, c in pairs:
        tr = new.tracks[aff.row_ids[r]]
        tr.left_masks[i + 1] = dets[c]
        tr.last_mask = dets[c]
        tr.status = ACTIVE
        tr.lost_count = 0
    for r, pred in enumerate(preds):
        if r in matched_rows:
            continue
        tr = new.tracks[pred.track_id]
        tr.lost_count += 1
        tr.status = LOST
        if tr.lost_count > max_lost or pred.mask is None:
            new.finished[tr.track_id] = new.tracks.pop(tr.track_id)
        else:
            tr.last_mask = pred.mask
    for c, det in enumerate(dets):
        if c not in matched_cols:
            _spawn(new, det, category)
    return new


def associate_stereo(
    state: TrackerState,
    flow_lr,
    dets_right,
    *,
    min_overlap: float = 0.3,
    mode: str = "iou",
) -> TrackerState:
    """Attach right-image detections of the current frame to the left tracks.

    Only tracks with a left mask in the current frame take part. Unmatched
    right detections are discarded.
    """
    i = state.frame_index
    if (flow_lr.source_frame, flow_lr.source_side, flow_lr.target_frame, flow_lr.target_side) != (
        i,
        "left",
        i,
        "right",
    ):
        raise FrameOrderError(f"expected flow left {i} -> right {i}")
    dets = list(dets_right)
    for d in dets:
        if d.frame_index != i or d.side != "right":
            raise FrameOrderError(f"detection ({d.frame_index}, {d.side}) is not from right frame {i}")
    new = state.copy()
    tids = [t for t in sorted(new.tracks) if i in new.tracks[t].left_masks]
    preds = predict([(t, new.tracks[t].left_masks[i]) for t in tids], flow_lr)
    aff = build_affinity(preds, dets, mode)
    for r, c in assign(aff, min_overlap):
        new.tracks[aff.row_ids[r]].right_masks[i] = dets[c]
    return new


def track_sequence(
    dets_left,
    dets_right,
    flows_ln,
    flows_lr,
    *,
    min_overlap: float = 0.3,
    max_lost: int = 2,
    mode: str = "iou",
    first_frame: int = 0,
) -> TrackerState:
    """Run the tracker over a whole sequence.

    ``dets_left[k]``/``dets_right[k]`` are the detections of frame
    ``first_frame + k``; ``flows_ln[k]`` maps left ``k`` to left ``k + 1`` and
    ``flows_lr[k]`` maps left ``k`` to right ``k``.
    """
    n = len(dets_left)
    if len(dets_right) != n or len(flows_lr) != n or len(flows_ln) < n - 1:
        raise ValueError("sequence inputs have inconsistent lengths")
    state = init_state(dets_left[0], first_frame)
    state = associate_stereo(state, flows_lr[0], dets_right[0], min_overlap=min_overlap, mode=mode)
    for k in range(1, n):
        state = step_temporal(state, flows_ln[k - 1], dets_left[k], min_overlap=min_overlap, max_lost=max_lost, mode=mode)
        state = associate_stereo(state, flows_lr[k], dets_right[k], min_overlap=min_overlap, mode=mode)
    return state
