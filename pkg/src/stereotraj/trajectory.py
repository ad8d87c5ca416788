"""Object trajectories in the background frame.

For every paired frame the object points are moved from the object
reconstruction frame into the left object camera, then out of the left
background camera into the background frame:

    o_cam = R_obj (o - c_obj)
    o_bg  = c_bg + R_bg^T o_cam
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import IoError, ParseError, ScaleMismatch, UnknownCamera
from .geometry import camera_to_world, world_to_camera
from .recon import Reconstruction

SCALE_MISMATCH_TOLERANCE = 0.01


@dataclass(frozen=True, eq=False)
class Trajectory:
    frames: np.ndarray  # (F,)
    point_ids: np.ndarray  # (P,)
    positions: np.ndarray  # (F, P, 3) object points in the background frame
    object_rotations: np.ndarray  # (F, 3, 3): x_bg = R @ x_obj + t
    object_translations: np.ndarray  # (F, 3)
    bg_left_centers: np.ndarray  # (F, 3)
    bg_right_centers: np.ndarray  # (F, 3)

    def __len__(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        return {
            "frames": [int(f) for f in self.frames],
            "point_ids": [int(p) for p in self.point_ids],
            "positions": self.positions.tolist(),
            "object_rotations": self.object_rotations.tolist(),
            "object_translations": self.object_translations.tolist(),
            "bg_left_centers": self.bg_left_centers.tolist(),
            "bg_right_centers": self.bg_right_centers.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "Trajectory":
        try:
            F = len(doc["frames"])
            return cls(
                np.array(doc["frames"], dtype=np.int64),
                np.array(doc["point_ids"], dtype=np.int64),
                np.array(doc["positions"], dtype=float).reshape(F, -1, 3),
                np.array(doc["object_rotations"], dtype=float).reshape(F, 3, 3),
                np.array(doc["object_translations"], dtype=float).reshape(F, 3),
                np.array(doc["bg_left_centers"], dtype=float).reshape(F, 3),
                np.array(doc["bg_right_centers"], dtype=float).reshape(F, 3),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid trajectory document: {exc}") from exc


def object_points_in_camera(obj: Reconstruction, camera_id: int):
    """``(point_ids, points)`` of the object reconstruction in the frame of one camera."""
    try:
        cam = obj.camera(camera_id)
    except KeyError:
        raise UnknownCamera(f"camera {camera_id} is not part of the {obj.kind} reconstruction") from None
    ids = np.array([p.point_id for p in obj.points], dtype=np.int64)
    return ids, world_to_camera(cam.pose, obj.point_array())


def _median_baseline(recon: Reconstruction, frames) -> float:
    b = recon.baselines()
    return float(np.median([b[f] for f in frames]))


def compose_trajectory(obj: Reconstruction, bg: Reconstruction, pairs) -> Trajectory:
    """Map the object points into the background frame for every frame pair.

    Both reconstructions must already share the nominal stereo baseline;
    a median-baseline disagreement above 1% raises :class:`ScaleMismatch`.
    """
    pairs = sorted(pairs, key=lambda p: p.frame_index)
    if not pairs:
        raise ValueError("no frame pairs to compose")
    frames = [p.frame_index for p in pairs]
    b_obj, b_bg = _median_baseline(obj, frames), _median_baseline(bg, frames)
    if abs(b_obj / b_bg - 1.0) > SCALE_MISMATCH_TOLERANCE:
        raise ScaleMismatch(
            f"median stereo baselines differ: object {b_obj:.6g} vs background {b_bg:.6g}; refine both first"
        )
    positions, rots, trans, left_c, right_c = [], [], [], [], []
    ids = None
    for p in pairs:
        ids, o_cam = object_points_in_camera(obj, p.obj_left)
        bg_pose = bg.camera(p.bg_left).pose
        positions.append(camera_to_world(bg_pose, o_cam))
        obj_pose = obj.camera(p.obj_left).pose
        R = bg_pose.rotation.T @ obj_pose.rotation
        rots.append(R)
        trans.append(bg_pose.center - R @ obj_pose.center)
        left_c.append(bg_pose.center)
        right_c.append(bg.camera(p.bg_right).pose.center)
    return Trajectory(
        np.array(frames, dtype=np.int64),
        ids,
        np.array(positions).reshape(len(frames), len(ids), 3),
        np.array(rots),
        np.array(trans),
        np.array(left_c),
        np.array(right_c),
    )


# export


def _frame_color(k: int, n: int) -> tuple:
    a = k / max(n - 1, 1)
    return (int(round(255 * a)), int(round(255 * (1.0 - abs(2.0 * a - 1.0)))), int(round(255 * (1.0 - a))))


def write_csv(traj: Trajectory, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "point_id", "x", "y", "z"])
            for k, f in enumerate(traj.frames):
                for j, pid in enumerate(traj.point_ids):
                    x, y, z = traj.positions[k, j]
                    w.writerow([int(f), int(pid), f"{x:.9g}", f"{y:.9g}", f"{z:.9g}"])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    """``(frames, point_ids, xyz)`` rows of a trajectory CSV."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        frames = np.array([int(r["frame"]) for r in rows], dtype=np.int64)
        ids = np.array([int(r["point_id"]) for r in rows], dtype=np.int64)
        xyz = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: malformed trajectory CSV: {exc}") from exc
    return frames, ids, xyz


def write_ply(traj: Trajectory, path) -> None:
    """Binary little-endian PLY; one vertex per frame and point, colored by frame."""
    n = len(traj.frames) * len(traj.point_ids)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property int frame\n"
        "end_header\n"
    ).encode("ascii")
    rec = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("r", "u1"), ("g", "u1"), ("b", "u1"), ("frame", "<i4")])
    data = np.zeros(n, dtype=rec)
    P = len(traj.point_ids)
    for k, f in enumerate(traj.frames):
        sl = slice(k * P, (k + 1) * P)
        data["x"][sl], data["y"][sl], data["z"][sl] = traj.positions[k].T
        data["r"][sl], data["g"][sl], data["b"][sl] = _frame_color(k, len(traj.frames))
        data["frame"][sl] = f
    try:
        Path(path).write_bytes(header + data.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ply_vertex_count(path) -> int:
    try:
        with open(path, "rb") as fh:
            for raw in fh:
                line = raw.decode("ascii", "replace").strip()
                if line.startswith("element vertex"):
                    return int(line.split()[2])
                if line == "end_header":
                    break
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    raise ParseError(f"{path}: no vertex element")


def export_trajectory(traj: Trajectory, path, format: str = "csv") -> list:
    """Write ``traj`` as ``csv``, ``ply`` or ``both`` (path suffix is replaced); returns written paths."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    path = Path(path)
    out = []
    if format in ("csv", "both"):
        p = path.with_suffix(".csv") if format == "both" else path
        write_csv(traj, p)
        out.append(p)
    if format in ("ply", "both"):
        p = path.with_suffix(".ply") if format == "both" else path
        write_ply(traj, p)
        out.append(p)
    if not out:
        raise ValueError(f"unknown export format {format!r}")
    return out
