"""Reconstruction data model, JSON file format and object/background frame pairing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import DanglingReference, DuplicateCamera, IoError, NoCommonFrames, ParseError
from .geometry import ROTATION_TOLERANCE, CameraPose, PinholeIntrinsics, nearest_rotation, rotation_error

KINDS = ("object", "background")
SIDES = ("left", "right")


@dataclass(frozen=True)
class CameraRecord:
    camera_id: int
    frame_index: int
    side: str
    pose: CameraPose
    intrinsics: PinholeIntrinsics

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be left or right, got {self.side!r}")


@dataclass(frozen=True, eq=False)
class PointRecord:
    point_id: int
    position: np.ndarray
    observations: tuple  # of (camera_id, x, y)

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(-1)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError(f"point {self.point_id}: position must be a finite 3-vector")
        p.setflags(write=False)
        object.__setattr__(self, "position", p)
        obs = tuple((int(c), float(x), float(y)) for c, x, y in self.observations)
        object.__setattr__(self, "observations", obs)

    def __eq__(self, other):
        if not isinstance(other, PointRecord):
            return NotImplemented
        return (
            self.point_id == other.point_id
            and np.array_equal(self.position, other.position)
            and self.observations == other.observations
        )

    __hash__ = None


@dataclass(frozen=True)
class Reconstruction:
    """Cameras (indexed by frame and side) plus triangulated points."""

    kind: str
    cameras: tuple
    points: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(sorted(self.cameras, key=lambda c: c.camera_id)))
        object.__setattr__(self, "points", tuple(sorted(self.points, key=lambda p: p.point_id)))
        self._validate()

    def _validate(self) -> None:
        if self.kind not in KINDS:
            raise ParseError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.cameras:
            raise ParseError("reconstruction has no cameras")
        ids, slots = set(), set()
        for cam in self.cameras:
            if cam.camera_id in ids:
                raise DuplicateCamera(f"camera id {cam.camera_id} appears twice")
            slot = (cam.frame_index, cam.side)
            if slot in slots:
                raise DuplicateCamera(f"two cameras registered for frame {slot[0]} {slot[1]}")
            ids.add(cam.camera_id)
            slots.add(slot)
        pids = set()
        for pt in self.points:
            if pt.point_id in pids:
                raise ParseError(f"point id {pt.point_id} appears twice")
            pids.add(pt.point_id)
            if len(pt.observations) < 2:
                raise ParseError(f"point {pt.point_id} has fewer than 2 observations")
            for cid, x, y in pt.observations:
                if cid not in ids:
                    raise DanglingReference(f"point {pt.point_id} references unknown camera_id {cid}")
                if not (np.isfinite(x) and np.isfinite(y)):
                    raise ParseError(f"point {pt.point_id}: non-finite observation")

    @cached_property
    def camera_index(self) -> dict:
        return {c.camera_id: c for c in self.cameras}

    @cached_property
    def slot_index(self) -> dict:
        return {(c.frame_index, c.side): c for c in self.cameras}

    def camera(self, camera_id: int) -> CameraRecord:
        return self.camera_index[camera_id]

    def camera_at(self, frame_index: int, side: str) -> CameraRecord | None:
        return self.slot_index.get((frame_index, side))

    @property
    def frames(self) -> list:
        return sorted({c.frame_index for c in self.cameras})

    @property
    def stereo_frames(self) -> list:
        return [f for f in self.frames if (f, "left") in self.slot_index and (f, "right") in self.slot_index]

    def point_array(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.array([p.position for p in self.points])

    def baselines(self) -> dict:
        """Per stereo frame: distance between left and right camera centers."""
        out = {}
        for f in self.stereo_frames:
            out[f] = float(np.linalg.norm(self.slot_index[(f, "left")].pose.center - self.slot_index[(f, "right")].pose.center))
        return out

    def with_geometry(self, poses: dict | None = None, positions: dict | None = None) -> "Reconstruction":
        """Copy with replaced camera poses (by camera id) and point positions (by point id)."""
        poses = poses or {}
        positions = positions or {}
        cams = tuple(replace(c, pose=poses[c.camera_id]) if c.camera_id in poses else c for c in self.cameras)
        pts = tuple(
            PointRecord(p.point_id, positions[p.point_id], p.observations) if p.point_id in positions else p
            for p in self.points
        )
        return Reconstruction(self.kind, cams, pts)

    def subset_frames(self, frames) -> "Reconstruction":
        """Drop cameras outside ``frames`` and the observations made by them.

        Points left with fewer than two observations are dropped too.
        """
        frames = set(frames)
        cams = tuple(c for c in self.cameras if c.frame_index in frames)
        keep = {c.camera_id for c in cams}
        pts = []
        for p in self.points:
            obs = tuple(o for o in p.observations if o[0] in keep)
            if len(obs) >= 2:
                pts.append(PointRecord(p.point_id, p.position, obs))
        return Reconstruction(self.kind, cams, tuple(pts))

    def __eq__(self, other):
        if not isinstance(other, Reconstruction):
            return NotImplemented
        return self.kind == other.kind and self.cameras == other.cameras and self.points == other.points

    __hash__ = None


# file format


def _schema() -> dict:
    text = resources.files("stereotraj").joinpath("schemas/reconstruction.schema.json").read_text()
    return json.loads(text)


def _reject_constant(name):
    raise ParseError(f"non-finite number {name} in reconstruction file")


def to_dict(recon: Reconstruction) -> dict:
    return {
        "kind": recon.kind,
        "cameras": [
            {
                "id": c.camera_id,
                "frame": c.frame_index,
                "side": c.side,
                "rotation": [float(v) for v in c.pose.rotation.reshape(-1)],
                "center": [float(v) for v in c.pose.center],
                "intrinsics": [float(v) for v in c.intrinsics.as_tuple()],
            }
            for c in recon.cameras
        ],
        "points": [
            {
                "id": p.point_id,
                "xyz": [float(v) for v in p.position],
                "observations": [[c, x, y] for c, x, y in p.observations],
            }
            for p in recon.points
        ],
    }


def from_dict(doc) -> Reconstruction:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path)
        raise ParseError(f"invalid reconstruction at '{loc}': {exc.message}") from exc
    cams = []
    for entry in doc["cameras"]:
        R = np.array(entry["rotation"], dtype=float).reshape(3, 3)
        err = rotation_error(R)
        if err > 1e-6:
            raise ParseError(f"camera {entry['id']}: rotation is not orthonormal (error {err:.2e})")
        if err > ROTATION_TOLERANCE:
            R = nearest_rotation(R)
        try:
            cams.append(
                CameraRecord(
                    int(entry["id"]),
                    int(entry["frame"]),
                    entry["side"],
                    CameraPose(R, entry["center"]),
                    PinholeIntrinsics(*(float(v) for v in entry["intrinsics"])),
                )
            )
        except ValueError as exc:
            raise ParseError(f"camera {entry['id']}: {exc}") from exc
    pts = []
    for entry in doc["points"]:
        try:
            pts.append(PointRecord(int(entry["id"]), entry["xyz"], entry["observations"]))
        except ValueError as exc:
            raise ParseError(str(exc)) from exc
    return Reconstruction(doc["kind"], tuple(cams), tuple(pts))


def dumps(recon: Reconstruction) -> str:
    return json.dumps(to_dict(recon), indent=1, allow_nan=False) + "\n"


def save_reconstruction(recon: Reconstruction, path) -> None:
    try:
        Path(path).write_text(dumps(recon))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_reconstruction(path) -> Reconstruction:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return from_dict(doc)
    except ParseError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


# pairing


@dataclass(frozen=True)
class FramePair:
    frame_index: int
    obj_left: int
    obj_right: int
    bg_left: int
    bg_right: int


def pair_frames(obj: Reconstruction, bg: Reconstruction) -> list:
    """Frames where both reconstructions registered both stereo cameras.

    Cameras of any other frame have no counterpart and take no further part.
    """
    common = sorted(set(obj.stereo_frames) & set(bg.stereo_frames))
    if not common:
        raise NoCommonFrames(f"{obj.kind} and {bg.kind} reconstructions share no complete stereo frame")
    return [
        FramePair(
            f,
            obj.slot_index[(f, "left")].camera_id,
            obj.slot_index[(f, "right")].camera_id,
            bg.slot_index[(f, "left")].camera_id,
            bg.slot_index[(f, "right")].camera_id,
        )
        for f in common
    ]
