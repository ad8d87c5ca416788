"""Synthetic stereo scenes with ground truth.

A scene is a moving rectified stereo rig observing static background points
and one or more rigid box-shaped objects. From a scene we render instance
label rasters, exact dense flow fields, and perturbed initial object and
background reconstructions, and we score estimated trajectories against
the truth.

World frame: the left camera of frame 0 before any gauge perturbation;
x right, y down (the ground is at ``y = camera_height``), z forward.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import FrameMismatch, InfeasibleScene, IoError, ParseError
from .geometry import CameraPose, PinholeIntrinsics, rigid_align, rot_y, so3_exp
from .recon import CameraRecord, PointRecord, Reconstruction
from .tracking.flow import FlowField
from .tracking.masks import masks_from_label_image

MOTIONS = ("linear", "arc", "piecewise", "static")
NEAR_CLIP = 0.5


@dataclass
class SceneConfig:
    n_frames: int = 10
    n_objects: int = 1
    n_object_points: int = 40
    n_background_points: int = 80
    image_width: int = 480
    image_height: int = 360
    focal: float = 500.0
    baseline: float = 0.6
    camera_height: float = 1.5
    rig_speed: float = 0.8
    rig_yaw_rate: float = 0.003
    motion: str = "linear"
    object_speed: float = 1.0
    arc_radius: float = 15.0
    object_size: tuple = (1.8, 1.5, 4.0)  # width (x), height (y), length (z)
    object_depth: tuple = (8.0, 12.0)
    lateral_spread: float = 0.03  # initial object offset, fraction of the horizontal field of view
    heading_spread: float = 0.05  # radians
    crossing: bool = False
    max_attempts: int = 200

    def __post_init__(self):
        self.object_size = tuple(float(v) for v in self.object_size)
        self.object_depth = tuple(float(v) for v in self.object_depth)
        if self.n_frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        if self.n_object_points < 4:
            raise ValueError("need at least 4 object points")
        if self.n_background_points < 8:
            raise ValueError("need at least 8 background points")
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}")
        if self.n_objects < 1:
            raise ValueError("need at least one object")
        if self.crossing and self.n_objects < 2:
            raise ValueError("a crossing scene needs at least two objects")
        if self.baseline <= 0 or self.focal <= 0:
            raise ValueError("baseline and focal length must be positive")

    @property
    def intrinsics(self) -> PinholeIntrinsics:
        return PinholeIntrinsics(self.focal, self.focal, (self.image_width - 1) / 2.0, (self.image_height - 1) / 2.0)


@dataclass
class NoiseConfig:
    pixel_sigma: float = 0.0
    pose_rot_sigma: float = 0.0  # degrees
    pose_trans_sigma: float = 0.0  # fraction of the reconstruction extent
    scale_perturbation: tuple = (1.0, 1.0)  # object reconstruction scale range (log-uniform)
    background_scale: float = 1.0
    outlier_camera_count: int = 0  # grossly wrong cameras in the object reconstruction
    flow_sigma: float = 0.0
    random_gauge: bool = True

    def __post_init__(self):
        if isinstance(self.scale_perturbation, (int, float)):
            self.scale_perturbation = (float(self.scale_perturbation),) * 2
        self.scale_perturbation = tuple(float(v) for v in self.scale_perturbation)
        vals = (self.pixel_sigma, self.pose_rot_sigma, self.pose_trans_sigma, self.outlier_camera_count, self.flow_sigma)
        if min(vals) < 0 or min(self.scale_perturbation) <= 0 or self.background_scale <= 0:
            raise ValueError("noise parameters must be non-negative and scales positive")
        lo, hi = self.scale_perturbation
        if lo > hi:
            raise ValueError("scale_perturbation range is reversed")


@dataclass
class ObjectTruth:
    """Box-shaped rigid object; ``X_world = rotations[i] @ X_obj + translations[i]``."""

    points: np.ndarray  # (N, 3) in the object frame, centroid at the origin
    half_size: np.ndarray  # (3,)
    rotations: np.ndarray  # (F, 3, 3)
    translations: np.ndarray  # (F, 3)
    motion: dict = field(default_factory=dict)

    def world_points(self, i: int) -> np.ndarray:
        return self.points @ self.rotations[i].T + self.translations[i]


@dataclass
class SceneGroundTruth:
    config: SceneConfig
    seed: int
    rig_rotations: np.ndarray  # (F, 3, 3) world-to-camera, left camera
    rig_centers: np.ndarray  # (F, 3) left camera centers
    background_points: np.ndarray  # (B, 3)
    objects: list

    @property
    def n_frames(self) -> int:
        return len(self.rig_centers)

    @property
    def intrinsics(self) -> PinholeIntrinsics:
        return self.config.intrinsics

    @property
    def baseline(self) -> float:
        return self.config.baseline

    @property
    def shape(self) -> tuple:
        return (self.config.image_height, self.config.image_width)

    def pose(self, i: int, side: str = "left") -> CameraPose:
        R = self.rig_rotations[i]
        c = self.rig_centers[i]
        if side == "right":
            c = c + R.T @ np.array([self.baseline, 0.0, 0.0])
        return CameraPose(R, c)

    def object_frame_pose(self, k: int, i: int, side: str = "left") -> CameraPose:
        """Camera pose expressed in the frame of object ``k``."""
        cam = self.pose(i, side)
        obj = self.objects[k]
        Ro, to = obj.rotations[i], obj.translations[i]
        return CameraPose(cam.rotation @ Ro, Ro.T @ (cam.center - to))

    def visible_faces(self, k: int, i: int, side: str = "left") -> frozenset:
        """Box faces of object ``k`` facing the camera, as ``(axis, sign)`` pairs.

        Two views with different face sets see surface the other cannot,
        so no flow field maps one silhouette exactly onto the other.
        """
        c = self.object_frame_pose(k, i, side).center
        h = self.objects[k].half_size
        return frozenset((a, sg) for a in range(3) for sg in (-1, 1) if sg * c[a] > h[a])

    def object_path_length(self, k: int = 0) -> float:
        t = self.objects[k].translations
        return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "seed": self.seed,
            "rig_rotations": self.rig_rotations.tolist(),
            "rig_centers": self.rig_centers.tolist(),
            "background_points": self.background_points.tolist(),
            "objects": [
                {
                    "points": o.points.tolist(),
                    "half_size": o.half_size.tolist(),
                    "rotations": o.rotations.tolist(),
                    "translations": o.translations.tolist(),
                    "motion": o.motion,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, doc) -> "SceneGroundTruth":
        try:
            cfg = SceneConfig(**doc["config"])
            objects = [
                ObjectTruth(
                    np.array(o["points"], float),
                    np.array(o["half_size"], float),
                    np.array(o["rotations"], float),
                    np.array(o["translations"], float),
                    o.get("motion", {}),
                )
                for o in doc["objects"]
            ]
            return cls(
                cfg,
                int(doc["seed"]),
                np.array(doc["rig_rotations"], float),
                np.array(doc["rig_centers"], float),
                np.array(doc["background_points"], float),
                objects,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid scene document: {exc}") from exc


def save_scene(scene: SceneGroundTruth, path) -> None:
    try:
        Path(path).write_text(json.dumps(scene.to_dict()) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_scene(path) -> SceneGroundTruth:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return SceneGroundTruth.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    return type(default)(value)


def load_config_file(path, cls, section: str = "scene"):
    """Read a key-value file (``key = value`` lines, optional ``[section]``) into ``cls``.

    Keys not belonging to ``cls`` are ignored so one file can hold several sections.
    """
    parser = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not text.lstrip().startswith("["):
        text = f"[{section}]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    values = dict(parser[section]) if parser.has_section(section) else {}
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            try:
                kwargs[f.name] = _coerce(values[f.name], getattr(defaults, f.name))
            except ValueError as exc:
                raise ParseError(f"{path}: bad value for {f.name}: {values[f.name]!r}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


# scene generation


def _box_points(rng, half, n) -> np.ndarray:
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float) * half
    if n < 8:
        # alternate corners first: the first four span a tetrahedron
        return corners[[0, 3, 5, 6, 1, 2, 4, 7][:n]]
    m = n - 8
    face_axis = rng.integers(0, 3, m)
    face_sign = rng.choice([-1.0, 1.0], m)
    pts = rng.uniform(-1.0, 1.0, (m, 3))
    pts[np.arange(m), face_axis] = face_sign
    return np.vstack([corners, pts * half])


def _rig_trajectory(cfg: SceneConfig):
    rotations, centers = [], []
    c = np.zeros(3)
    for i in range(cfg.n_frames):
        yaw = i * cfg.rig_yaw_rate
        if i > 0:
            c = c + cfg.rig_speed * np.array([np.sin(yaw), 0.0, np.cos(yaw)])
        rotations.append(rot_y(yaw).T)
        centers.append(c.copy())
    return np.array(rotations), np.array(centers)


def _object_motion(cfg: SceneConfig, rng, start, heading, speed, motion, turn_sign):
    """Centroid positions and headings per frame for one motion family."""
    F = cfg.n_frames
    pos = np.zeros((F, 3))
    hdg = np.zeros(F)
    info = {"family": motion, "speed": speed}
    if motion == "static" or speed == 0.0:
        pos[:] = start
        hdg[:] = heading
        info["family"] = "static" if motion == "static" else motion
        return pos, hdg, info

    def forward(h):
        return np.array([np.sin(h), 0.0, np.cos(h)])

    if motion == "linear":
        for i in range(F):
            pos[i] = start + i * speed * forward(heading)
            hdg[i] = heading
        return pos, hdg, info

    r = cfg.arc_radius
    omega = turn_sign * speed / r  # heading change per frame
    if motion == "arc":
        turn_start = 0
    else:  # piecewise: straight, then arc
        turn_start = F // 2
    # straight part
    for i in range(turn_start + 1):
        pos[i] = start + i * speed * forward(heading)
        hdg[i] = heading
    p0, h0 = pos[turn_start].copy(), heading
    # circle center to the side of the heading; yaw about +y turns toward +x for positive angles
    right = np.array([np.cos(h0), 0.0, -np.sin(h0)])
    center = p0 + turn_sign * r * right
    for i in range(turn_start, F):
        h = h0 + omega * (i - turn_start)
        rvec = np.array([np.cos(h), 0.0, -np.sin(h)])
        pos[i] = center - turn_sign * r * rvec
        hdg[i] = h
    info.update({"arc_center": center.tolist(), "arc_radius": r, "turn_start": turn_start})
    return pos, hdg, info


def _in_image(cfg, uv) -> np.ndarray:
    return (uv[..., 0] >= 0) & (uv[..., 0] <= cfg.image_width - 1) & (uv[..., 1] >= 0) & (uv[..., 1] <= cfg.image_height - 1)


def _project_all(scene_like, pts, i, side):
    """Pixels and depth of world points in camera (i, side); invalid depths give NaN pixels."""
    R, c, intr, b = scene_like
    Ri, ci = R[i], c[i]
    if side == "right":
        ci = ci + Ri.T @ np.array([b, 0.0, 0.0])
    xc = (pts - ci) @ Ri.T
    z = xc[:, 2]
    zs = np.where(z > NEAR_CLIP, z, np.nan)
    uv = np.stack([intr.focal_x * xc[:, 0] / zs + intr.principal_x, intr.focal_y * xc[:, 1] / zs + intr.principal_y], 1)
    return uv, z


def _visible(cfg, rig, pts, i, side) -> np.ndarray:
    uv, z = _project_all(rig, pts, i, side)
    return (z > NEAR_CLIP) & _in_image(cfg, np.nan_to_num(uv, nan=-1.0))


def _place_objects(cfg, rng, rig):
    R, c, intr, b = rig
    half = np.array(cfg.object_size) / 2.0
    objects = []
    for k in range(cfg.n_objects):
        for _ in range(cfg.max_attempts):
            depth = rng.uniform(*cfg.object_depth)
            if cfg.crossing and k < 2:
                # two objects at different depths moving laterally toward each other
                depth = cfg.object_depth[0] + (cfg.object_depth[1] - cfg.object_depth[0]) * (0.15 if k == 0 else 0.85)
                side = -1.0 if k == 0 else 1.0
                # capped lateral speed keeps the heading, and so the box footprint, modest
                x_extent = min(0.2 * depth * cfg.image_width / cfg.focal, 0.075 * max(cfg.n_frames - 1, 1))
                start = np.array([side * x_extent, cfg.camera_height - half[1], depth])
                travel = 2.0 * x_extent / max(cfg.n_frames - 1, 1)
                lateral = -side * travel
                forward_speed = cfg.rig_speed
                vel = np.array([lateral, 0.0, forward_speed])
                speed = float(np.linalg.norm(vel))
                heading = float(np.arctan2(vel[0], vel[2]))
                motion = "linear"
                turn_sign = 1.0
            else:
                motion = cfg.motion
                speed = 0.0 if motion == "static" else cfg.object_speed * rng.uniform(0.8, 1.2)
                heading = rng.uniform(-cfg.heading_spread, cfg.heading_spread)
                turn_sign = rng.choice([-1.0, 1.0])
                # the rig must not overtake a slower object before the last frame
                depth += max(0.0, cfg.rig_speed - speed) * (cfg.n_frames - 1)
                x = 0.5 * cfg.baseline + rng.uniform(-cfg.lateral_spread, cfg.lateral_spread) * depth * cfg.image_width / cfg.focal
                start = np.array([x, cfg.camera_height - half[1], depth])
            pos, hdg, info = _object_motion(cfg, rng, start, heading, speed, motion, turn_sign)
            pts = _box_points(rng, half, cfg.n_object_points)
            rots = np.array([rot_y(h) for h in hdg])
            obj = ObjectTruth(pts, half, rots, pos, info)
            ok = all(
                np.all(_visible(cfg, rig, obj.world_points(i), i, s)) for i in range(cfg.n_frames) for s in ("left", "right")
            )
            if ok and not _collides(obj, objects, cfg.n_frames):
                objects.append(obj)
                break
        else:
            raise InfeasibleScene(
                f"could not place object {k} visibly within {cfg.max_attempts} attempts; "
                "widen lateral_spread or object_depth for multi-object scenes"
            )
    return objects


def _collides(obj, others, n_frames) -> bool:
    r = np.linalg.norm(obj.half_size)
    for o in others:
        ro = np.linalg.norm(o.half_size)
        d = np.linalg.norm(obj.translations - o.translations, axis=1)
        if np.any(d < r + ro):
            return True
    return False


def _background(cfg, rng, rig) -> np.ndarray:
    R, c, intr, b = rig
    F = cfg.n_frames
    out = []
    for _ in range(cfg.max_attempts):
        n = 4 * cfg.n_background_points
        mid = F // 2
        depth = rng.uniform(15.0, 60.0, n)
        u = rng.uniform(0, cfg.image_width - 1, n)
        v = rng.uniform(0, cfg.image_height - 1, n)
        x = (u - intr.principal_x) / intr.focal_x * depth
        y = np.minimum((v - intr.principal_y) / intr.focal_y * depth, cfg.camera_height)
        pts = np.stack([x, y, depth], 1) @ R[mid] + c[mid]
        count = np.zeros(n, int)
        for i in range(F):
            count += _visible(cfg, rig, pts, i, "left") & _visible(cfg, rig, pts, i, "right")
        out.extend(pts[count >= 2])
        if len(out) >= cfg.n_background_points:
            return np.array(out[: cfg.n_background_points])
    raise InfeasibleScene("could not place enough visible background points")


def generate_scene(config: SceneConfig | None = None, seed: int = 0) -> SceneGroundTruth:
    """Deterministic scene for ``(config, seed)``."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    R, c = _rig_trajectory(cfg)
    rig = (R, c, cfg.intrinsics, cfg.baseline)
    objects = _place_objects(cfg, rng, rig)
    bg = _background(cfg, rng, rig)
    return SceneGroundTruth(cfg, seed, R, c, bg, objects)


# rendering


def _rig_tuple(scene):
    return (scene.rig_rotations, scene.rig_centers, scene.intrinsics, scene.baseline)


def _pixel_grid(shape):
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(float), ys.astype(float)


def render_depth(scene: SceneGroundTruth, i: int, side: str):
    """Per-pixel object index (-1 = background) and depth along the optical axis.

    Objects are the solid boxes spanned by their points, so each mask is the
    convex hull of the projected object points; nearer objects hide farther ones.
    """
    cam = scene.pose(i, side)
    intr = scene.intrinsics
    h, w = scene.shape
    index = np.full(scene.shape, -1, dtype=np.int64)
    depth = np.full(scene.shape, np.inf)
    rig = _rig_tuple(scene)
    for k, obj in enumerate(scene.objects):
        Ro, to = obj.rotations[i], obj.translations[i]
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * obj.half_size
        uv, z = _project_all(rig, corners @ Ro.T + to, i, side)
        if np.all(np.isnan(uv)):
            continue
        if np.any(np.isnan(uv)):
            x0, y0, x1, y1 = 0, 0, w - 1, h - 1
        else:
            x0, y0 = np.floor(uv.min(0)).astype(int)
            x1, y1 = np.ceil(uv.max(0)).astype(int)
            x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w - 1), min(y1, h - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(float)
        d_cam = np.stack([(xs - intr.principal_x) / intr.focal_x, (ys - intr.principal_y) / intr.focal_y, np.ones_like(xs)], -1)
        # unnormalized ray: the ray parameter equals depth
        d = d_cam @ (cam.rotation @ Ro)
        o = Ro.T @ (cam.center - to)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-obj.half_size - o) / d
            t2 = (obj.half_size - o) / d
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tmin = np.max(np.minimum(t1, t2), axis=-1)
        tmax = np.min(np.maximum(t1, t2), axis=-1)
        win_depth = depth[y0 : y1 + 1, x0 : x1 + 1]
        closer = (tmin <= tmax) & (tmin > NEAR_CLIP) & (tmin < win_depth)
        index[y0 : y1 + 1, x0 : x1 + 1][closer] = k
        win_depth[closer] = tmin[closer]
    return index, depth


def label_image(scene, i, side) -> np.ndarray:
    """Instance labels: object ``k`` is labeled ``k + 1``; 0 is background."""
    index, _ = render_depth(scene, i, side)
    return index + 1


def _background_depth(scene, i) -> float:
    _, z = _project_all(_rig_tuple(scene), scene.background_points, i, "left")
    return float(np.median(z[z > NEAR_CLIP]))


def render_flow(scene: SceneGroundTruth, i: int, kind: str, rng=None, sigma: float = 0.0, cache=None) -> FlowField:
    """Exact flow from left ``i`` to left ``i + 1`` (``kind="ln"``) or to right ``i`` (``kind="lr"``).

    Object pixels move with their object; background pixels are treated as a
    fronto-parallel plane at the median background depth.
    """
    index, depth = cache if cache is not None else render_depth(scene, i, "left")
    intr = scene.intrinsics
    xs, ys = _pixel_grid(scene.shape)
    z = np.where(index >= 0, depth, _background_depth(scene, i))
    flow = np.zeros((*scene.shape, 2))
    if kind == "lr":
        flow[..., 0] = -intr.focal_x * scene.baseline / z
        target = (i, "right")
    elif kind == "ln":
        if i + 1 >= scene.n_frames:
            raise ValueError("no next frame")
        cam, nxt = scene.pose(i), scene.pose(i + 1)
        p_cam = np.stack([(xs - intr.principal_x) / intr.focal_x * z, (ys - intr.principal_y) / intr.focal_y * z, z], -1)
        p_world = p_cam @ cam.rotation + cam.center
        for k, obj in enumerate(scene.objects):
            sel = index == k
            if not np.any(sel):
                continue
            p_obj = (p_world[sel] - obj.translations[i]) @ obj.rotations[i]
            p_world[sel] = p_obj @ obj.rotations[i + 1].T + obj.translations[i + 1]
        q = (p_world - nxt.center) @ nxt.rotation.T
        ok = q[..., 2] > NEAR_CLIP
        qz = np.where(ok, q[..., 2], 1.0)
        flow[..., 0] = np.where(ok, intr.focal_x * q[..., 0] / qz + intr.principal_x - xs, 0.0)
        flow[..., 1] = np.where(ok, intr.focal_y * q[..., 1] / qz + intr.principal_y - ys, 0.0)
        target = (i + 1, "left")
    else:
        raise ValueError(f"unknown flow kind {kind!r}")
    if sigma > 0.0:
        flow = flow + (rng or np.random.default_rng(0)).normal(0.0, sigma, flow.shape)
    return FlowField(i, "left", *target, flow.astype(np.float32))


@dataclass
class RenderedObservations:
    labels_left: list  # per frame label raster
    labels_right: list
    flows_ln: list  # FlowField left i -> left i+1
    flows_lr: list  # FlowField left i -> right i
    object_recon: Reconstruction
    background_recon: Reconstruction
    object_scale: float
    background_scale: float
    outlier_cameras: list  # camera ids corrupted in the object reconstruction

    def detections(self, i: int, side: str, min_area: int = 25) -> list:
        labels = self.labels_left if side == "left" else self.labels_right
        return masks_from_label_image(labels[i], i, side, min_area)


def camera_id(frame: int, side: str) -> int:
    return 2 * frame + (side == "right")


def ground_truth_reconstruction(
    scene: SceneGroundTruth, kind: str, target: int = 0, pixel_sigma: float = 0.0, rng=None
) -> Reconstruction:
    """Reconstruction in the true geometry (object frame for ``kind="object"``).

    Observations are the true projections plus optional Gaussian noise;
    only in-image observations are kept and points need two of them.
    """
    rng = rng or np.random.default_rng(0)
    intr = scene.intrinsics
    cams = []
    for i in range(scene.n_frames):
        for side in ("left", "right"):
            pose = scene.object_frame_pose(target, i, side) if kind == "object" else scene.pose(i, side)
            cams.append(CameraRecord(camera_id(i, side), i, side, pose, intr))
    pts_frame = scene.objects[target].points if kind == "object" else scene.background_points
    rig = _rig_tuple(scene)
    obs = [[] for _ in range(len(pts_frame))]
    for i in range(scene.n_frames):
        world = scene.objects[target].world_points(i) if kind == "object" else scene.background_points
        for side in ("left", "right"):
            uv, z = _project_all(rig, world, i, side)
            vis = (z > NEAR_CLIP) & _in_image(scene.config, np.nan_to_num(uv, nan=-1.0))
            noisy = uv + rng.normal(0.0, pixel_sigma, uv.shape) if pixel_sigma > 0 else uv
            for j in np.nonzero(vis)[0]:
                obs[j].append((camera_id(i, side), float(noisy[j, 0]), float(noisy[j, 1])))
    points = tuple(PointRecord(j, pts_frame[j], tuple(o)) for j, o in enumerate(obs) if len(o) >= 2)
    return Reconstruction(kind, tuple(cams), points)


def _perturb(recon: Reconstruction, noise: NoiseConfig, rng, scale: float, outliers: int):
    pts = recon.point_array()
    centers = np.array([c.pose.center for c in recon.cameras])
    allp = np.vstack([pts, centers])
    extent = float(np.linalg.norm(allp.max(0) - allp.min(0)))
    sig_r = np.deg2rad(noise.pose_rot_sigma)
    sig_t = noise.pose_trans_sigma * extent
    if noise.random_gauge:
        G = so3_exp(rng.normal(0.0, 1.0, 3))
        g = rng.normal(0.0, 0.2 * extent, 3)
    else:
        G, g = np.eye(3), np.zeros(3)
    poses = {}
    for cam in recon.cameras:
        R = cam.pose.rotation
        c = cam.pose.center
        if sig_r > 0:
            R = so3_exp(rng.normal(0.0, sig_r, 3)) @ R
        if sig_t > 0:
            c = c + rng.normal(0.0, sig_t, 3)
        # gauge: X' = s (G X + g)
        poses[cam.camera_id] = CameraPose(R @ G.T, scale * (G @ c + g))
    positions = {}
    for p in recon.points:
        x = p.position + (rng.normal(0.0, sig_t, 3) if sig_t > 0 else 0.0)
        positions[p.point_id] = scale * (G @ x + g)
    bad = []
    if outliers:
        candidates = [c.camera_id for c in recon.cameras if c.frame_index != min(recon.frames)]
        bad = sorted(int(v) for v in rng.choice(candidates, size=min(outliers, len(candidates)), replace=False))
        for cid in bad:
            pose = poses[cid]
            axis = rng.normal(0.0, 1.0, 3)
            axis /= np.linalg.norm(axis)
            shift = rng.normal(0.0, 1.0, 3)
            shift *= 0.25 * extent * scale / np.linalg.norm(shift)
            poses[cid] = CameraPose(so3_exp(axis * np.pi / 2.0) @ pose.rotation, pose.center + shift)
    return recon.with_geometry(poses=poses, positions=positions), bad


def render_observations(
    scene: SceneGroundTruth,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    target: int = 0,
    with_images: bool = True,
) -> RenderedObservations:
    """Masks, flow fields and perturbed initial reconstructions for a scene."""
    noise = noise or NoiseConfig()
    rng = np.random.default_rng(seed)
    labels_l, labels_r, flows_ln, flows_lr = [], [], [], []
    if with_images:
        for i in range(scene.n_frames):
            cache = render_depth(scene, i, "left")
            labels_l.append(cache[0] + 1)
            labels_r.append(label_image(scene, i, "right"))
            flows_lr.append(render_flow(scene, i, "lr", rng, noise.flow_sigma, cache))
            if i + 1 < scene.n_frames:
                flows_ln.append(render_flow(scene, i, "ln", rng, noise.flow_sigma, cache))
    obj_gt = ground_truth_reconstruction(scene, "object", target, noise.pixel_sigma, rng)
    bg_gt = ground_truth_reconstruction(scene, "background", target, noise.pixel_sigma, rng)
    lo, hi = noise.scale_perturbation
    s_obj = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else lo
    obj, bad = _perturb(obj_gt, noise, rng, s_obj, noise.outlier_camera_count)
    bg, _ = _perturb(bg_gt, noise, rng, noise.background_scale, 0)
    return RenderedObservations(labels_l, labels_r, flows_ln, flows_lr, obj, bg, s_obj, noise.background_scale, bad)


# scoring


@dataclass
class ScoreReport:
    rmse: float
    per_frame_rmse: dict
    alignment_rotation: list
    alignment_translation: list
    path_length: float
    relative_rmse: float
    max_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def score_trajectory(estimated, scene: SceneGroundTruth, target: int = 0) -> ScoreReport:
    """Object point RMSE after rigidly aligning the estimated background frame.

    The alignment uses the background camera centers (left and right) and
    has no scale: scale errors show up in the score.
    """
    frames = [int(f) for f in estimated.frames]
    if any(f < 0 or f >= scene.n_frames for f in frames):
        raise FrameMismatch(f"estimated frames {frames} not contained in scene frames 0..{scene.n_frames - 1}")
    obj = scene.objects[target]
    if np.any(estimated.point_ids >= len(obj.points)) or np.any(estimated.point_ids < 0):
        raise FrameMismatch("estimated point ids do not belong to the target object")
    est_c = np.vstack([estimated.bg_left_centers, estimated.bg_right_centers])
    gt_c = np.vstack([[scene.pose(f, "left").center for f in frames], [scene.pose(f, "right").center for f in frames]])
    R, t, _ = rigid_align(est_c, gt_c)
    per_frame = {}
    sq = []
    for k, f in enumerate(frames):
        est = estimated.positions[k] @ R.T + t
        gt = obj.world_points(f)[estimated.point_ids]
        e2 = np.sum((est - gt) ** 2, axis=1)
        sq.append(e2)
        per_frame[f] = float(np.sqrt(np.mean(e2)))
    sq = np.concatenate(sq)
    rmse = float(np.sqrt(np.mean(sq)))
    path = scene.object_path_length(target)
    return ScoreReport(
        rmse=rmse,
        per_frame_rmse=per_frame,
        alignment_rotation=R.tolist(),
        alignment_translation=t.tolist(),
        path_length=path,
        relative_rmse=rmse / path if path > 0 else float("inf"),
        max_error=float(np.sqrt(np.max(sq))),
    )
