"""Nonlinear least-squares formulation of stereo-rig refinement.

Variables are one pose per frame (the left camera; the right camera is the
left camera shifted by the rig baseline along its own x axis, with the same
rotation) and one 3-vector per point. Two residual families exist:

* stereo blocks ``(u_left - pi_L.x, u_right - pi_R.x, v - pi_L.y)`` for every
  :class:`StereoObservation`;
* mono blocks ``(x - pi.x, y - pi.y)`` for every unpaired observation.

Pose increments are 6-vectors ``(omega, rho)`` applied on the left of the
world-to-camera transform: ``R <- exp(omega) R``, ``t <- exp(omega) t + rho``.
The pose of the earliest frame is held fixed to remove the gauge freedom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..exceptions import EmptyProblem, NumericalFailure
from ..geometry import DEPTH_EPSILON, CameraPose, so3_exp
from ..recon import Reconstruction

logger = logging.getLogger(__name__)

POSE_DOF = 6
POINT_DOF = 3
HUBER_WIDTH = 2.0


@dataclass(frozen=True)
class RigModel:
    """Rectified stereo rig: right camera = left camera shifted by ``baseline`` along x."""

    baseline: float = 1.0

    def __post_init__(self):
        if not self.baseline > 0.0:
            raise ValueError(f"rig baseline must be positive, got {self.baseline}")


@dataclass
class ProblemState:
    """Values of all variables: world-to-camera ``(R, t)`` per frame and point positions."""

    rotations: np.ndarray  # (F, 3, 3)
    translations: np.ndarray  # (F, 3)
    points: np.ndarray  # (P, 3)

    def copy(self) -> "ProblemState":
        return ProblemState(self.rotations.copy(), self.translations.copy(), self.points.copy())


@dataclass
class Evaluation:
    residuals: np.ndarray  # raw stacked residuals, zero on excluded blocks
    jacobian: sp.csr_matrix  # d residuals / d increment
    block_sq_norms: np.ndarray  # per block: ||r_b||^2
    block_rows: np.ndarray  # per block: first residual row
    block_sizes: np.ndarray  # per block: 2 or 3
    excluded: np.ndarray  # per block: True when a point lies behind a camera
    n_stereo: int

    def robust_weights(self, huber_width: float) -> np.ndarray:
        """Per-block IRLS weight, the derivative of the Huber function of ||r||^2."""
        return huber_weights(self.block_sq_norms, huber_width)


def huber_rho(sq_norms, width: float) -> np.ndarray:
    s = np.asarray(sq_norms, dtype=float)
    w2 = width * width
    return np.where(s <= w2, s, 2.0 * width * np.sqrt(s) - w2)


def huber_weights(sq_norms, width: float) -> np.ndarray:
    s = np.asarray(sq_norms, dtype=float)
    return np.where(s <= width * width, 1.0, width / np.sqrt(np.maximum(s, 1e-300)))


@dataclass
class LeastSquaresProblem:
    recon: Reconstruction
    rig: RigModel
    frames: np.ndarray  # frame index per pose variable, sorted
    anchor: int  # position in ``frames`` of the fixed pose
    point_ids: np.ndarray
    initial: ProblemState
    # stereo blocks
    s_frame: np.ndarray
    s_point: np.ndarray
    s_meas: np.ndarray  # (S, 3): u_left, u_right, v
    s_intr_left: np.ndarray  # (S, 4)
    s_intr_right: np.ndarray  # (S, 4)
    # mono blocks
    m_frame: np.ndarray
    m_point: np.ndarray
    m_right: np.ndarray  # bool
    m_meas: np.ndarray  # (M, 2)
    m_intr: np.ndarray  # (M, 4)
    huber_width: float = HUBER_WIDTH
    stereo_obs: list = field(default_factory=list)
    mono_obs: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_points(self) -> int:
        return len(self.point_ids)

    @property
    def n_pose_params(self) -> int:
        return POSE_DOF * (self.n_frames - 1)

    @property
    def n_params(self) -> int:
        return self.n_pose_params + POINT_DOF * self.n_points

    @property
    def n_stereo_blocks(self) -> int:
        return len(self.s_frame)

    @property
    def n_mono_blocks(self) -> int:
        return len(self.m_frame)

    @property
    def n_residuals(self) -> int:
        return 3 * self.n_stereo_blocks + 2 * self.n_mono_blocks

    @property
    def scale_constrained(self) -> bool:
        """True when some residual involves a derived right camera."""
        return self.n_stereo_blocks > 0 or bool(np.any(self.m_right))

    def pose_column(self, frame_pos: int) -> int | None:
        """First Jacobian column of the pose at ``frame_pos``; None for the anchor."""
        if frame_pos == self.anchor:
            return None
        k = frame_pos if frame_pos < self.anchor else frame_pos - 1
        return POSE_DOF * k

    def retract(self, state: ProblemState, delta) -> ProblemState:
        """Apply an increment vector to ``state``."""
        delta = np.asarray(delta, dtype=float)
        out = state.copy()
        free = [f for f in range(self.n_frames) if f != self.anchor]
        for k, f in enumerate(free):
            d = delta[POSE_DOF * k : POSE_DOF * (k + 1)]
            dR = so3_exp(d[:3])
            out.rotations[f] = dR @ state.rotations[f]
            out.translations[f] = dR @ state.translations[f] + d[3:]
        out.points = state.points + delta[self.n_pose_params :].reshape(-1, 3)
        return out

    def cost(self, state: ProblemState) -> float:
        return robust_cost(self.evaluate(state, jacobian=False), self.huber_width)

    def evaluate(self, state: ProblemState, jacobian: bool = True) -> Evaluation:
        return evaluate_residuals_and_jacobian(self, state, jacobian=jacobian)

    def to_reconstruction(self, state: ProblemState) -> Reconstruction:
        """Write a state back into a reconstruction with the same observations."""
        b = self.rig.baseline
        poses = {}
        for f, frame in enumerate(self.frames):
            R = state.rotations[f]
            left = CameraPose.from_rt(R, state.translations[f])
            right = CameraPose(R, left.center + R.T @ np.array([b, 0.0, 0.0]))
            for side, pose in (("left", left), ("right", right)):
                cam = self.recon.camera_at(int(frame), side)
                if cam is not None:
                    poses[cam.camera_id] = pose
        positions = {int(pid): state.points[k] for k, pid in enumerate(self.point_ids)}
        return self.recon.with_geometry(poses=poses, positions=positions)


def robust_cost(ev: Evaluation, huber_width: float) -> float:
    return 0.5 * float(np.sum(huber_rho(ev.block_sq_norms, huber_width)))


def quadratic_cost(ev: Evaluation) -> float:
    return 0.5 * float(np.sum(ev.block_sq_norms))


def _intr_row(cam) -> tuple:
    return cam.intrinsics.as_tuple()


def _median_reprojection(R, t, b, pts, sides, meas, intr) -> float:
    xc = pts @ R.T + t
    xc = xc - np.outer(sides, [b, 0.0, 0.0])
    z = xc[:, 2]
    ok = z > DEPTH_EPSILON
    if not np.any(ok):
        return np.inf
    u = intr[ok, 0] * xc[ok, 0] / z[ok] + intr[ok, 2]
    v = intr[ok, 1] * xc[ok, 1] / z[ok] + intr[ok, 3]
    err = np.hypot(meas[ok, 0] - u, meas[ok, 1] - v)
    # points behind the camera count as gross errors
    return float(np.median(np.concatenate([err, np.full(np.count_nonzero(~ok), np.inf)])))


def _initial_poses(recon: Reconstruction, frames, rig: RigModel, point_index, positions):
    """Per frame, start from the left camera or from the right camera moved back by the baseline.

    When both exist the candidate with the lower median reprojection error
    over that frame's observations wins, so one badly registered camera of
    a stereo pair does not spoil the initialization.
    """
    b = rig.baseline
    obs_by_frame = {}
    for p in recon.points:
        for cid, x, y in p.observations:
            cam = recon.camera(cid)
            obs_by_frame.setdefault(cam.frame_index, []).append(
                (point_index[p.point_id], cam.side == "right", x, y, _intr_row(cam))
            )
    rotations, translations = [], []
    for frame in frames:
        cands = []
        left = recon.camera_at(frame, "left")
        right = recon.camera_at(frame, "right")
        if left is not None:
            cands.append((left.pose.rotation, left.pose.translation))
        if right is not None:
            R = right.pose.rotation
            c_left = right.pose.center - R.T @ np.array([b, 0.0, 0.0])
            cands.append((R, -R @ c_left))
        if len(cands) > 1 and frame in obs_by_frame:
            rows = obs_by_frame[frame]
            pts = positions[[r[0] for r in rows]]
            sides = np.array([r[1] for r in rows], dtype=float)
            meas = np.array([[r[2], r[3]] for r in rows])
            intr = np.array([r[4] for r in rows])
            errs = [_median_reprojection(R, t, b, pts, sides, meas, intr) for R, t in cands]
            best = int(np.argmin(errs))
            if best != 0:
                logger.debug("frame %s: initializing from right camera (median error %.3g vs %.3g)", frame, errs[1], errs[0])
            cands = [cands[best]]
        rotations.append(np.array(cands[0][0], dtype=float))
        translations.append(np.array(cands[0][1], dtype=float))
    return np.array(rotations), np.array(translations)


def build_problem(
    recon: Reconstruction,
    stereo,
    mono,
    rig: RigModel,
    huber_width: float = HUBER_WIDTH,
) -> LeastSquaresProblem:
    """Assemble the refinement problem for an (already scaled) reconstruction."""
    stereo = list(stereo)
    mono = list(mono)
    if not stereo and not mono:
        raise EmptyProblem("no observations to build residuals from")
    baselines = list(recon.baselines().values())
    if baselines and abs(np.median(baselines) / rig.baseline - 1.0) > 0.1:
        logger.warning(
            "median baseline %.4g differs from rig baseline %.4g; scale the reconstruction first",
            float(np.median(baselines)),
            rig.baseline,
        )
    frames = np.array(recon.frames, dtype=np.int64)
    frame_pos = {int(f): k for k, f in enumerate(frames)}
    point_ids = np.array([p.point_id for p in recon.points], dtype=np.int64)
    point_index = {int(pid): k for k, pid in enumerate(point_ids)}
    positions = recon.point_array()
    rotations, translations = _initial_poses(recon, [int(f) for f in frames], rig, point_index, positions)

    s_frame = np.array([frame_pos[o.frame_index] for o in stereo], dtype=np.int64)
    s_point = np.array([point_index[o.point_id] for o in stereo], dtype=np.int64)
    s_meas = np.array([[o.u_left, o.u_right, o.v] for o in stereo], dtype=float).reshape(-1, 3)
    s_il = np.array([_intr_row(recon.camera(o.left_camera_id)) for o in stereo], dtype=float).reshape(-1, 4)
    s_ir = np.array([_intr_row(recon.camera(o.right_camera_id)) for o in stereo], dtype=float).reshape(-1, 4)
    m_frame = np.array([frame_pos[o.frame_index] for o in mono], dtype=np.int64)
    m_point = np.array([point_index[o.point_id] for o in mono], dtype=np.int64)
    m_right = np.array([o.side == "right" for o in mono], dtype=bool)
    m_meas = np.array([[o.x, o.y] for o in mono], dtype=float).reshape(-1, 2)
    m_intr = np.array([_intr_row(recon.camera(o.camera_id)) for o in mono], dtype=float).reshape(-1, 4)

    return LeastSquaresProblem(
        recon=recon,
        rig=rig,
        frames=frames,
        anchor=0,
        point_ids=point_ids,
        initial=ProblemState(rotations, translations, positions.copy()),
        s_frame=s_frame,
        s_point=s_point,
        s_meas=s_meas,
        s_intr_left=s_il,
        s_intr_right=s_ir,
        m_frame=m_frame,
        m_point=m_point,
        m_right=m_right,
        m_meas=m_meas,
        m_intr=m_intr,
        huber_width=huber_width,
        stereo_obs=stereo,
        mono_obs=mono,
    )


def _pose_point_jacobians(dproj, xc, R):
    """Chain ``d proj / d x_cam`` (B, k, 3) through the pose increment and the point."""
    # d x_cam / d omega = -[x_cam]_x ; d x_cam / d rho = I ; d x_cam / d X = R
    neg_skew = np.zeros((len(xc), 3, 3))
    neg_skew[:, 0, 1] = xc[:, 2]
    neg_skew[:, 0, 2] = -xc[:, 1]
    neg_skew[:, 1, 0] = -xc[:, 2]
    neg_skew[:, 1, 2] = xc[:, 0]
    neg_skew[:, 2, 0] = xc[:, 1]
    neg_skew[:, 2, 1] = -xc[:, 0]
    J_omega = -np.einsum("bki,bij->bkj", dproj, neg_skew)
    J_rho = -dproj
    J_point = -np.einsum("bki,bij->bkj", dproj, R)
    return np.concatenate([J_omega, J_rho], axis=2), J_point


def evaluate_residuals_and_jacobian(problem: LeastSquaresProblem, state: ProblemState, jacobian: bool = True) -> Evaluation:
    """Residuals (measured minus predicted) and their analytic Jacobian.

    Blocks whose point lies at or behind a camera are excluded: their
    residuals and Jacobian rows are zero and they are flagged in
    ``Evaluation.excluded``.
    """
    if not (
        np.all(np.isfinite(state.rotations)) and np.all(np.isfinite(state.translations)) and np.all(np.isfinite(state.points))
    ):
        raise NumericalFailure("non-finite values in problem state")
    b = problem.rig.baseline
    S, M = problem.n_stereo_blocks, problem.n_mono_blocks

    # stereo blocks
    R_s = state.rotations[problem.s_frame]
    xc = np.einsum("bij,bj->bi", R_s, state.points[problem.s_point]) + state.translations[problem.s_frame]
    z = xc[:, 2]
    s_bad = z <= DEPTH_EPSILON
    zs = np.where(s_bad, 1.0, z)
    fl, il = problem.s_intr_left, problem.s_intr_right
    xr = xc[:, 0] - b
    pred = np.stack(
        [
            fl[:, 0] * xc[:, 0] / zs + fl[:, 2],
            il[:, 0] * xr / zs + il[:, 2],
            fl[:, 1] * xc[:, 1] / zs + fl[:, 3],
        ],
        axis=1,
    )
    r_s = problem.s_meas - pred
    r_s[s_bad] = 0.0

    # mono blocks
    R_m = state.rotations[problem.m_frame]
    xm = np.einsum("bij,bj->bi", R_m, state.points[problem.m_point]) + state.translations[problem.m_frame]
    xm_shift = xm.copy()
    xm_shift[:, 0] -= b * problem.m_right
    zm = xm[:, 2]
    m_bad = zm <= DEPTH_EPSILON
    zms = np.where(m_bad, 1.0, zm)
    fm = problem.m_intr
    pred_m = np.stack([fm[:, 0] * xm_shift[:, 0] / zms + fm[:, 2], fm[:, 1] * xm_shift[:, 1] / zms + fm[:, 3]], axis=1)
    r_m = problem.m_meas - pred_m
    r_m[m_bad] = 0.0

    residuals = np.concatenate([r_s.reshape(-1), r_m.reshape(-1)])
    if not np.all(np.isfinite(residuals)):
        raise NumericalFailure("non-finite residuals")
    sq = np.concatenate([np.sum(r_s**2, axis=1), np.sum(r_m**2, axis=1)])
    rows0 = np.concatenate([3 * np.arange(S), 3 * S + 2 * np.arange(M)]).astype(np.int64)
    sizes = np.concatenate([np.full(S, 3), np.full(M, 2)]).astype(np.int64)
    excluded = np.concatenate([s_bad, m_bad])

    J = None
    if jacobian:
        # stereo: d pred / d x_cam
        dp = np.zeros((S, 3, 3))
        dp[:, 0, 0] = fl[:, 0] / zs
        dp[:, 0, 2] = -fl[:, 0] * xc[:, 0] / zs**2
        dp[:, 1, 0] = il[:, 0] / zs
        dp[:, 1, 2] = -il[:, 0] * xr / zs**2
        dp[:, 2, 1] = fl[:, 1] / zs
        dp[:, 2, 2] = -fl[:, 1] * xc[:, 1] / zs**2
        dp[s_bad] = 0.0
        Jp_s, Jx_s = _pose_point_jacobians(dp, xc, R_s)
        dm = np.zeros((M, 2, 3))
        dm[:, 0, 0] = fm[:, 0] / zms
        dm[:, 0, 2] = -fm[:, 0] * xm_shift[:, 0] / zms**2
        dm[:, 1, 1] = fm[:, 1] / zms
        dm[:, 1, 2] = -fm[:, 1] * xm_shift[:, 1] / zms**2
        dm[m_bad] = 0.0
        # the rig shift is a constant offset, so d x_shift / d x_cam = I
        Jp_m, Jx_m = _pose_point_jacobians(dm, xm, R_m)
        J = _assemble(problem, Jp_s, Jx_s, Jp_m, Jx_m)
        if not np.all(np.isfinite(J.data)):
            raise NumericalFailure("non-finite Jacobian")
    return Evaluation(residuals, J, sq, rows0, sizes, excluded, S)


def _assemble(problem, Jp_s, Jx_s, Jp_m, Jx_m) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n_pose = problem.n_pose_params
    pose_col = np.array([-1 if problem.pose_column(f) is None else problem.pose_column(f) for f in range(problem.n_frames)])

    def add(row0, k, frame_idx, point_idx, Jp, Jx):
        B = len(frame_idx)
        if B == 0:
            return
        r = row0[:, None] + np.arange(k)[None, :]  # (B, k)
        pc = pose_col[frame_idx]
        free = pc >= 0
        if np.any(free):
            rr = np.repeat(r[free][:, :, None], POSE_DOF, axis=2)
            cc = np.broadcast_to(pc[free][:, None, None] + np.arange(POSE_DOF)[None, None, :], rr.shape)
            rows.append(rr.reshape(-1))
            cols.append(cc.reshape(-1))
            vals.append(Jp[free].reshape(-1))
        rr = np.repeat(r[:, :, None], POINT_DOF, axis=2)
        cc = np.broadcast_to(n_pose + 3 * point_idx[:, None, None] + np.arange(POINT_DOF)[None, None, :], rr.shape)
        rows.append(rr.reshape(-1))
        cols.append(cc.reshape(-1))
        vals.append(Jx.reshape(-1))

    S = problem.n_stereo_blocks
    add(3 * np.arange(S), 3, problem.s_frame, problem.s_point, Jp_s, Jx_s)
    add(3 * S + 2 * np.arange(problem.n_mono_blocks), 2, problem.m_frame, problem.m_point, Jp_m, Jx_m)
    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(problem.n_residuals, problem.n_params))
