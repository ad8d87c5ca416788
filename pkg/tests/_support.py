"""Helpers shared by the refinement tests and the acceptance suite."""

import numpy as np

from stereotraj.geometry import so3_exp
from stereotraj.recon import PointRecord, Reconstruction
from stereotraj.refine import ProblemState, RigModel, build_problem, pair_stereo_features
from stereotraj.synth import SceneConfig, generate_scene, ground_truth_reconstruction


def mixed_reconstruction(seed=0, n_frames=3, n_points=8, kind="object"):
    """Noiseless reconstruction with stereo blocks plus left-only and right-only mono blocks."""
    scene = generate_scene(SceneConfig(n_frames=n_frames, n_object_points=n_points, n_background_points=12), seed)
    recon = ground_truth_reconstruction(scene, kind)
    pts = []
    for p in recon.points:
        obs = list(p.observations)
        if p.point_id % 3 == 0:
            # right camera ids are odd, frame = id // 2
            obs = [o for o in obs if not (o[0] % 2 == 1 and (o[0] // 2) % 2 == 0)]
        elif p.point_id % 3 == 1:
            obs = [o for o in obs if not (o[0] % 2 == 0 and o[0] // 2 == 1)]
        pts.append(PointRecord(p.point_id, p.position, tuple(obs) if len(obs) >= 2 else p.observations))
    return scene, Reconstruction(recon.kind, recon.cameras, tuple(pts))


def problem_for(recon, baseline, huber_width=2.0):
    stereo, mono = pair_stereo_features(recon)
    return build_problem(recon, stereo, mono, RigModel(baseline), huber_width)


def random_state(problem, rng, rot=0.02, trans=0.05, point=0.05):
    s = problem.initial.copy()
    for f in range(problem.n_frames):
        s.rotations[f] = so3_exp(rng.normal(0, rot, 3)) @ s.rotations[f]
        s.translations[f] = s.translations[f] + rng.normal(0, trans, 3)
    s.points = s.points + rng.normal(0, point, s.points.shape)
    return ProblemState(s.rotations, s.translations, s.points)


def finite_difference_jacobian(problem, state, h=1e-6):
    cols = []
    for k in range(problem.n_params):
        e = np.zeros(problem.n_params)
        e[k] = h
        rp = problem.evaluate(problem.retract(state, e), jacobian=False).residuals
        rm = problem.evaluate(problem.retract(state, -e), jacobian=False).residuals
        cols.append((rp - rm) / (2 * h))
    return np.column_stack(cols)


def jacobian_relative_error(problem, state, h=1e-6):
    """Largest per-entry ``|J - J_fd| / max(1, |J_fd|)``."""
    J = problem.evaluate(state).jacobian.toarray()
    J_fd = finite_difference_jacobian(problem, state, h)
    return float(np.max(np.abs(J - J_fd) / np.maximum(1.0, np.abs(J_fd))))
