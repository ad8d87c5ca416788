import dataclasses
import logging

import numpy as np
import pytest
from _support import jacobian_relative_error, mixed_reconstruction, problem_for, random_state
from hypothesis import given, settings
from hypothesis import strategies as st

from stereotraj.exceptions import (
    DegenerateBaseline,
    DidNotConverge,
    EmptyProblem,
    NonPositiveScale,
    NoStereoFrames,
    NumericalFailure,
)
from stereotraj.geometry import CameraPose, PinholeIntrinsics, project, rigid_align, rotation_angle, world_to_camera
from stereotraj.recon import CameraRecord, PointRecord, Reconstruction
from stereotraj.refine import (
    ProblemState,
    RigModel,
    SolverConfig,
    apply_scale,
    build_problem,
    estimate_scale,
    huber_rho,
    optimize,
    pair_stereo_features,
    quadratic_cost,
    refine_reconstruction,
    robust_cost,
)
from stereotraj.synth import NoiseConfig, SceneConfig, generate_scene, ground_truth_reconstruction, render_observations

INTR = PinholeIntrinsics(400.0, 400.0, 240.0, 180.0)


def rig_recon(baselines, points=(), kind="background"):
    cams = []
    for f, b in enumerate(baselines):
        c = np.array([0.0, 0.0, 2.0 * f])
        cams.append(CameraRecord(2 * f, f, "left", CameraPose(np.eye(3), c), INTR))
        cams.append(CameraRecord(2 * f + 1, f, "right", CameraPose(np.eye(3), c + [b, 0, 0]), INTR))
    return Reconstruction(kind, tuple(cams), tuple(points))


def one_point(y_left, y_right):
    return rig_recon([1.0], [PointRecord(0, [0, 0, 5], ((0, 240.0, y_left), (1, 160.0, y_right)))])


# stereo pairing


def test_pairing_equal_rows():
    stereo, mono = pair_stereo_features(one_point(100.0, 100.0))
    assert len(stereo) == 1 and not mono and stereo[0].v == 100.0


def test_pairing_within_tolerance_uses_mean_row():
    stereo, mono = pair_stereo_features(one_point(101.0, 99.5))
    assert not mono and stereo[0].v == 100.25
    assert (stereo[0].u_left, stereo[0].u_right) == (240.0, 160.0)


def test_pairing_beyond_tolerance_gives_two_mono():
    stereo, mono = pair_stereo_features(one_point(104.0, 100.0))
    assert not stereo and sorted(m.side for m in mono) == ["left", "right"]


def test_pairing_uses_each_observation_once(rng):
    _, recon = mixed_reconstruction()
    stereo, mono = pair_stereo_features(recon)
    n_obs = sum(len(p.observations) for p in recon.points)
    assert 2 * len(stereo) + len(mono) == n_obs


# scale


def test_estimate_scale_unit_and_median():
    assert estimate_scale(rig_recon([1.0, 1.0, 1.0])) == 1.0
    assert estimate_scale(rig_recon([2.0, 2.0, 2.0, 50.0])) == 0.5
    assert estimate_scale(rig_recon([2.0, 2.0]), nominal_baseline=0.5) == 0.25


def test_estimate_scale_errors():
    cams = (CameraRecord(0, 0, "left", CameraPose.identity(), INTR), CameraRecord(1, 1, "right", CameraPose.identity(), INTR))
    with pytest.raises(NoStereoFrames):
        estimate_scale(Reconstruction("object", cams))
    with pytest.raises(DegenerateBaseline):
        estimate_scale(rig_recon([0.0, 0.0]))


def test_apply_scale_semantics(rng):
    r = rig_recon([1.0, 1.2, 0.9], [PointRecord(0, [1, 2, 9], ((0, 10.0, 20.0), (3, 30.0, 40.0)))])
    assert apply_scale(r, 1.0) is r
    s2 = apply_scale(r, 2.0)
    c1 = np.array([c.pose.center for c in r.cameras])
    c2 = np.array([c.pose.center for c in s2.cameras])
    d1 = np.linalg.norm(c1[:, None] - c1[None], axis=-1)
    d2 = np.linalg.norm(c2[:, None] - c2[None], axis=-1)
    np.testing.assert_allclose(d2, 2 * d1)
    assert all(a.pose.rotation is not None and np.array_equal(a.pose.rotation, b.pose.rotation) for a, b in zip(r.cameras, s2.cameras))
    assert [p.observations for p in s2.points] == [p.observations for p in r.points]
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(NonPositiveScale):
            apply_scale(r, bad)


def _reprojection_errors(recon):
    out = []
    for p in recon.points:
        for cid, x, y in p.observations:
            cam = recon.camera(cid)
            out.append(project(cam.intrinsics, world_to_camera(cam.pose, p.position)) - [x, y])
    return np.array(out)


def test_apply_scale_keeps_reprojection(rng):
    scene = generate_scene(SceneConfig(n_frames=4), 3)
    obs = render_observations(scene, NoiseConfig(pixel_sigma=0.5, pose_rot_sigma=1.0), 3, with_images=False)
    before = _reprojection_errors(obs.object_recon)
    for s in np.exp(rng.uniform(-3, 3, 5)):
        np.testing.assert_allclose(_reprojection_errors(apply_scale(obs.object_recon, s)), before, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.lists(st.floats(0.1, 10.0), min_size=1, max_size=7))
def test_estimate_scale_homogeneity(s, baselines):
    r = rig_recon(baselines)
    assert estimate_scale(apply_scale(r, s), 0.7) == pytest.approx(estimate_scale(r, 0.7) / s, rel=1e-12)


# problem construction


def test_problem_counts_two_frames_four_points():
    scene = generate_scene(SceneConfig(n_frames=2, n_object_points=4), 0)
    recon = ground_truth_reconstruction(scene, "object")
    stereo, mono = pair_stereo_features(recon)
    assert len(stereo) == 8 and not mono
    p = build_problem(recon, stereo, mono, RigModel(scene.baseline))
    assert p.n_pose_params == 6 and p.n_points * 3 == 12 and p.n_params == 18
    assert p.n_stereo_blocks == 8 and p.n_residuals == 24
    ev = p.evaluate(p.initial)
    assert ev.jacobian.shape == (24, 18)
    assert set(ev.block_sizes) == {3}


def test_mono_only_problem_is_flagged_unconstrained():
    scene = generate_scene(SceneConfig(n_frames=3), 0)
    recon = ground_truth_reconstruction(scene, "object")
    left_only = tuple(
        PointRecord(p.point_id, p.position, tuple(o for o in p.observations if o[0] % 2 == 0))
        for p in recon.points
        if sum(1 for o in p.observations if o[0] % 2 == 0) >= 2
    )
    recon = Reconstruction("object", recon.cameras, left_only)
    stereo, mono = pair_stereo_features(recon)
    assert not stereo
    p = build_problem(recon, stereo, mono, RigModel(scene.baseline))
    assert not p.scale_constrained
    _, report = optimize(p)
    assert report.scale_constrained is False


def test_empty_problem():
    with pytest.raises(EmptyProblem):
        build_problem(rig_recon([1.0]), [], [], RigModel(1.0))


def test_baseline_mismatch_warns(caplog):
    scene, recon = mixed_reconstruction()
    with caplog.at_level(logging.WARNING):
        problem_for(recon, 5.0 * scene.baseline)
    assert "differs from rig baseline" in caplog.text


def test_ground_truth_cost_is_zero():
    scene, recon = mixed_reconstruction(n_frames=4, n_points=20)
    p = problem_for(recon, scene.baseline)
    ev = p.evaluate(p.initial)
    assert robust_cost(ev, p.huber_width) < 1e-12


def test_zero_residual_state_has_zero_gradient():
    scene, recon = mixed_reconstruction(n_frames=4, n_points=20)
    p = problem_for(recon, scene.baseline)
    r = p.evaluate(p.initial).residuals
    S = p.n_stereo_blocks
    # measurements replaced by the predictions themselves
    exact = dataclasses.replace(
        p, s_meas=p.s_meas - r[: 3 * S].reshape(-1, 3), m_meas=p.m_meas - r[3 * S :].reshape(-1, 2)
    )
    ev = exact.evaluate(exact.initial)
    assert np.all(ev.residuals == 0.0)
    assert np.max(np.abs(ev.jacobian.T @ ev.residuals)) <= 1e-12


# residuals and Jacobian


def test_jacobian_matches_finite_differences(rng):
    scene, recon = mixed_reconstruction(n_frames=3, n_points=10)
    p = problem_for(recon, scene.baseline)
    assert p.n_mono_blocks > 0 and p.n_stereo_blocks > 0
    for _ in range(10):
        assert jacobian_relative_error(p, random_state(p, rng)) < 1e-5


def test_point_behind_camera_is_excluded():
    scene, recon = mixed_reconstruction()
    p = problem_for(recon, scene.baseline)
    s = p.initial.copy()
    # camera-frame position (0, 0, -5) in the first frame
    s.points[0] = p.initial.rotations[0].T @ (np.array([0.0, 0.0, -5.0]) - p.initial.translations[0])
    ev = p.evaluate(s)
    assert ev.excluded.any()
    rows = [np.arange(r, r + n) for r, n, x in zip(ev.block_rows, ev.block_sizes, ev.excluded) if x]
    assert np.all(ev.residuals[np.concatenate(rows)] == 0)
    _, report = optimize(dataclasses.replace(p, initial=s), SolverConfig(max_iterations=0))
    assert len(report.excluded_blocks) == int(ev.excluded.sum())
    assert {e["point_id"] for e in report.excluded_blocks} == {int(p.point_ids[0])}


def test_non_finite_state_raises():
    scene, recon = mixed_reconstruction()
    p = problem_for(recon, scene.baseline)
    s = p.initial.copy()
    s.points[1] = np.nan
    with pytest.raises(NumericalFailure):
        p.evaluate(s)


def test_huber_bounded_by_quadratic(rng):
    s = rng.exponential(10.0, 1000)
    assert np.all(huber_rho(s, 2.0) <= s + 1e-12)
    scene, recon = mixed_reconstruction()
    p = problem_for(recon, scene.baseline)
    ev = p.evaluate(random_state(p, rng, rot=0.1, trans=0.5))
    assert robust_cost(ev, 2.0) <= quadratic_cost(ev)


# optimization


def test_fixed_point_at_ground_truth():
    scene, recon = mixed_reconstruction(n_frames=5, n_points=20)
    p = problem_for(recon, scene.baseline)
    refined, report = optimize(p)
    assert report.converged and report.iterations <= 2
    assert report.final_cost <= report.initial_cost


def test_noisy_refinement_reduces_cost_monotonically():
    scene = generate_scene(SceneConfig(), 4)
    noise = NoiseConfig(pixel_sigma=0.5, pose_rot_sigma=1.0, pose_trans_sigma=0.01)
    obs = render_observations(scene, noise, 4, with_images=False)
    refined, report = refine_reconstruction(obs.object_recon, scene.baseline)
    assert report.converged
    assert all(b <= a for a, b in zip(report.cost_history, report.cost_history[1:]))
    assert report.stereo_rms <= 0.6
    for b in refined.baselines().values():
        assert b == pytest.approx(scene.baseline, abs=1e-12)
    for f in refined.stereo_frames:
        assert np.array_equal(refined.camera_at(f, "left").pose.rotation, refined.camera_at(f, "right").pose.rotation)
    assert [p.observations for p in refined.points] == [p.observations for p in obs.object_recon.points]
    assert [c.camera_id for c in refined.cameras] == [c.camera_id for c in obs.object_recon.cameras]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_misregistered_camera_does_not_drag_the_others(seed):
    scene = generate_scene(SceneConfig(), seed)
    obs = render_observations(scene, NoiseConfig(outlier_camera_count=1), seed, with_images=False)
    (bad,) = obs.outlier_cameras
    refined, report = refine_reconstruction(obs.object_recon, scene.baseline, huber_width=2.0)
    assert report.converged
    good = [c for c in refined.cameras if c.frame_index != refined.camera(bad).frame_index]
    gt = {c.camera_id: scene.object_frame_pose(0, c.frame_index, c.side) for c in good}
    R, _, _ = rigid_align([c.pose.center for c in good], [gt[c.camera_id].center for c in good])
    worst = max(rotation_angle(c.pose.rotation @ R.T @ gt[c.camera_id].rotation.T) for c in good)
    assert np.rad2deg(worst) < 0.1


def test_iteration_cap_reports_or_raises():
    scene = generate_scene(SceneConfig(), 4)
    obs = render_observations(scene, NoiseConfig(pixel_sigma=0.5, pose_rot_sigma=2.0), 4, with_images=False)
    _, report = refine_reconstruction(obs.object_recon, scene.baseline, solver=SolverConfig(max_iterations=1))
    assert not report.converged and report.termination == "max_iterations" and report.iterations == 1
    with pytest.raises(DidNotConverge):
        refine_reconstruction(obs.object_recon, scene.baseline, solver=SolverConfig(max_iterations=1, raise_on_failure=True))


def test_report_is_json_ready():
    import json

    scene, recon = mixed_reconstruction()
    _, report = optimize(problem_for(recon, scene.baseline))
    doc = report.to_dict()
    assert "state" not in doc
    json.dumps(doc)


def test_initial_state_round_trips_through_reconstruction():
    scene, recon = mixed_reconstruction()
    p = problem_for(recon, scene.baseline)
    back = p.to_reconstruction(p.initial)
    for a, b in zip(back.cameras, recon.cameras):
        np.testing.assert_allclose(a.pose.center, b.pose.center, atol=1e-12)
    assert isinstance(p.initial, ProblemState)
