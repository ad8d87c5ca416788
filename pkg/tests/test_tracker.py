import numpy as np
import pytest

from stereotraj.exceptions import FrameOrderError
from stereotraj.synth import NoiseConfig, SceneConfig, generate_scene, render_observations
from stereotraj.tracking import (
    FlowField,
    InstanceMask,
    Prediction,
    associate_stereo,
    build_affinity,
    init_state,
    overlap,
    step_temporal,
    track_sequence,
    warp_mask,
)


def box(frame, side, x0, y0=10, w=12, shape=(60, 80), label=1):
    px = np.zeros(shape, bool)
    px[y0 : y0 + w, max(x0, 0) : max(x0 + w, 0)] = True
    return InstanceMask(frame, side, px, label)


def flow(src, dst, shape=(60, 80), u=0.0):
    data = np.zeros((*shape, 2), np.float32)
    data[..., 0] = u
    return FlowField(src[0], src[1], dst[0], dst[1], data)


def test_affinity_simple_cases():
    a = box(0, "left", 5)
    aff = build_affinity([Prediction(1, a)], [a])
    assert aff.values.tolist() == [[1.0]]
    b = box(0, "left", 40)
    aff = build_affinity([Prediction(1, a), Prediction(2, b)], [a, b])
    assert aff.values.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_affinity_matches_overlap_oracle(small_observations):
    obs = small_observations
    dets = obs.detections(1, "left")
    preds = [Prediction(k, warp_mask(m, obs.flows_ln[0])) for k, m in enumerate(obs.detections(0, "left"))]
    aff = build_affinity(preds, dets)
    for u, p in enumerate(preds):
        for v, d in enumerate(dets):
            inter = np.count_nonzero(p.mask.pixels & d.pixels)
            union = np.count_nonzero(p.mask.pixels | d.pixels)
            assert aff.values[u, v] == inter / union
    assert np.all((aff.values >= 0) & (aff.values <= 1))


def test_static_object_extends_track():
    s = init_state([box(0, "left", 5)])
    s = step_temporal(s, flow((0, "left"), (1, "left")), [box(1, "left", 5)])
    assert list(s.tracks) == [1] and s.next_id == 2
    assert sorted(s.tracks[1].left_masks) == [0, 1]


def test_object_leaving_image_is_lost_then_terminated():
    s = init_state([box(0, "left", 60)])
    for i in range(3):
        s = step_temporal(s, flow((i, "left"), (i + 1, "left"), u=4.0), [])
        if i < 2:
            assert s.tracks[1].status == "lost" and s.tracks[1].lost_count == i + 1
    assert 1 in s.finished and not s.tracks


def test_empty_prediction_terminates_immediately():
    s = init_state([box(0, "left", 60)])
    s = step_temporal(s, flow((0, "left"), (1, "left"), u=50.0), [])
    assert 1 in s.finished


def test_lost_track_recovers_within_max_lost():
    s = init_state([box(0, "left", 5)])
    s = step_temporal(s, flow((0, "left"), (1, "left")), [])
    s = step_temporal(s, flow((1, "left"), (2, "left")), [box(2, "left", 6)])
    assert s.tracks[1].status == "active" and sorted(s.tracks[1].left_masks) == [0, 2]


def test_active_count_is_matched_plus_spawned():
    s = init_state([box(0, "left", 5), box(0, "left", 40)])
    s = step_temporal(s, flow((0, "left"), (1, "left")), [box(1, "left", 5), box(1, "left", 60)])
    assert s.active_ids == [1, 3]
    owners = [id(m) for t in s.tracks.values() for f, m in t.left_masks.items() if f == 1]
    assert len(owners) == len(set(owners)) == 2


def test_stereo_zero_disparity_and_missing_right():
    s = init_state([box(0, "left", 5, label=1), box(0, "left", 40, label=2)])
    both = associate_stereo(s, flow((0, "left"), (0, "right")), [box(0, "right", 5), box(0, "right", 40)])
    assert all(0 in t.right_masks for t in both.tracks.values())
    one = associate_stereo(s, flow((0, "left"), (0, "right")), [box(0, "right", 40)])
    assert 0 not in one.tracks[1].right_masks and 0 in one.tracks[2].right_masks


def test_stereo_disparity_12px():
    lefts = [box(0, "left", x, label=k + 1) for k, x in enumerate((14, 34, 60))]
    rights = [box(0, "right", x - 12, label=k + 1) for k, x in enumerate((14, 34, 60))][::-1]
    s = associate_stereo(init_state(lefts), flow((0, "left"), (0, "right"), u=-12.0), rights)
    for t in s.tracks.values():
        assert t.right_masks[0].instance_label == t.left_masks[0].instance_label


def test_right_only_detections_never_spawn():
    s = init_state([])
    s = associate_stereo(s, flow((0, "left"), (0, "right")), [box(0, "right", 5)])
    assert not s.tracks and s.next_id == 1


def test_frame_order_checks():
    s = init_state([box(0, "left", 5)])
    with pytest.raises(FrameOrderError):
        step_temporal(s, flow((1, "left"), (2, "left")), [])
    with pytest.raises(FrameOrderError):
        step_temporal(s, flow((0, "left"), (1, "left")), [box(2, "left", 5)])
    with pytest.raises(FrameOrderError):
        associate_stereo(s, flow((0, "left"), (1, "left")), [])
    with pytest.raises(FrameOrderError):
        init_state([box(3, "left", 5)])


def test_step_does_not_mutate_input_state():
    s = init_state([box(0, "left", 5)])
    step_temporal(s, flow((0, "left"), (1, "left")), [box(1, "left", 5)])
    assert s.frame_index == 0 and sorted(s.tracks[1].left_masks) == [0]


def test_rotating_object_flow_prediction():
    scene = generate_scene(SceneConfig(motion="arc"), seed=2)
    obs = render_observations(scene, NoiseConfig(), seed=2)
    for i in range(scene.n_frames - 1):
        pred = warp_mask(obs.detections(i, "left")[0], obs.flows_ln[i])
        assert overlap(pred, obs.detections(i + 1, "left")[0]) > 0.9


def test_crossing_sequence_identities():
    cfg = SceneConfig(n_frames=20, n_objects=2, crossing=True, object_depth=(8.0, 20.0))
    scene = generate_scene(cfg, seed=0)
    obs = render_observations(scene, NoiseConfig(), seed=0)
    n = scene.n_frames
    state = track_sequence(
        [obs.detections(i, "left") for i in range(n)],
        [obs.detections(i, "right") for i in range(n)],
        obs.flows_ln,
        obs.flows_lr,
    )
    for t in state.all_tracks().values():
        labels = {m.instance_label for m in t.left_masks.values()} | {m.instance_label for m in t.right_masks.values()}
        assert len(labels) == 1
