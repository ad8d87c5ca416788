import numpy as np
import pytest

from stereotraj.exceptions import EmptyPrediction, ParseError
from stereotraj.tracking import (
    FlowField,
    InstanceMask,
    masks_from_label_image,
    masks_to_label_image,
    overlap,
    read_flo,
    read_pgm,
    warp_mask,
    write_flo,
    write_pgm,
)


def square(x0, y0, size=10, shape=(40, 40), frame=0, side="left", label=1):
    px = np.zeros(shape, bool)
    px[y0 : y0 + size, x0 : x0 + size] = True
    return InstanceMask(frame, side, px, label)


def uniform_flow(shape, u, v, src=(0, "left"), dst=(1, "left")):
    data = np.zeros((*shape, 2), np.float32)
    data[..., 0], data[..., 1] = u, v
    return FlowField(src[0], src[1], dst[0], dst[1], data)


def test_zero_flow_is_identity():
    m = square(5, 5)
    out = warp_mask(m, FlowField.zeros(m.shape, 0, "left", 1, "left"))
    assert np.array_equal(out.pixels, m.pixels)
    assert (out.frame_index, out.side) == (1, "left")


def test_uniform_shift_and_border_clipping():
    m = square(25, 5)
    out = warp_mask(m, uniform_flow(m.shape, 5, 0))
    expected = np.zeros(m.shape, bool)
    expected[5:15, 30:40] = True
    assert np.array_equal(out.pixels, expected)
    clipped = warp_mask(square(28, 5), uniform_flow(m.shape, 5, 0))
    assert clipped.area == 10 * 7  # columns 33..39 survive


def test_half_pixel_rounds_up():
    m = square(0, 0, size=1)
    out = warp_mask(m, uniform_flow(m.shape, 0.5, 1.49))
    assert out.pixels[1, 1] and out.area == 1
    out = warp_mask(m, uniform_flow(m.shape, 2.5, 0.0))
    assert out.pixels[0, 3]


def test_warp_out_of_image_is_empty_prediction():
    m = square(5, 5)
    with pytest.raises(EmptyPrediction):
        warp_mask(m, uniform_flow(m.shape, 100, 0))


def test_warp_checks_flow_source_and_shape():
    m = square(5, 5)
    with pytest.raises(ValueError):
        warp_mask(m, uniform_flow(m.shape, 0, 0, src=(3, "left")))
    with pytest.raises(ValueError):
        warp_mask(m, uniform_flow((20, 20), 0, 0))


def test_overlap_counts():
    a = square(5, 5)
    assert overlap(a, a) == 1.0
    assert overlap(a, square(25, 25)) == 0.0
    shifted = square(10, 5)
    assert overlap(a, shifted) == pytest.approx(50 / 150)
    assert overlap(shifted, a) == overlap(a, shifted)
    assert overlap(a, shifted, mode="iop") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        overlap(a, shifted, mode="dice")


def test_overlap_empty_union_is_zero():
    e = InstanceMask(0, "left", np.zeros((5, 5), bool))
    assert overlap(e, e) == 0.0


def test_overlap_matches_pixel_counting(rng):
    for _ in range(50):
        a = InstanceMask(0, "left", rng.random((30, 30)) < 0.3)
        b = InstanceMask(0, "left", rng.random((30, 30)) < 0.3)
        inter = sum(1 for y in range(30) for x in range(30) if a.pixels[y, x] and b.pixels[y, x])
        union = sum(1 for y in range(30) for x in range(30) if a.pixels[y, x] or b.pixels[y, x])
        assert overlap(a, b) == pytest.approx(inter / union)


def test_label_image_round_trip_and_min_area():
    labels = np.zeros((30, 30), np.int64)
    labels[0:10, 0:10] = 3
    labels[20:24, 20:24] = 7  # 16 px, below the default area bound
    masks = masks_from_label_image(labels, 4, "right")
    assert [m.instance_label for m in masks] == [3]
    assert masks[0].frame_index == 4 and masks[0].side == "right"
    assert len(masks_from_label_image(labels, 4, "right", min_area=1)) == 2
    back = masks_to_label_image(masks_from_label_image(labels, 0, "left", min_area=1))
    assert np.array_equal(back, labels)


@pytest.mark.parametrize("maxval", [200, 4000])
def test_pgm_round_trip_bit_exact(tmp_path, rng, maxval):
    labels = rng.integers(0, maxval, size=(17, 23))
    p = tmp_path / "m.pgm"
    write_pgm(p, labels)
    assert np.array_equal(read_pgm(p), labels)
    write_pgm(tmp_path / "again.pgm", read_pgm(p))
    assert (tmp_path / "again.pgm").read_bytes() == p.read_bytes()


def test_pgm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 2\n255\n" + bytes([0, 1, 2, 3, 4, 5]))
    np.testing.assert_array_equal(read_pgm(p), [[0, 1, 2], [3, 4, 5]])
    p.write_bytes(b"P5\n3 2\n255\n" + bytes([0, 1]))
    with pytest.raises(ParseError):
        read_pgm(p)
    p.write_bytes(b"P2\n3 2\n255\n0 1 2 3 4 5")
    with pytest.raises(ParseError):
        read_pgm(p)


def test_flo_round_trip_bit_exact(tmp_path, rng):
    data = rng.normal(size=(7, 9, 2)).astype(np.float32)
    p = tmp_path / "f.flo"
    write_flo(p, data)
    raw = p.read_bytes()
    assert raw[:4] == np.float32(202021.25).tobytes() and len(raw) == 12 + data.nbytes
    assert np.array_equal(read_flo(p), data)


def test_flo_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(b"abcd" + np.array([2, 2], "<i4").tobytes())
    with pytest.raises(ParseError):
        read_flo(p)
    p.write_bytes(np.float32(202021.25).tobytes() + np.array([2, 2], "<i4").tobytes() + b"\0" * 8)
    with pytest.raises(ParseError):
        read_flo(p)
