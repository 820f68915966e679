import numpy as np
import pytest
from scipy import ndimage

from tcpad.errors import DimensionMismatch, SequenceTooShort
from tcpad.flow import (
    FlowField,
    FlowParams,
    aggregate_flow_blocks,
    compute_flow,
    compute_flow_sequence,
    flow_magnitude,
    read_external_flow,
)
from tcpad.grids import GridSpec
from tcpad.media_io import FrameSequence, write_tensor
from tcpad.tcp import KIND_FLOW


def smooth_texture(h=96, w=128, seed=1):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((h, w)), 6)
    img = (img - img.min()) / (img.max() - img.min())
    return (img * 200 + 25).astype(np.uint8)


def test_identical_frames_zero_flow():
    img = smooth_texture()
    field = compute_flow(img, img)
    assert float(flow_magnitude(field).max()) < 1e-3


def test_one_pixel_shift_oracle():
    img = smooth_texture()
    shifted = np.roll(img, 1, axis=1)  # content moves +1 px in x
    field = compute_flow(img, shifted)
    interior = (slice(8, -8), slice(8, -8))
    assert 0.8 <= float(np.median(field.u[interior])) <= 1.2
    assert -0.2 <= float(np.median(field.v[interior])) <= 0.2


def test_vertical_shift():
    img = smooth_texture(seed=2)
    shifted = np.roll(img, 1, axis=0)
    field = compute_flow(img, shifted)
    interior = (slice(8, -8), slice(8, -8))
    assert 0.8 <= float(np.median(field.v[interior])) <= 1.2
    assert -0.2 <= float(np.median(field.u[interior])) <= 0.2


def test_textureless_frames():
    img = np.full((64, 64), 80, dtype=np.uint8)
    field = compute_flow(img, img.copy())
    assert float(flow_magnitude(field).max()) < 1e-3


def test_flow_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        compute_flow(np.zeros((8, 8)), np.zeros((8, 9)))


def test_flow_deterministic():
    img = smooth_texture(seed=3)
    shifted = np.roll(img, 1, axis=1)
    a = compute_flow(img, shifted)
    b = compute_flow(img, shifted)
    assert a.u.tobytes() == b.u.tobytes() and a.v.tobytes() == b.v.tobytes()


def test_flow_sequence_threaded_matches_serial():
    rng = np.random.default_rng(5)
    frames = FrameSequence(rng.integers(0, 256, size=(4, 32, 48), dtype=np.uint8))
    serial = compute_flow_sequence(frames, FlowParams(levels=2, iters=20), max_workers=1)
    threaded = compute_flow_sequence(frames, FlowParams(levels=2, iters=20), max_workers=3)
    assert len(serial) == len(threaded) == 3
    for a, b in zip(serial, threaded):
        assert a.u.tobytes() == b.u.tobytes()


# ---------------------------------------------------------------------------
# Magnitude


def test_magnitude_three_four_five():
    field = FlowField(u=np.full((5, 5), 3.0), v=np.full((5, 5), 4.0))
    assert np.allclose(flow_magnitude(field), 5.0)


def test_magnitude_zero_field():
    field = FlowField(u=np.zeros((4, 4)), v=np.zeros((4, 4)))
    assert not flow_magnitude(field).any()


def test_magnitude_sign_flip_invariant():
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal((2, 6, 6))
    a = flow_magnitude(FlowField(u=u, v=v))
    b = flow_magnitude(FlowField(u=-u, v=-v))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Block aggregation


def test_aggregate_zero_flow():
    grid = GridSpec(2, 2, 8, 8)
    out = aggregate_flow_blocks(np.zeros((13, 8, 8)), grid, block_len=14)
    assert out.kind == KIND_FLOW
    assert out.values.shape == (14, 2, 2)
    assert not out.values.any()


def test_aggregate_window_sum_arithmetic():
    # cell (0,0) carries magnitude m, cell (1,1) carries 2m: the single window
    # sums 13 pairs, so raw aggregates are 13m and 26m; after min-max the
    # weaker cell must land exactly at 0.5.
    m = 0.37
    grid = GridSpec(2, 2, 8, 8)
    mags = np.zeros((13, 8, 8))
    mags[:, :4, :4] = m
    mags[:, 4:, 4:] = 2 * m
    out = aggregate_flow_blocks(mags, grid, block_len=14)
    assert out.values[7, 0, 0] == 0.5
    assert out.values[7, 1, 1] == 1.0
    assert out.values[7, 0, 1] == 0.0


def test_aggregate_dims_align_with_tcp_maps():
    from tcpad.quantizer import BinaryMapSequence
    from tcpad.tcp import tcp_map_sequence

    rng = np.random.default_rng(2)
    t_total, h, w = 20, 24, 30
    grid = GridSpec(3, 5, h, w)
    mags = rng.random((t_total - 1, h, w))
    flow_map = aggregate_flow_blocks(mags, grid, block_len=14)
    codes = BinaryMapSequence(rng.integers(0, 128, size=(t_total, 3, 5)), grid, bits=7)
    tcp_map = tcp_map_sequence(codes, block_len=14)
    assert flow_map.values.shape == tcp_map.values.shape


def test_aggregate_too_short():
    grid = GridSpec(2, 2, 8, 8)
    with pytest.raises(SequenceTooShort):
        aggregate_flow_blocks(np.zeros((12, 8, 8)), grid, block_len=14)


def test_aggregate_bounds():
    rng = np.random.default_rng(3)
    grid = GridSpec(2, 3, 12, 18)
    out = aggregate_flow_blocks(rng.random((25, 12, 18)), grid, block_len=14)
    assert out.values.min() >= 0.0 and out.values.max() <= 1.0


# ---------------------------------------------------------------------------
# External flow ingestion


def test_read_external_flow_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    tensor = rng.standard_normal((9, 48, 64, 2)).astype(np.float32)
    write_tensor(tmp_path / "flow.fmap", tensor)
    fields = read_external_flow(tmp_path / "flow.fmap")
    assert len(fields) == 9
    assert fields[0].u.shape == (48, 64)
    assert np.allclose(fields[3].u, tensor[3, :, :, 0])
    assert np.allclose(fields[3].v, tensor[3, :, :, 1])


def test_read_external_flow_bad_channels(tmp_path):
    write_tensor(tmp_path / "bad.fmap", np.zeros((9, 48, 64, 3), dtype=np.float32))
    with pytest.raises(DimensionMismatch):
        read_external_flow(tmp_path / "bad.fmap")


def test_read_external_flow_zero_tensor_zero_scores(tmp_path):
    write_tensor(tmp_path / "zero.fmap", np.zeros((13, 16, 16, 2), dtype=np.float32))
    fields = read_external_flow(tmp_path / "zero.fmap")
    mags = np.stack([flow_magnitude(f) for f in fields])
    out = aggregate_flow_blocks(mags, GridSpec(2, 2, 16, 16), block_len=14)
    assert not out.values.any()
