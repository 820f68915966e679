"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The end-to-end benchmark runs the full CLI pipeline twice on the
seed-fixed synthetic dataset (60 frames, one fast anomalous blob).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from tcpad.cli import main
from tcpad.errors import SequenceTooShort
from tcpad.evaluation import (
    auc,
    classify_pixel_frame,
    eer,
    frame_level_roc,
)
from tcpad.flow import FlowParams, compute_flow, flow_magnitude
from tcpad.grids import GridSpec
from tcpad.media_io import GroundTruth, SyntheticSpec, extract_toy_features, generate_synthetic
from tcpad.quantizer import (
    encode_bits,
    encode_sequence,
    itq_train,
    pca_projection,
    random_orthogonal,
    reservoir_sample,
)
from tcpad.tcp import (
    BlockHistogram,
    KIND_FUSED,
    ScoreMapSequence,
    block_histogram,
    extract_blocks,
    tcp_raw,
)


def ok(name):
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# ITQ optimization


def test_itq_optimization_loss_and_orthogonality():
    samples = np.random.default_rng(0).standard_normal((1000, 16))
    start = time.monotonic()
    model = itq_train(samples, bits=7, iters=50, seed=3)
    elapsed = time.monotonic() - start

    # independent replay of the iteration, recomputing the loss from scratch
    mean, proj = pca_projection(samples, 7)
    v = (samples - mean) @ proj
    rot = random_orthogonal(7, 3)
    losses = []
    for _ in range(50):
        b = np.where(v @ rot > 0, 1.0, -1.0)
        u, _, vh = np.linalg.svd(b.T @ v)
        rot = vh.T @ u.T
        losses.append(float(np.sqrt(((b - v @ rot) ** 2).sum())))
    assert np.all(np.diff(losses) <= 1e-9), "quantization loss increased"
    assert np.allclose(losses, model.losses, atol=1e-9)

    ortho_err = float(np.abs(model.rotation.T @ model.rotation - np.eye(7)).max())
    assert ortho_err < 1e-8
    assert elapsed < 10.0
    ok(f"itq-optimization (ortho err {ortho_err:.2e}, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Thresholded-sigmoid bits vs the sign rule


def test_sigmoid_threshold_equals_sign_rule():
    mismatches = 0
    total = 0
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
        proj = q[:, :7]
        rot = random_orthogonal(7, seed)
        mean = rng.standard_normal(16)
        from tcpad.quantizer import HashModel

        model = HashModel(mean=mean, projection=proj, rotation=rot, bits=7)
        xs = rng.standard_normal((20_000, 16)) * rng.uniform(0.1, 10.0)
        z = (xs - mean) @ (proj @ rot)
        oracle = (z > 0).astype(np.int64) @ (1 << np.arange(7))
        got = np.fromiter((encode_bits(x, model) for x in xs), dtype=np.int64)
        mismatches += int(np.sum(got != oracle))
        total += len(xs)
    assert total == 100_000
    assert mismatches == 0
    ok(f"sigmoid-threshold-vs-sign-rule ({total} vectors, 0 mismatches)")


# ---------------------------------------------------------------------------
# Irregularity measure vs brute force


def test_irregularity_oracle_and_closed_forms():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n_bins = int(rng.choice([32, 128]))
        counts = np.bincount(rng.integers(0, n_bins, size=14), minlength=n_bins)
        dominant = max(counts.tolist())
        expected = float(sum((c - dominant) ** 2 for c in counts.tolist()))
        assert tcp_raw(BlockHistogram(counts, 14)) == expected

    uniform = np.full(128, 2, dtype=np.int64)
    assert tcp_raw(BlockHistogram(uniform, int(uniform.sum()))) == 0.0
    single = np.zeros(128, dtype=np.int64)
    single[42] = 14
    assert tcp_raw(BlockHistogram(single, 14)) == 24892.0
    ok("irregularity-brute-force-oracle (1000 histograms exact, closed forms)")


# ---------------------------------------------------------------------------
# Histogram mass conservation over a full synthetic run


def test_histogram_mass_conservation_full_run():
    spec = SyntheticSpec(
        seed=7, n_frames=60, height=96, width=128, n_normal_blobs=3,
        normal_speed=1.0, anomaly_speed=4.0, anomaly_onset=10, blob_radius=9,
    )
    frames, _ = generate_synthetic(spec)
    fm = extract_toy_features(frames, GridSpec(8, 5, 96, 128))
    model = itq_train(
        reservoir_sample(fm.flat_vectors().astype(np.float64), 100_000, seed=0),
        bits=7, iters=50, seed=0,
    )
    codes = encode_sequence(fm, model)
    blocks = extract_blocks(codes, block_len=14, stride=1)
    assert len(blocks) == (60 - 14 + 1) * 40
    for block in blocks:
        hist = block_histogram(block, bits=7)
        assert hist.counts.sum() == 14
    ok(f"histogram-mass-conservation ({len(blocks)} blocks sum to 14)")


# ---------------------------------------------------------------------------
# Flow sanity


def test_flow_sanity():
    from scipy import ndimage

    rng = np.random.default_rng(1)
    img = ndimage.gaussian_filter(rng.random((96, 128)), 6)
    img = ((img - img.min()) / (img.max() - img.min()) * 200 + 25).astype(np.uint8)

    same = compute_flow(img, img, FlowParams())
    assert float(flow_magnitude(same).max()) < 1e-3

    shifted = np.roll(img, 1, axis=1)
    field = compute_flow(img, shifted, FlowParams())
    median_u = float(np.median(field.u[8:-8, 8:-8]))
    assert 0.8 <= median_u <= 1.2
    ok(f"flow-sanity (identical max 0, shift median u {median_u:.3f})")


# ---------------------------------------------------------------------------
# Evaluation harness


def test_evaluation_harness():
    labels = np.array([True, True, False, False])
    scores = np.array([0.9, 0.4, 0.6, 0.1])[:, None, None]
    mseg = ScoreMapSequence(values=scores, grid=GridSpec(1, 1, 1, 1), kind=KIND_FUSED)
    curve = frame_level_roc(mseg, GroundTruth(frame_labels=labels))
    assert np.isclose(curve.auc, 0.75)

    chance = [(0.0, 0.0), (1.0, 1.0)]
    assert auc(chance) == 0.5 and eer(chance) == 0.5

    sc = np.zeros((10, 10))
    mask = np.ones((10, 10), dtype=bool)
    sc[:4, :] = 0.9  # covers 40 of 100 GT pixels
    assert classify_pixel_frame(sc, mask, abnormal=True, threshold=0.5) == "tp"
    sc[3, 9] = 0.0  # 39 covered
    assert classify_pixel_frame(sc, mask, abnormal=True, threshold=0.5) == "fp"
    ok("evaluation-harness (AUC 0.75 exact, chance 0.5/0.5, 40% boundary)")


# ---------------------------------------------------------------------------
# End-to-end benchmark + determinism (two full CLI runs)


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    import io
    from contextlib import redirect_stdout

    root = tmp_path_factory.mktemp("bench")
    outputs = []
    timings = []
    for name in ("a", "b"):
        start = time.monotonic()
        buf = io.StringIO()
        with redirect_stdout(buf):
            rc = main(["run", "--out", str(root / name), "--synth", "--json"])
        timings.append(time.monotonic() - start)
        assert rc == 0
        outputs.append(buf.getvalue())
    return root, outputs, timings


def test_end_to_end_synthetic_benchmark(benchmark_runs):
    root, outputs, timings = benchmark_runs
    metrics = json.loads(outputs[0])
    frame_auc = metrics["frame_level"]["auc"]
    pixel_auc = metrics["pixel_level"]["auc"]
    assert frame_auc >= 0.90
    assert pixel_auc >= 0.60
    assert timings[0] < 60.0
    ok(
        f"end-to-end-benchmark (frame AUC {frame_auc:.3f} >= 0.90, "
        f"pixel AUC {pixel_auc:.3f} >= 0.60, {timings[0]:.1f}s < 60s)"
    )


def test_end_to_end_determinism(benchmark_runs):
    root, outputs, _ = benchmark_runs
    assert outputs[0] == outputs[1]
    artifacts = [
        "masks.fmap", "features.fmap", "quantizer.model", "codes.fmap",
        "tcpmap.fmap", "flowmap.fmap", "mseg.fmap", "results.csv", "results_pixel.csv",
    ]
    for name in artifacts:
        a = (root / "a" / name).read_bytes()
        b = (root / "b" / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"
    frames_a = sorted((root / "a" / "frames").glob("*.pgm"))
    frames_b = sorted((root / "b" / "frames").glob("*.pgm"))
    assert [p.name for p in frames_a] == [p.name for p in frames_b]
    for pa, pb in zip(frames_a, frames_b):
        assert pa.read_bytes() == pb.read_bytes()
    ok(f"determinism ({len(artifacts)} artifacts + {len(frames_a)} frames byte-identical)")
