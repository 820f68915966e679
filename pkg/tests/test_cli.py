import json

import numpy as np
import pytest

from tcpad.cli import main
from tcpad.config import PipelineConfig, config_from_mapping, parse_config
from tcpad.errors import ConfigParseError
from tcpad.media_io import SyntheticSpec, generate_synthetic, write_frame_sequence, write_tensor


# ---------------------------------------------------------------------------
# Config


def test_config_defaults_match_reference_setup():
    cfg = PipelineConfig()
    assert cfg.bits == 7
    assert cfg.block_len == 14 and cfg.block_stride == 1
    assert cfg.alpha == cfg.beta == 0.5
    assert cfg.bg_threshold == 0.1
    assert cfg.orientation == "inverted"
    assert cfg.itq_iters == 50
    assert cfg.quantizer == "itq"
    assert cfg.feature_source == "toy" and cfg.flow_source == "builtin"


def test_config_parse_file(tmp_path):
    text = "# comment\nbits = 5\nalpha=0.2\nbeta = 0.8\n\nquantizer=kmeans\n"
    (tmp_path / "c.cfg").write_text(text)
    cfg = parse_config(tmp_path / "c.cfg")
    assert cfg.bits == 5 and cfg.alpha == 0.2 and cfg.quantizer == "kmeans"


@pytest.mark.parametrize(
    "mapping",
    [
        {"no_such_key": "1"},
        {"bits": "seven"},
        {"alpha": "0.8", "beta": "0.8"},  # alpha + beta > 1
        {"orientation": "upside-down"},
        {"quantizer": "vq"},
        {"flow_scale": "1.5"},
        {"feature_source": "guess"},
    ],
)
def test_config_rejects_bad_values(mapping):
    with pytest.raises(ConfigParseError):
        config_from_mapping(mapping)


def test_config_duplicate_key(tmp_path):
    (tmp_path / "d.cfg").write_text("bits=7\nbits=6\n")
    with pytest.raises(ConfigParseError):
        parse_config(tmp_path / "d.cfg")


def test_config_source_paths():
    cfg = config_from_mapping({"feature_source": "fmap:/x/f.fmap", "flow_source": "file:/x/fl.fmap"})
    assert cfg.feature_fmap_path() == "/x/f.fmap"
    assert cfg.flow_file_path() == "/x/fl.fmap"


# ---------------------------------------------------------------------------
# Small end-to-end fixtures (tiny dataset keeps the flow solver cheap)


def small_dataset(tmp_path, t=16, h=32, w=40):
    spec = SyntheticSpec(
        seed=3, n_frames=t, height=h, width=w, n_normal_blobs=2,
        normal_speed=1.0, anomaly_speed=4.0, anomaly_onset=4, blob_radius=4,
    )
    frames, gt = generate_synthetic(spec)
    data = tmp_path / "data"
    data.mkdir()
    write_frame_sequence(data / "frames", frames)
    write_tensor(data / "masks.fmap", gt.pixel_masks.astype(np.uint8))
    return data


def small_config(tmp_path, **overrides):
    entries = {"grid_rows": 4, "grid_cols": 5, "flow_iters": 30, "flow_levels": 2}
    entries.update(overrides)
    path = tmp_path / "small.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in entries.items()))
    return path


def test_run_on_frames_and_stage_equivalence(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path)
    run_dir = tmp_path / "run"
    rc = main([
        "run", "--config", str(cfg), "--out", str(run_dir),
        "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap"), "--json",
    ])
    assert rc == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"frame_level", "pixel_level"}

    # the same pipeline assembled stage by stage must be byte-identical
    stage_dir = tmp_path / "stages"
    stage_dir.mkdir()
    base = ["--config", str(cfg)]
    assert main(["itq-train", *base, "--frames", str(data / "frames"),
                 "--out", str(stage_dir / "quantizer.model")]) == 0
    assert main(["encode", *base, "--features", str(stage_dir / "features.fmap"),
                 "--model", str(stage_dir / "quantizer.model"),
                 "--out", str(stage_dir / "codes.fmap")]) == 0
    assert main(["tcp", *base, "--codes", str(stage_dir / "codes.fmap"),
                 "--out", str(stage_dir / "tcpmap.fmap")]) == 0
    assert main(["flow", *base, "--frames", str(data / "frames"),
                 "--out", str(stage_dir / "flowmap.fmap")]) == 0
    assert main(["fuse", *base, "--tcp", str(stage_dir / "tcpmap.fmap"),
                 "--flow", str(stage_dir / "flowmap.fmap"),
                 "--height", "32", "--width", "40",
                 "--out", str(stage_dir / "mseg.fmap")]) == 0
    assert main(["eval", *base, "--mseg", str(stage_dir / "mseg.fmap"),
                 "--gt", str(data / "masks.fmap"),
                 "--out", str(stage_dir / "results.csv")]) == 0
    capsys.readouterr()

    for name in ["features.fmap", "quantizer.model", "codes.fmap", "tcpmap.fmap",
                 "flowmap.fmap", "mseg.fmap", "results.csv", "results_pixel.csv"]:
        assert (stage_dir / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_run_tcp_only_ablation(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path, alpha=0.0, beta=1.0)
    rc = main([
        "run", "--config", str(cfg), "--out", str(tmp_path / "run"),
        "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap"), "--json",
    ])
    assert rc == 0
    metrics = json.loads(capsys.readouterr().out)
    assert 0.0 <= metrics["frame_level"]["auc"] <= 1.0

    # alpha=0 means the fused map is exactly the upsampled appearance map
    from tcpad.media_io import read_tensor
    from tcpad.tcp import KIND_NORMALIZED_TCP, ScoreMapSequence, upsample_map
    from tcpad.grids import GridSpec

    tcpmap = read_tensor(tmp_path / "run" / "tcpmap.fmap").data
    mseg = read_tensor(tmp_path / "run" / "mseg.fmap").data
    grid = GridSpec(4, 5, 32, 40)
    up = upsample_map(
        ScoreMapSequence(tcpmap.astype(np.float64), grid, KIND_NORMALIZED_TCP), 32, 40
    )
    assert np.array_equal(mseg, up.values.astype(np.float32))


def test_run_kmeans_ablation(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path, quantizer="kmeans", bits=5)
    rc = main([
        "run", "--config", str(cfg), "--out", str(tmp_path / "run"),
        "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap"), "--json",
    ])
    assert rc == 0
    assert (tmp_path / "run" / "quantizer.model").read_bytes().startswith(b"KMC1")
    json.loads(capsys.readouterr().out)


def test_run_external_flow_file(tmp_path, capsys):
    data = small_dataset(tmp_path)
    ext = tmp_path / "ext_flow.fmap"
    rng = np.random.default_rng(0)
    write_tensor(ext, rng.standard_normal((15, 32, 40, 2)).astype(np.float32))
    cfg = small_config(tmp_path, flow_source=f"file:{ext}")
    rc = main([
        "run", "--config", str(cfg), "--out", str(tmp_path / "run"),
        "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap"),
    ])
    assert rc == 0
    capsys.readouterr()


def test_synth_subcommand_writes_dataset(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "ds"), "--frames", "8", "--height", "32",
               "--width", "32", "--onset", "4", "--radius", "4", "--anomaly-speed", "4"])
    assert rc == 0
    pgms = sorted((tmp_path / "ds" / "frames").glob("*.pgm"))
    assert len(pgms) == 8
    assert (tmp_path / "ds" / "masks.fmap").exists()
    capsys.readouterr()


def test_tcp_signal_out(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(run_dir),
                 "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap")]) == 0
    assert main(["tcp", "--config", str(cfg), "--codes", str(run_dir / "codes.fmap"),
                 "--out", str(tmp_path / "t.fmap"), "--signal-out", str(tmp_path / "sig.csv")]) == 0
    lines = (tmp_path / "sig.csv").read_text().splitlines()
    assert lines[0] == "frame,signal"
    assert len(lines) == 17  # header + 16 frames
    capsys.readouterr()


def test_fuse_heatmap_dump(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(run_dir),
                 "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap")]) == 0
    assert main(["fuse", "--config", str(cfg), "--tcp", str(run_dir / "tcpmap.fmap"),
                 "--flow", str(run_dir / "flowmap.fmap"), "--height", "32", "--width", "40",
                 "--out", str(tmp_path / "m.fmap"), "--heatmap-dir", str(tmp_path / "heat")]) == 0
    assert len(list((tmp_path / "heat").glob("*.pgm"))) == 16
    capsys.readouterr()


# ---------------------------------------------------------------------------
# Exit codes and locking


def test_exit_code_missing_config(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "r"), "--synth"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_exit_code_bad_config(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("bits=99\n")
    rc = main(["run", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "r"), "--synth"])
    assert rc == 1
    capsys.readouterr()


def test_exit_code_conflicting_inputs(tmp_path, capsys):
    rc = main(["run", "--out", str(tmp_path / "r"), "--synth", "--frames", "x"])
    assert rc == 1
    rc = main(["run", "--out", str(tmp_path / "r")])
    assert rc == 1
    capsys.readouterr()


def test_run_dir_lock(tmp_path, capsys):
    data = small_dataset(tmp_path)
    cfg = small_config(tmp_path)
    run_dir = tmp_path / "locked"
    run_dir.mkdir()
    (run_dir / ".lock").write_text("1234\n")
    rc = main(["run", "--config", str(cfg), "--out", str(run_dir),
               "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap")])
    assert rc == 2
    assert (run_dir / ".lock").exists()  # a foreign lock is never removed
    capsys.readouterr()


def test_stage_error_prefix(tmp_path, capsys):
    data = small_dataset(tmp_path, t=10)  # too short for block_len 14
    cfg = small_config(tmp_path)
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "r"),
               "--frames", str(data / "frames"), "--gt", str(data / "masks.fmap")])
    assert rc == 1
    assert "tcp:" in capsys.readouterr().err
