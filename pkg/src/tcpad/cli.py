"""Command-line pipeline: synthesize or load frames, quantize, score, fuse, evaluate.

Every stage reads and writes FMAP v1 artifacts under fixed names, so `run`
(the whole chain) is byte-identical to invoking the stage subcommands one by
one on the same run directory. Validation failures exit 1, I/O failures exit
2. The TCP_THREADS environment variable caps worker parallelism.
"""

import argparse
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import evaluation
from .config import (
    FEATURES_TOY,
    FLOW_BUILTIN,
    QUANTIZER_ITQ,
    PipelineConfig,
    parse_config,
)
from .errors import (
    ConfigParseError,
    DimensionMismatch,
    IoError,
    PipelineError,
)
from .flow import (
    aggregate_flow_blocks,
    compute_flow_sequence,
    flow_magnitude,
    flow_worker_cap,
    read_external_flow,
)
from .fusion import FusionWeights, fuse_maps
from .grids import FeatureMapSequence, GridSpec
from .media_io import (
    DTYPE_F32,
    FrameSequence,
    SyntheticSpec,
    extract_toy_features,
    generate_synthetic,
    load_frame_sequence,
    load_ground_truth,
    read_tensor,
    write_frame_sequence,
    write_pgm,
    write_tensor,
)
from .quantizer import (
    DEFAULT_TRAIN_SAMPLE_CAP,
    BinaryMapSequence,
    Codebook,
    encode_with_model,
    itq_train,
    kmeans_codebook,
    load_quantizer_model,
    reservoir_sample,
    save_codebook,
    save_hash_model,
)
from .tcp import (
    KIND_FLOW,
    KIND_FUSED,
    KIND_NORMALIZED_TCP,
    ScoreMapSequence,
    frame_signal,
    tcp_map_sequence,
    upsample_map,
)

log = logging.getLogger("tcpad")

# Benchmark dataset: an early onset keeps most abnormal frames inside the
# centered-window range (the trailing half-window scores 0 by construction).
DEFAULT_SYNTH = SyntheticSpec(
    seed=7,
    n_frames=60,
    height=96,
    width=128,
    n_normal_blobs=3,
    normal_speed=1.0,
    anomaly_speed=4.0,
    anomaly_onset=10,
    blob_radius=9,
)

ART_FRAMES = "frames"
ART_MASKS = "masks.fmap"
ART_FEATURES = "features.fmap"
ART_MODEL = "quantizer.model"
ART_CODES = "codes.fmap"
ART_TCPMAP = "tcpmap.fmap"
ART_FLOWMAP = "flowmap.fmap"
ART_MSEG = "mseg.fmap"
ART_RESULTS = "results.csv"


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError as e:
        raise type(e)(f"{name}: {e}") from e


@contextmanager
def _run_lock(run_dir: Path):
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IoError(f"{run_dir} is owned by another process (remove {lock} if stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _flow_workers() -> int:
    return max(1, min(os.cpu_count() or 1, flow_worker_cap(default=4)))


# ---------------------------------------------------------------------------
# Stage cores (file-driven; shared by `run` and the stage subcommands)


def stage_features(cfg: PipelineConfig, frames_dir, out_path):
    """Produce features.fmap: toy descriptors of the frames, or a copy of the
    externally extracted tensor named by feature_source."""
    src = cfg.feature_fmap_path()
    if src is not None:
        read_tensor(src)  # validate before adopting
        if Path(src).resolve() != Path(out_path).resolve():
            shutil.copyfile(src, out_path)
        return
    frames = load_frame_sequence(frames_dir)
    grid = GridSpec(cfg.grid_rows, cfg.grid_cols, frames.height, frames.width)
    fm = extract_toy_features(frames, grid)
    write_tensor(out_path, fm.features)


def _load_features(path, frame_h=None, frame_w=None) -> FeatureMapSequence:
    tf = read_tensor(path)
    if tf.data.ndim != 4 or tf.dtype_code != DTYPE_F32:
        raise DimensionMismatch(f"{path}: features must be a rank-4 float32 tensor")
    rows, cols = tf.data.shape[1], tf.data.shape[2]
    # frame dims only matter for upsampling; placeholders keep the grid valid
    grid = GridSpec(rows, cols, frame_h or rows, frame_w or cols)
    return FeatureMapSequence(features=tf.data, grid=grid)


def stage_train(cfg: PipelineConfig, features_path, model_path, sample_cap=DEFAULT_TRAIN_SAMPLE_CAP):
    fm = _load_features(features_path)
    samples = reservoir_sample(fm.flat_vectors().astype(np.float64), sample_cap, seed=cfg.seed)
    if cfg.quantizer == QUANTIZER_ITQ:
        model = itq_train(samples, cfg.bits, iters=cfg.itq_iters, seed=cfg.seed)
        save_hash_model(model_path, model)
    else:
        codebook = kmeans_codebook(samples, cfg.bits, seed=cfg.seed)
        save_codebook(model_path, codebook)


def stage_encode(cfg: PipelineConfig, features_path, model_path, codes_path):
    fm = _load_features(features_path)
    model = load_quantizer_model(model_path)
    bm = encode_with_model(fm, model)
    if bm.bits <= 8:
        write_tensor(codes_path, bm.codes.astype(np.uint8))
    else:
        write_tensor(codes_path, bm.codes.astype(np.float32))


def _load_codes(path, cfg: PipelineConfig) -> BinaryMapSequence:
    tf = read_tensor(path)
    if tf.data.ndim != 3:
        raise DimensionMismatch(f"{path}: codes must be a rank-3 tensor")
    codes = np.rint(tf.data).astype(np.int64) if tf.dtype_code == DTYPE_F32 else tf.data.astype(np.int64)
    rows, cols = codes.shape[1], codes.shape[2]
    return BinaryMapSequence(codes=codes, grid=GridSpec(rows, cols, rows, cols), bits=cfg.bits)


def stage_tcp(cfg: PipelineConfig, codes_path, out_path, signal_path=None):
    bm = _load_codes(codes_path, cfg)
    score = tcp_map_sequence(
        bm,
        block_len=cfg.block_len,
        stride=cfg.block_stride,
        orientation=cfg.orientation,
        bg_threshold=cfg.bg_threshold,
    )
    write_tensor(out_path, score.values.astype(np.float32))
    if signal_path is not None:
        signal = frame_signal(score)
        lines = ["frame,signal"] + [f"{t},{s:.9g}" for t, s in enumerate(signal)]
        Path(signal_path).write_text("\n".join(lines) + "\n", encoding="ascii")


def stage_flow(cfg: PipelineConfig, frames_dir, out_path, grid_rows=None, grid_cols=None):
    rows = grid_rows or cfg.grid_rows
    cols = grid_cols or cfg.grid_cols
    external = cfg.flow_file_path()
    if external is not None:
        fields = read_external_flow(external)
        if frames_dir is not None:
            frames = load_frame_sequence(frames_dir)
            if len(fields) != frames.n_frames - 1 or fields[0].u.shape != (frames.height, frames.width):
                raise DimensionMismatch(
                    f"{external}: flow dims do not match the {frames.n_frames} frames of "
                    f"{frames.height}x{frames.width}"
                )
    else:
        if frames_dir is None:
            raise ConfigParseError("builtin flow needs a frames directory")
        frames = load_frame_sequence(frames_dir)
        fields = compute_flow_sequence(frames, cfg.flow_params(), max_workers=_flow_workers())
    mags = np.stack([flow_magnitude(f) for f in fields])
    grid = GridSpec(rows, cols, mags.shape[1], mags.shape[2])
    score = aggregate_flow_blocks(mags, grid, block_len=cfg.block_len, stride=cfg.block_stride)
    write_tensor(out_path, score.values.astype(np.float32))


def _load_score_map(path, kind, frame_h=None, frame_w=None) -> ScoreMapSequence:
    tf = read_tensor(path)
    if tf.data.ndim != 3 or tf.dtype_code != DTYPE_F32:
        raise DimensionMismatch(f"{path}: score maps must be rank-3 float32 tensors")
    rows, cols = tf.data.shape[1], tf.data.shape[2]
    grid = GridSpec(rows, cols, frame_h or rows, frame_w or cols)
    return ScoreMapSequence(values=tf.data.astype(np.float64), grid=grid, kind=kind)


def stage_fuse(cfg: PipelineConfig, tcp_path, flow_path, frame_h, frame_w, out_path, heatmap_dir=None):
    tcp_map = _load_score_map(tcp_path, KIND_NORMALIZED_TCP, frame_h, frame_w)
    flow_map = _load_score_map(flow_path, KIND_FLOW, frame_h, frame_w)
    tcp_up = upsample_map(tcp_map, frame_h, frame_w)
    flow_up = upsample_map(flow_map, frame_h, frame_w)
    fused = fuse_maps(flow_up, tcp_up, FusionWeights(alpha=cfg.alpha, beta=cfg.beta))
    write_tensor(out_path, fused.values.astype(np.float32))
    if heatmap_dir is not None:
        d = Path(heatmap_dir)
        d.mkdir(parents=True, exist_ok=True)
        for t in range(fused.n_frames):
            img = np.rint(np.clip(fused.values[t], 0.0, 1.0) * 255.0).astype(np.uint8)
            write_pgm(d / f"{t + 1:06d}.pgm", img)


def stage_eval(cfg: PipelineConfig, mseg_path, gt_path, out_csv, svg=False):
    tf = read_tensor(mseg_path)
    if tf.data.ndim != 3 or tf.dtype_code != DTYPE_F32:
        raise DimensionMismatch(f"{mseg_path}: fused maps must be rank-3 float32 tensors")
    h, w = tf.data.shape[1], tf.data.shape[2]
    mseg = ScoreMapSequence(
        values=tf.data.astype(np.float64), grid=GridSpec(h, w, h, w), kind=KIND_FUSED
    )
    gt = load_ground_truth(gt_path)
    frame_curve = evaluation.frame_level_roc(mseg, gt)
    pixel_curve = evaluation.pixel_level_roc(mseg, gt)
    out_csv = Path(out_csv)
    pixel_csv = out_csv.with_name(out_csv.stem + "_pixel" + out_csv.suffix)
    evaluation.export_results(frame_curve, out_csv, out_csv.with_suffix(".svg") if svg else None)
    evaluation.export_results(pixel_curve, pixel_csv, pixel_csv.with_suffix(".svg") if svg else None)
    return frame_curve, pixel_curve


def _emit_metrics(frame_curve, pixel_curve, as_json: bool):
    if as_json:
        payload = {
            "frame_level": {"auc": frame_curve.auc, "eer": frame_curve.eer},
            "pixel_level": {"auc": pixel_curve.auc, "eer": pixel_curve.eer},
        }
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"frame-level  auc={frame_curve.auc:.6f}  eer={frame_curve.eer:.6f}")
        print(f"pixel-level  auc={pixel_curve.auc:.6f}  eer={pixel_curve.eer:.6f}")


# ---------------------------------------------------------------------------
# Subcommand handlers


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return parse_config(args.config)
    return PipelineConfig()


def _synth_spec(args) -> SyntheticSpec:
    return SyntheticSpec(
        seed=args.seed,
        n_frames=args.frames,
        height=args.height,
        width=args.width,
        n_normal_blobs=args.blobs,
        normal_speed=args.normal_speed,
        anomaly_speed=args.anomaly_speed,
        anomaly_onset=args.onset,
        blob_radius=args.radius,
    )


def cmd_synth(args) -> int:
    spec = _synth_spec(args)
    frames, gt = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_frame_sequence(out / ART_FRAMES, frames)
    write_tensor(out / ART_MASKS, gt.pixel_masks.astype(np.uint8))
    log.info("wrote %d frames (%dx%d) to %s", frames.n_frames, frames.height, frames.width, out)
    return 0


def cmd_itq_train(args) -> int:
    cfg = _load_config(args)
    if args.features:
        features_path = args.features
    else:
        features_path = Path(args.out).parent / ART_FEATURES
        stage_features(cfg, args.frames, features_path)
    stage_train(cfg, features_path, args.out, sample_cap=args.sample_cap)
    log.info("trained %s model -> %s", cfg.quantizer, args.out)
    return 0


def cmd_encode(args) -> int:
    cfg = _load_config(args)
    if args.features:
        features_path = args.features
    else:
        features_path = args.features_out or Path(args.out).parent / ART_FEATURES
        stage_features(cfg, args.frames, features_path)
    stage_encode(cfg, features_path, args.model, args.out)
    log.info("encoded prototype maps -> %s", args.out)
    return 0


def cmd_tcp(args) -> int:
    cfg = _load_config(args)
    stage_tcp(cfg, args.codes, args.out, signal_path=args.signal_out)
    log.info("temporal code-pattern maps -> %s", args.out)
    return 0


def cmd_flow(args) -> int:
    cfg = _load_config(args)
    stage_flow(cfg, args.frames, args.out)
    log.info("flow score maps -> %s", args.out)
    return 0


def cmd_fuse(args) -> int:
    cfg = _load_config(args)
    stage_fuse(cfg, args.tcp, args.flow, args.height, args.width, args.out, heatmap_dir=args.heatmap_dir)
    log.info("fused maps -> %s", args.out)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    frame_curve, pixel_curve = stage_eval(cfg, args.mseg, args.gt, args.out, svg=args.svg)
    _emit_metrics(frame_curve, pixel_curve, args.json)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    if args.synth and args.frames:
        raise ConfigParseError("pass either --synth or --frames, not both")
    if not args.synth and not args.frames:
        raise ConfigParseError("pass --synth or --frames DIR")
    if args.frames and not args.gt:
        raise ConfigParseError("--frames needs --gt for evaluation")

    with _run_lock(run_dir):
        with _stage("input"):
            if args.synth:
                frames, gt = generate_synthetic(DEFAULT_SYNTH)
                frames_dir = run_dir / ART_FRAMES
                write_frame_sequence(frames_dir, frames)
                gt_path = run_dir / ART_MASKS
                write_tensor(gt_path, gt.pixel_masks.astype(np.uint8))
            else:
                frames_dir = Path(args.frames)
                frames = load_frame_sequence(frames_dir)
                gt_path = Path(args.gt)
            log.info("input: %d frames of %dx%d", frames.n_frames, frames.height, frames.width)

        with _stage("features"):
            stage_features(cfg, frames_dir, run_dir / ART_FEATURES)
            fm = _load_features(run_dir / ART_FEATURES, frames.height, frames.width)
            log.info("features: grid %dx%d, %d dims", fm.grid.rows, fm.grid.cols, fm.dim)

        with _stage("quantizer-train"):
            stage_train(cfg, run_dir / ART_FEATURES, run_dir / ART_MODEL)

        with _stage("encode"):
            stage_encode(cfg, run_dir / ART_FEATURES, run_dir / ART_MODEL, run_dir / ART_CODES)

        with _stage("tcp"):
            stage_tcp(cfg, run_dir / ART_CODES, run_dir / ART_TCPMAP)

        with _stage("flow"):
            stage_flow(
                cfg, frames_dir, run_dir / ART_FLOWMAP, grid_rows=fm.grid.rows, grid_cols=fm.grid.cols
            )

        with _stage("fuse"):
            stage_fuse(
                cfg,
                run_dir / ART_TCPMAP,
                run_dir / ART_FLOWMAP,
                frames.height,
                frames.width,
                run_dir / ART_MSEG,
            )

        with _stage("eval"):
            frame_curve, pixel_curve = stage_eval(
                cfg, run_dir / ART_MSEG, gt_path, run_dir / ART_RESULTS, svg=args.svg
            )

    _emit_metrics(frame_curve, pixel_curve, args.json)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcpad",
        description="Abnormal-event detection in surveillance video via binary "
        "appearance codes, temporal code-pattern irregularity and optical flow.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value pipeline config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SYNTH.seed)
    p.add_argument("--frames", type=int, default=DEFAULT_SYNTH.n_frames)
    p.add_argument("--height", type=int, default=DEFAULT_SYNTH.height)
    p.add_argument("--width", type=int, default=DEFAULT_SYNTH.width)
    p.add_argument("--blobs", type=int, default=DEFAULT_SYNTH.n_normal_blobs)
    p.add_argument("--normal-speed", type=float, default=DEFAULT_SYNTH.normal_speed)
    p.add_argument("--anomaly-speed", type=float, default=DEFAULT_SYNTH.anomaly_speed)
    p.add_argument("--onset", type=int, default=DEFAULT_SYNTH.anomaly_onset)
    p.add_argument("--radius", type=int, default=DEFAULT_SYNTH.blob_radius)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("itq-train", parents=[common], help="train the configured quantizer")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="feature tensor (FMAP rank 4)")
    src.add_argument("--frames", help="frame directory (toy features)")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--sample-cap", type=int, default=DEFAULT_TRAIN_SAMPLE_CAP)
    p.set_defaults(func=cmd_itq_train)

    p = sub.add_parser("encode", parents=[common], help="encode features to prototype maps")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="feature tensor (FMAP rank 4)")
    src.add_argument("--frames", help="frame directory (toy features)")
    p.add_argument("--model", required=True, help="trained quantizer model")
    p.add_argument("--out", required=True, help="codes tensor to write")
    p.add_argument("--features-out", help="persist computed toy features here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("tcp", parents=[common], help="score code maps by block irregularity")
    p.add_argument("--codes", required=True, help="codes tensor (FMAP rank 3)")
    p.add_argument("--out", required=True, help="score map tensor to write")
    p.add_argument("--signal-out", help="optional per-frame signal CSV")
    p.set_defaults(func=cmd_tcp)

    p = sub.add_parser("flow", parents=[common], help="optical-flow score maps")
    p.add_argument("--frames", help="frame directory (required for builtin flow)")
    p.add_argument("--out", required=True, help="score map tensor to write")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("fuse", parents=[common], help="fuse flow and appearance maps")
    p.add_argument("--tcp", required=True, help="appearance score map tensor")
    p.add_argument("--flow", required=True, help="flow score map tensor")
    p.add_argument("--height", type=int, required=True, help="frame height in px")
    p.add_argument("--width", type=int, required=True, help="frame width in px")
    p.add_argument("--out", required=True, help="fused full-resolution tensor to write")
    p.add_argument("--heatmap-dir", help="optional per-frame heatmap PGM dump")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="frame- and pixel-level ROC evaluation")
    p.add_argument("--mseg", required=True, help="fused score tensor (T, H, W)")
    p.add_argument("--gt", required=True, help="mask tensor (FMAP u8) or PGM mask directory")
    p.add_argument("--out", default=ART_RESULTS, help="results CSV (pixel variant alongside)")
    p.add_argument("--svg", action="store_true", help="also write ROC SVG plots")
    p.add_argument("--json", action="store_true", help="print metrics as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="run the whole pipeline")
    p.add_argument("--out", required=True, help="run directory for all artifacts")
    p.add_argument("--synth", action="store_true", help="use the built-in synthetic dataset")
    p.add_argument("--frames", help="frame directory to analyze")
    p.add_argument("--gt", help="ground-truth masks (FMAP u8 or PGM directory)")
    p.add_argument("--svg", action="store_true", help="also write ROC SVG plots")
    p.add_argument("--json", action="store_true", help="print metrics as JSON")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except IoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
