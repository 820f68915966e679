"""fmap-extract: export CNN feature maps of PGM frames as an FMAP v1 tensor."""

import argparse
import sys

from .errors import ExtractorError
from .extract import ExtractionJob, run_extraction


def parse_resize(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {value!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fmap-extract",
        description="Run video frames through a pretrained backbone and export the "
        "selected layer's spatial feature maps as an FMAP v1 tensor (T, rows, cols, channels).",
    )
    p.add_argument("--frames", required=True, help="directory of PGM (P5) frames")
    p.add_argument("--out", required=True, help="output FMAP file")
    p.add_argument("--weights", required=True, help="local backbone weights file (state dict)")
    p.add_argument("--resize", type=parse_resize, default=(460, 350), metavar="WxH",
                   help="input resize target (default 460x350)")
    p.add_argument("--layer", default="pool5", choices=["pool5", "conv5"],
                   help="export layer (default pool5)")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--threads", type=int, default=1,
                   help="torch CPU threads; 1 keeps outputs bit-reproducible")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        frames_dir=args.frames,
        weights_path=args.weights,
        out_path=args.out,
        resize_w=args.resize[0],
        resize_h=args.resize[1],
        layer=args.layer,
        batch_size=args.batch_size,
        threads=args.threads,
    )
    try:
        dims = run_extraction(job)
    except ExtractorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} dims {'x'.join(map(str, dims))}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
