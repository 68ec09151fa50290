import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

# Always load .env from this file's directory, not the CWD
load_dotenv(Path(__file__).resolve().parent / ".env")

from pydantic import TypeAdapter, ValidationError

from reasoners.batch import run_batch
from reasoners.correction import correct_volume, load_params
from reasoners.phantom import generate_phantom, load_phantom_config
from reasoners.profile import profile_volume
from reasoners.report import evaluate_labels, ttest_reports
from reasoners.segmentation import segment_volume
from skills.volume import VolumeFormatError

logger = logging.getLogger("biascorrect")

LOG_LEVEL_ENV = "BIASCORRECT_LOG_LEVEL"

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_UNCONVERGED = 3
EXIT_COLLAPSED = 4

# Non-finite floats print as null, matching the report files
RESULT_JSON = TypeAdapter(dict)


def _sigma(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biascorrect",
                                     description="Shading (bias field) correction with modified fuzzy C-means")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("phantom", help="Generate a synthetic head phantom with a known bias field")
    p.add_argument("--spec", help="JSON {\"phantom\": ..., \"bias\": ...}; defaults when omitted")
    p.add_argument("--out-dir", required=True)

    p = commands.add_parser("correct", help="Estimate and remove the bias field of a volume")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--params", help="FcmParams JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=_sigma, help="Bias smoothing sigma in voxels, x,y,z")
    p.add_argument("--threads", type=int)
    p.add_argument("--mask", help="Foreground mask; skips foreground extraction")
    p.add_argument("--native", action="store_true", help="Also write the corrected volume in input units")

    p = commands.add_parser("segment", help="Three-class Otsu segmentation")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--mask")

    p = commands.add_parser("evaluate", help="Score labels against ground truth, or t-test two report sets")
    p.add_argument("pred", nargs="?")
    p.add_argument("truth", nargs="?")
    p.add_argument("--volume", help="Volume for per-material uniformity")
    p.add_argument("--mask")
    p.add_argument("--ttest", nargs=2, metavar=("A", "B"), help="Two report CSV/JSON files")
    p.add_argument("--out", required=True)

    p = commands.add_parser("profile", help="Write one intensity line as CSV")
    p.add_argument("input")
    p.add_argument("--axis", choices=("x", "y"), default="x")
    p.add_argument("--index", type=int)
    p.add_argument("--slice", type=int, dest="slice_index")
    p.add_argument("--out", required=True)

    p = commands.add_parser("batch", help="With/without-correction experiment over seeded phantoms")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--spec", help="Phantom config JSON; the built-in benchmark when omitted")
    p.add_argument("--params", help="FcmParams JSON file")
    p.add_argument("--threads", type=int)

    return parser


def dispatch(args: argparse.Namespace) -> tuple[dict, int]:
    """Run one subcommand; returns (summary, exit code)."""
    if args.command == "phantom":
        return generate_phantom(args.out_dir, load_phantom_config(args.spec)), EXIT_OK

    if args.command == "correct":
        params = load_params(args.params, seed=args.seed, sigma=args.sigma)
        result = correct_volume(args.input, args.out_dir, params, mask_path=args.mask,
                                threads=args.threads, native=args.native)
        if not result["converged"]:
            return result, EXIT_UNCONVERGED
        return result, EXIT_COLLAPSED if result["collapsed"] else EXIT_OK

    if args.command == "segment":
        return segment_volume(args.input, args.out, mask_path=args.mask), EXIT_OK

    if args.command == "evaluate":
        if args.ttest:
            return ttest_reports(args.ttest[0], args.ttest[1], args.out), EXIT_OK
        if not (args.pred and args.truth):
            raise ValueError("evaluate needs PRED and TRUTH labels, or --ttest A B")
        return evaluate_labels(args.pred, args.truth, args.out, volume_path=args.volume, mask_path=args.mask), EXIT_OK

    if args.command == "profile":
        return profile_volume(args.input, args.out, args.axis, args.index, args.slice_index), EXIT_OK

    if args.command == "batch":
        config = load_phantom_config(args.spec) if args.spec else None
        params = load_params(args.params) if args.params else None
        result = run_batch(args.count, args.seed, args.out_dir, config, params, threads=args.threads)
        if result["converged"] < result["count"]:
            return result, EXIT_UNCONVERGED
        return result, EXIT_COLLAPSED if result["collapsed"] else EXIT_OK

    raise ValueError(f"Unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.getenv(LOG_LEVEL_ENV, "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)

    try:
        result, code = dispatch(args)
    except (OSError, VolumeFormatError) as e:
        logger.error(str(e))
        return EXIT_IO
    except (ValueError, ValidationError) as e:
        logger.error(str(e))
        return EXIT_INVALID

    if code == EXIT_UNCONVERGED:
        logger.warning("Solver stopped at max_iters without converging")
    elif code == EXIT_COLLAPSED:
        logger.warning("Cluster centers collapsed, the corrected volume is not usable")
    print(RESULT_JSON.dump_json(result).decode())
    return code


if __name__ == "__main__":
    sys.exit(main())
