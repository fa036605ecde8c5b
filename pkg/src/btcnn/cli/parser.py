"""Argument parser of the `btcnn` command line."""
import argparse
from pathlib import Path
from typing import List, Tuple

from ..utils.config import (
    BATCH_SIZE,
    CALIBRATION_BINS,
    COL_THRESHOLD,
    DEFAULT_OUT_DIR,
    EPOCHS,
    HIDDEN_WIDTH,
    LEARNING_RATE,
    MC_EVAL,
    MC_TRAIN,
    REPEATS,
    REPORT_EPOCH,
    STARVATION_FRACTIONS,
    VARIANTS,
)

COMMANDS = ("train", "starve", "blur-train", "uq-probe", "calib-report")


def parse_pair(text: str) -> Tuple[int, int]:
    """Parse 'A,B' into a sorted class pair."""
    try:
        a, b = (int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A,B with two digits, got {text!r}")
    if a == b:
        raise argparse.ArgumentTypeError(f"pair needs two different classes, got {text!r}")
    return (min(a, b), max(a, b))


def parse_fractions(text: str) -> List[float]:
    """Parse a comma list of fractions."""
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def parse_variants(text: str) -> List[str]:
    """Parse a comma list of model variants."""
    variants = [part.strip() for part in text.split(",") if part.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown or not variants:
        raise argparse.ArgumentTypeError(
            f"unknown variant(s) {unknown or text!r}; choose from {', '.join(VARIANTS)}"
        )
    return variants


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    data = parser.add_argument_group("data")
    data.add_argument("--data-train", type=Path, required=True, metavar="PATH",
                      help="USPS training file (text, optionally gzip)")
    data.add_argument("--data-test", type=Path, required=True, metavar="PATH",
                      help="USPS test file (text, optionally gzip)")
    data.add_argument("--cache-dir", type=Path, default=None, metavar="DIR",
                      help="Cache parsed splits here")
    data.add_argument("--subset-fraction", type=float, default=1.0,
                      help="Fraction of the training set kept (default: 1.0)")
    data.add_argument("--blur-train", action="store_true",
                      help="Apply class-correlated blur to the training set")
    data.add_argument("--blur-test", action="store_true",
                      help="Apply class-correlated blur to the test set")

    model = parser.add_argument_group("model")
    model.add_argument("--model", type=parse_variants, default=None,
                       help=f"Variant, or comma list for sweeps ({', '.join(VARIANTS)})")
    model.add_argument("--gamma", type=float, default=None,
                       help="Consistency weight (default: 0.1 for btcnn-cc, else 0)")
    model.add_argument("--col-threshold", type=float, default=COL_THRESHOLD,
                       help="Circle-one threshold in radians (default: 2*pi/3)")
    model.add_argument("--hidden", type=int, default=HIDDEN_WIDTH,
                       help=f"Hidden dense width (default: {HIDDEN_WIDTH})")

    training = parser.add_argument_group("training")
    training.add_argument("--seed", type=int, required=True, help="Master seed (required)")
    training.add_argument("--epochs", type=int, default=EPOCHS)
    training.add_argument("--batch-size", type=int, default=BATCH_SIZE)
    training.add_argument("--lr", type=float, default=LEARNING_RATE)
    training.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    training.add_argument("--mc-train", type=int, default=MC_TRAIN,
                          help="Posterior draws per training loss")
    training.add_argument("--mc-eval", type=int, default=MC_EVAL,
                          help="Posterior draws per evaluation")
    training.add_argument("--bins", type=int, default=CALIBRATION_BINS,
                          help="Calibration bins")

    output = parser.add_argument_group("output")
    output.add_argument("--out", type=Path, default=DEFAULT_OUT_DIR, metavar="DIR")
    output.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING"), default="INFO")


def _add_sweep_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fractions", type=parse_fractions, default=list(STARVATION_FRACTIONS),
                        help="Comma list of training-set fractions (default: 0.25,0.5,0.75,1.0)")
    parser.add_argument("--repeats", type=int, default=REPEATS,
                        help=f"Runs per variant and fraction (default: {REPEATS})")
    parser.add_argument("--report-epoch", type=int, default=REPORT_EPOCH,
                        help=f"Epoch reported in summaries (default: {REPORT_EPOCH})")
    parser.add_argument("--workers", type=int, default=None,
                        help="Worker processes (default: physical cores)")


def _add_trained_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--weights", type=Path, default=None, metavar="PATH",
                        help="Load trained parameters instead of training first")


def build_parser() -> argparse.ArgumentParser:
    """Build the `btcnn` argument parser with one sub-parser per command."""
    parser = argparse.ArgumentParser(
        prog="btcnn",
        description="Bayesian topological CNNs on USPS digits: training, data starvation, "
                    "blur sweeps, uncertainty probes and calibration reports.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    train = commands.add_parser("train", help="Train one model and write its run")
    _add_shared_flags(train)
    train.add_argument("--save-weights", type=Path, default=None, metavar="PATH",
                       help="Write trained parameters to an .npz file")

    starve = commands.add_parser("starve", help="Sweep training-set fractions")
    _add_shared_flags(starve)
    _add_sweep_flags(starve)

    blur = commands.add_parser("blur-train", help="Sweep fractions on class-blurred data")
    _add_shared_flags(blur)
    _add_sweep_flags(blur)
    blur.add_argument("--preview", action="store_true",
                      help="Write a PNG of one blurred image per class")

    probe = commands.add_parser("uq-probe", help="Uncertainty along convex combinations")
    _add_shared_flags(probe)
    _add_trained_model_flags(probe)
    probe.add_argument("--pair", type=parse_pair, default=None, metavar="A,B",
                       help="Probe one class pair (default: all 45)")
    probe.add_argument("--preview", action="store_true",
                       help="Write a PNG strip per probed pair")

    calib = commands.add_parser("calib-report", help="Per-bin calibration table")
    _add_shared_flags(calib)
    _add_trained_model_flags(calib)
    return parser
