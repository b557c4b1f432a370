#!/usr/bin/env python3
"""End-to-end accuracy checks at reference scale.

These runs take minutes each and stay out of the pytest suite.

Usage:
    python check_acceptance.py                  # Run every check
    python check_acceptance.py --reference      # Gaussian-decay estimate
    python check_acceptance.py --norms          # RKHS against l2 penalty
    python check_acceptance.py --convergence    # Mesh convergence slope
    python check_acceptance.py --exponential    # Exponential-decay estimate
    python check_acceptance.py --kde            # Ensemble + KDE pipeline
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))
from levyrkhs.config import parse_config
from levyrkhs.coordinator import RunSummary, run_config
from levyrkhs.exceptions import LevyRkhsError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

REFERENCE_BOUND = 0.05
EXPONENTIAL_BOUND = 0.05
KDE_BOUND = 0.20
SLOPE_RANGE = (0.5, 1.5)


class AcceptanceChecker:
    """Runs bundled configurations and compares their errors with bounds."""

    def __init__(self, output_dir: Path, workers: int | None):
        """Initialize the checker."""
        self.output_dir = output_dir
        self.workers = workers
        self.results: dict[str, bool] = {}

    def run(self, name: str) -> RunSummary:
        """Run configs/<name>.json into the checker's output directory."""
        path = CONFIG_DIR / f"{name}.json"
        data: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
        data["output_dir"] = str(self.output_dir)
        if self.workers is not None:
            data["workers"] = self.workers
        started = time.monotonic()
        summary = run_config(parse_config(data, origin=str(path)))
        print(f"  ran {name} in {time.monotonic() - started:.0f} s -> {summary.output_dir}")
        return summary

    def check_reference(self) -> bool:
        """Gaussian decay, drift -0.5x, dx=0.01: RKHS bilevel error bound."""
        print("\n=== Gaussian-decay estimate ===")
        error = self.run("gaussian_linear").results[0]["rel_error"]
        return self._report(error <= REFERENCE_BOUND, f"relative error {error:.4f} <= {REFERENCE_BOUND}")

    def check_norms(self) -> bool:
        """The RKHS penalty beats the plain l2 penalty on the same data."""
        print("\n=== Penalty norm ordering ===")
        errors = {row["norm"]: row["rel_error"] for row in self.run("norm_comparison").results}
        for norm, error in errors.items():
            print(f"  {norm:>6}: {error:.4f}")
        return self._report(errors["rkhs"] < errors["l2"], "rkhs error < l2 error")

    def check_convergence(self) -> bool:
        """Bilevel errors over the study meshes decay with slope near one."""
        print("\n=== Mesh convergence ===")
        summary = self.run("convergence_study")
        for row in summary.results:
            print(f"  dx={row['dx']:<6g} error={row['rel_error']:.4f}")
        slope = summary.extra.get("slope", float("nan"))
        low, high = SLOPE_RANGE
        return self._report(low <= slope <= high, f"log-log slope {slope:.3f} in [{low}, {high}]")

    def check_exponential(self) -> bool:
        """Exponential decay, drift -0.5x, dx=0.01: RKHS bilevel error bound."""
        print("\n=== Exponential-decay estimate ===")
        error = self.run("exponential_linear").results[0]["rel_error"]
        return self._report(error <= EXPONENTIAL_BOUND, f"relative error {error:.4f} <= {EXPONENTIAL_BOUND}")

    def check_kde(self) -> bool:
        """1e5 paths, KDE + Savitzky-Golay densities: RKHS bilevel error bound."""
        print("\n=== KDE pipeline ===")
        error = self.run("kde_gaussian").results[0]["rel_error"]
        return self._report(error <= KDE_BOUND, f"relative error {error:.4f} <= {KDE_BOUND}")

    def _report(self, passed: bool, message: str) -> bool:
        print(f"{'✓' if passed else '✗'} {message}")
        return passed

    def run_checks(self, names: list[str]) -> bool:
        """Run the named checks and print a summary."""
        for name in names:
            try:
                self.results[name] = getattr(self, f"check_{name}")()
            except LevyRkhsError as e:
                print(f"✗ {name} failed: {e}")
                self.results[name] = False

        print("\n=== Summary ===")
        for name, passed in self.results.items():
            print(f"  {'PASS' if passed else 'FAIL'}  {name}")
        return all(self.results.values())


CHECKS = ["reference", "norms", "convergence", "exponential", "kde"]


def main():
    """Main function."""
    parser = argparse.ArgumentParser(
        description="Run reference-scale accuracy checks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python check_acceptance.py                       # Run every check
  python check_acceptance.py --reference --norms   # Two checks only
  python check_acceptance.py --kde --workers 8     # KDE pipeline on 8 threads
        """,
    )
    for name in CHECKS:
        parser.add_argument(f"--{name}", action="store_true", help=f"Run the {name} check")
    parser.add_argument(
        "--output-dir",
        type=Path,
        default=Path("runs") / "acceptance",
        help="Where runs are written (default: runs/acceptance)",
    )
    parser.add_argument("--workers", type=int, help="Override the configured worker count")
    parser.add_argument("--verbose", action="store_true", help="Show library log output")

    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    selected = [name for name in CHECKS if getattr(args, name)] or CHECKS
    checker = AcceptanceChecker(args.output_dir, args.workers)
    sys.exit(0 if checker.run_checks(selected) else 1)


if __name__ == "__main__":
    main()
