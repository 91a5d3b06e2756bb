"""
Validate Spec - Check an operator spec file

Command-line tool to validate spec files before running cdlab
"""

import sys
import os
import argparse

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.operators.flag import verify_flag_structure
from src.utils.errors import LabError
from src.utils.spec_loader import build_operator, load_spec
import logging

logging.basicConfig(
    level=logging.WARNING,
    format='%(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description='Validate a cdlab operator spec file'
    )

    parser.add_argument(
        'spec_file',
        type=str,
        help='Path to spec JSON file'
    )

    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Build the operator and run the structure checks'
    )

    args = parser.parse_args(argv)

    print(f"\n{'='*60}")
    print(f"Spec Validation: {args.spec_file}")
    print(f"{'='*60}\n")

    if not os.path.exists(args.spec_file):
        print(f"❌ File not found: {args.spec_file}")
        return 1

    try:
        spec = load_spec(args.spec_file)
        flag_spec = spec.flag

        print(f"✓ Spec loaded successfully")
        print(f"  Type: {spec.kind}")
        print(f"  Lambdas: {list(flag_spec.lambdas)}")
        print(f"  Truncation per block: {flag_spec.dim_per_block}")
        print(f"  SHA-256: {spec.digest}")

        gaps = [b - a for a, b in zip(flag_spec.lambdas, flag_spec.lambdas[1:])]
        if gaps:
            print(f"  ✓ Adjacent gaps {gaps} inside (0, 2)")

        defaulted = [
            f"({k + 1},{j + 1})" for (k, j) in flag_spec.couplings
            if j == k + 1 and flag_spec.couplings[(k, j)].coeffs == (1.0,)
        ]
        if defaulted:
            print(f"  Unit adjacent couplings: {', '.join(defaulted)}")

        if spec.conjugation:
            print(f"\n⚠️  Randomized {spec.conjugation} conjugation with seed {spec.seed}")

        if args.verbose:
            print(f"\nBuilding operator and checking structure...")
            report = verify_flag_structure(build_operator(spec))
            print(f"  Intertwining residuals: {report.intertwining_residuals}")
            print(f"  Decay exponents: {report.decay_exponents} (expected {report.expected_exponents})")
            print(f"  Strongly irreducible: {report.strongly_irreducible}")
            if not report.passed:
                print(f"\n⚠️  Structure checks did not all pass")

        print(f"\n{'='*60}")
        print("✓ VALIDATION PASSED")
        print(f"{'='*60}\n")
        return 0

    except LabError as e:
        print(f"\n❌ Validation failed: {e.message}")
        if e.field:
            print(f"   Field: {e.field}")
        if e.citation:
            print(f"   Requirement: \"{e.citation}\"")
        print(f"\n{'='*60}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
