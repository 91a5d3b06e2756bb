"""
Replay Manifest - Re-run cdlab commands from their manifests

Checks that every output is reproduced bit-for-bit
"""

import sys
import os
import argparse

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.cli.cdlab import replay


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description='Replay cdlab manifests and compare output digests'
    )

    parser.add_argument(
        'manifests',
        type=str,
        nargs='+',
        help='Manifest sidecars (<out>.manifest.json)'
    )

    args = parser.parse_args(argv)

    mismatched = 0
    for path in args.manifests:
        result = replay(path)
        if result['identical']:
            print(f"✓ {path}: identical (exit {result['status']})")
        else:
            mismatched += 1
            print(f"❌ {path}: outputs differ")
            for name, digest in result['recorded'].items():
                print(f"    {name}: {digest} -> {result['replayed'].get(name)}")

    print(f"\n{len(args.manifests) - mismatched}/{len(args.manifests)} manifests reproduced")
    return 0 if mismatched == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
