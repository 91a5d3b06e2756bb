"""
Batch Sweep CLI - Parameter sweeps over lambda gaps or spec files

Command-line tool for batch Property (H) and structure sweeps:

    python -m src.cli.batch_sweep --lambda1 2 --gaps 0.5 1 1.5 2 3 --kmax 10000
    python -m src.cli.batch_sweep --specs specs/a.json specs/b.json --grid r=0:0.6:0.2,theta=0:360:45
"""

import sys
import os
import argparse
import json
from datetime import datetime
from typing import List, Optional, Sequence

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from tqdm import tqdm

from src.analysis.pipeline import LabPipeline
from src.geometry.grid import grid_from_spec
from src.utils.config_loader import setup_logging
from src.utils.io import to_jsonable
from src.utils.spec_loader import load_spec
import logging

logger = logging.getLogger(__name__)

DEFAULT_GAPS = [0.5, 1.0, 1.5, 2.0, 3.0]


def load_specs_file(filepath: str) -> List[str]:
    """Load spec paths from text file (one per line)"""
    with open(filepath, 'r', encoding='utf-8') as f:
        return [line.strip() for line in f if line.strip() and not line.startswith('#')]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        description='Batch sweeps of Property (H) slopes and flag surveys'
    )

    parser.add_argument(
        '--lambda1', '-l',
        type=float,
        default=2.0,
        help='Lower weight parameter of every gap pair (default: 2)'
    )

    parser.add_argument(
        '--gaps', '-g',
        type=float,
        nargs='+',
        help='Lambda gaps to sweep (default: 0.5 1 1.5 2 3)'
    )

    parser.add_argument(
        '--dim', '-n',
        type=int,
        default=512,
        help='Truncation per block for structure checks (default: 512)'
    )

    parser.add_argument(
        '--kmax', '-k',
        type=int,
        help='Property (H) recursion length (default: from config)'
    )

    parser.add_argument(
        '--specs', '-s',
        type=str,
        nargs='+',
        help='Spec files to survey instead of a gap sweep'
    )

    parser.add_argument(
        '--specs-file', '-f',
        type=str,
        help='File with spec paths (one per line)'
    )

    parser.add_argument(
        '--grid',
        type=str,
        default='r=0:0.6:0.2,theta=0:360:45',
        help='Grid for spec surveys (default: r=0:0.6:0.2,theta=0:360:45)'
    )

    parser.add_argument(
        '--output-dir', '-o',
        type=str,
        help='Folder for the batch summary (default: results json folder)'
    )

    parser.add_argument(
        '--config',
        type=str,
        help='Path to config file'
    )

    args = parser.parse_args(argv)

    pipeline = LabPipeline(args.config)
    setup_logging(pipeline.config)

    spec_paths = args.specs or (load_specs_file(args.specs_file) if args.specs_file else None)
    mode = 'survey' if spec_paths else 'gap_sweep'
    items = spec_paths if spec_paths else (args.gaps or DEFAULT_GAPS)

    print(f"\n{'='*70}")
    print("BATCH SWEEP" if mode == 'gap_sweep' else "BATCH SURVEY")
    print(f"{'='*70}")
    print(f"Items:        {len(items)}")
    if mode == 'gap_sweep':
        print(f"Lambda1:      {args.lambda1}")
        print(f"Truncation:   {args.dim}")
    else:
        print(f"Grid:         {args.grid}")
    print(f"{'='*70}\n")

    grid = grid_from_spec(args.grid) if mode == 'survey' else None

    all_results = []
    successful = 0
    failed = 0

    for item in tqdm(items, desc=mode, unit='item'):
        try:
            if mode == 'gap_sweep':
                point = pipeline.sweep_gap(args.lambda1, item, args.dim, args.kmax)
                all_results.append({'gap': item, 'status': 'success', **point})
                tqdm.write(f"  ✓ gap {item:g}: slope {point['slope']:.4f} -> {point['verdict']}")
            else:
                results = pipeline.analyze(load_spec(item), grid, args.kmax, save_results=True)
                all_results.append({
                    'spec': item,
                    'status': 'success',
                    'output_file': results.get('output_file'),
                    'structure_passed': results['structure']['passed'],
                })
                tqdm.write(f"  ✓ {item}: structure {'passed' if results['structure']['passed'] else 'failed'}")
            successful += 1

        except Exception as e:
            tqdm.write(f"  ❌ {item}: {e}")
            all_results.append({
                'item': item,
                'status': 'failed',
                'error': str(e)
            })
            failed += 1

    # Save batch summary
    output_dir = args.output_dir or pipeline.config['results']['json_folder']
    os.makedirs(output_dir, exist_ok=True)
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    summary_path = os.path.join(output_dir, f"batch_summary_{timestamp}.json")

    summary = {
        'timestamp': datetime.now().isoformat(),
        'mode': mode,
        'total': len(items),
        'successful': successful,
        'failed': failed,
        'lambda1': args.lambda1 if mode == 'gap_sweep' else None,
        'results': all_results
    }

    with open(summary_path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(summary), f, indent=2)

    print(f"\n{'='*70}")
    print("BATCH SWEEP COMPLETE")
    print(f"{'='*70}")
    print(f"Total:      {len(items)}")
    print(f"Successful: {successful}")
    print(f"Failed:     {failed}")
    print(f"\nSummary saved to: {summary_path}")
    print(f"{'='*70}\n")

    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
