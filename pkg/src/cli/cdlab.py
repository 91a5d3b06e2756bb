"""
cdlab CLI - Build flag operators and compute their invariants

Usage:
    python -m src.cli.cdlab build --spec flag.json --out flag_report.json
    python -m src.cli.cdlab curvature --spec bergman_l2.json --grid r=0:0.8:0.1,theta=0:360:30 --out k.csv
    python -m src.cli.cdlab chern --spec flag.json --grid r=0:0.8:0.1,theta=0:360:30 --out chern.csv
    python -m src.cli.cdlab theta --spec flag.json --levels 1,2 --grid r=0:0.8:0.1,theta=0:360:30 --out theta.csv
    python -m src.cli.cdlab intertwine --lambda1 2 --lambda2 3 --base-dim 48 --out kernel.json
    python -m src.cli.cdlab intertwine --spec flag.json --seed 7 --out triangularity.json
    python -m src.cli.cdlab property-h --lambda1 2 --lambda2 3 --kmax 10000 --out h.json
    python -m src.cli.cdlab property-h --lambda1 2 --lambda2 3 --kmax 10000
    python -m src.cli.cdlab correct --spec t.json --spec t_tilde.json --out k.json
    python -m src.cli.cdlab orthogonalize --members 3 --dim 24 --seed 1 --out q.json
    python -m src.cli.cdlab compare-unitary --spec a.json --spec b.json --grid r=0:0.6:0.2,theta=0:360:90 --out v.json
    python -m src.cli.cdlab compare-uk --spec a.json --spec b.json --witness spec --grid ... --out v.json
    python -m src.cli.cdlab verify-structure --spec flag.json --out structure.json

Exit codes: 0 success or equivalent, 2 not_equivalent, 3 undecided, 1 error
(with {"error", "field"?, "citation"?} JSON on stderr). Every output gets a
<out>.manifest.json sidecar. property-h may omit --out; its report then goes to
stdout and no manifest is written.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from typing import Any, Dict, List, Optional, Sequence

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import numpy as np

from src import config
from src.analysis.comparator import (
    decide_uk, decide_unitary, psi_laplacian_check, theta_field, uk_witness
)
from src.analysis.correction import BOUNDARY_CHOICES, compact_correction
from src.analysis.intertwine import (
    SylvesterMap, diagonal_reduction, intertwiner_triangularity, kernel_basis
)
from src.analysis.property_h import property_h_slope
from src.geometry.chern import chern_polynomial
from src.geometry.curvature import closed_form_field, curvature_scalar, metric_and_curvature_matrix
from src.geometry.frames import solve_frame
from src.geometry.grid import DiskGrid, grid_from_spec
from src.operators.flag import (
    FlagOperator, build_ncfb, random_block_unitary, random_rank_one_perturbation,
    verify_flag_structure
)
from src.operators.idempotents import orthogonalize_idempotents, random_idempotent_family
from src.operators.shift import build_bergman_shift
from src.utils.config_loader import load_config, setup_logging
from src.utils.errors import LabError, ParameterError
from src.utils.io import emit_grid, emit_report, file_digest, load_manifest, to_jsonable, write_manifest
from src.utils.spec_loader import OperatorSpec, build_operator, dump_spec, load_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_EQUIVALENT = 2
EXIT_UNDECIDED = 3

VERDICT_EXIT = {
    'equivalent': EXIT_OK,
    'not_equivalent': EXIT_NOT_EQUIVALENT,
    'undecided': EXIT_UNDECIDED,
}

CURVATURE_METHODS = ('finite_difference', 'closed_form', 'matrix')
WITNESS_CHOICES = ('identity', 'spec', 'none')


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors become ParameterError (exit 1)"""

    def error(self, message):
        raise ParameterError(f"{self.prog}: {message}", field='argv')


class RunContext:
    """Inputs of one command, collected for its manifest"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.specs: List[OperatorSpec] = []
        self.grid: Optional[DiskGrid] = None

    def load_specs(self, count: Optional[int] = None) -> List[OperatorSpec]:
        paths = self.args.spec or []
        if count is not None and len(paths) != count:
            raise ParameterError(
                f"'{self.args.command}' needs exactly {count} --spec file(s), got {len(paths)}", field='spec'
            )
        self.specs = [load_spec(path) for path in paths]
        return self.specs

    def load_grid(self) -> DiskGrid:
        if not self.args.grid:
            raise ParameterError(f"'{self.args.command}' needs --grid", field='grid')
        self.grid = grid_from_spec(self.args.grid, self.args.fd_step)
        return self.grid

    def tolerances(self) -> Dict[str, float]:
        tolerances = dict(config['tolerances'])
        if self.args.tol is not None:
            tolerances['override'] = self.args.tol
        return tolerances


def _parse_levels(text: str, n: int) -> tuple:
    try:
        levels = tuple(int(v) for v in text.split(','))
    except ValueError:
        raise ParameterError(f"--levels must look like '1,2', got {text!r}", field='levels')
    if len(levels) != 2 or not 1 <= levels[0] < levels[1] <= n:
        raise ParameterError(f"--levels needs 1 <= l < j <= {n}, got {text!r}", field='levels')
    return levels[0] - 1, levels[1] - 1


def _section_radius(grid: DiskGrid) -> float:
    return grid.r_max + 2 * grid.fd_step


def _matrix_digest(flag: FlagOperator) -> str:
    matrix = flag.sparse_matrix.tocsr()
    matrix.sort_indices()
    h = hashlib.sha256()
    for part in (matrix.data, matrix.indices, matrix.indptr):
        h.update(np.ascontiguousarray(part).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_build(ctx: RunContext) -> int:
    spec, = ctx.load_specs(1)
    flag = build_operator(spec)
    report = {
        'spec': dump_spec(spec),
        'spec_sha256': spec.digest,
        'n': flag.n,
        'dim_per_block': flag.dim_per_block,
        'lambdas': list(flag.lambdas),
        'conjugated': not flag.is_model,
        'nnz': int(flag.sparse_matrix.nnz),
        'frobenius_norm': float(np.sqrt((abs(flag.sparse_matrix.data) ** 2).sum())),
        'matrix_sha256': _matrix_digest(flag),
    }
    emit_report(report, ctx.args.out)
    print(f"✓ Built {spec.kind} operator: n={flag.n}, N={flag.dim_per_block}, nnz={report['nnz']}")
    return EXIT_OK


def cmd_curvature(ctx: RunContext) -> int:
    spec, = ctx.load_specs(1)
    grid = ctx.load_grid()
    flag = build_operator(spec)
    method = ctx.args.method

    if method == 'matrix':
        frame = solve_frame(flag, grid.points, r_max=_section_radius(grid))
        _, field = metric_and_curvature_matrix(frame, grid)
    else:
        level = ctx.args.level - 1
        if not 0 <= level < flag.n:
            raise ParameterError(f"--level must lie in 1..{flag.n}", field='level')
        if method == 'closed_form':
            field = closed_form_field(flag.lambdas[level], grid)
        else:
            field = curvature_scalar(flag.section(level, r_max=_section_radius(grid)), grid)

    emit_grid(field, ctx.args.out)
    print(f"✓ Curvature ({method}) on {grid.size} points")
    return EXIT_OK


def cmd_chern(ctx: RunContext) -> int:
    spec, = ctx.load_specs(1)
    grid = ctx.load_grid()
    flag = build_operator(spec)
    radius = _section_radius(grid)
    curvatures = [curvature_scalar(flag.section(j, r_max=radius), grid) for j in range(flag.n)]
    emit_grid(chern_polynomial(curvatures), ctx.args.out)
    print(f"✓ Chern polynomial of degree {flag.n} on {grid.size} points")
    return EXIT_OK


def cmd_theta(ctx: RunContext) -> int:
    spec, = ctx.load_specs(1)
    grid = ctx.load_grid()
    flag = build_operator(spec)
    if flag.n < 2:
        raise ParameterError("theta needs a flag with at least 2 blocks", field='spec')
    levels = _parse_levels(ctx.args.levels or '1,2', flag.n)
    field = theta_field(flag, levels, grid)
    emit_grid(field, ctx.args.out)
    print(f"✓ {field.name} on {grid.size} points")
    return EXIT_OK


def cmd_intertwine(ctx: RunContext) -> int:
    args = ctx.args
    if args.lambda1 is not None or args.lambda2 is not None:
        if args.lambda1 is None or args.lambda2 is None:
            raise ParameterError("Kernel mode needs both --lambda1 and --lambda2", field='lambda')
        dim = args.dim or 2 * (args.base_dim or int(config['truncation']['max_kernel_dim']))
        first = build_bergman_shift(args.lambda1, dim)
        second = build_bergman_shift(args.lambda2, dim)
        forward = kernel_basis(SylvesterMap.from_shifts(first, second), args.base_dim)
        backward = kernel_basis(SylvesterMap.from_shifts(second, first), args.base_dim)
        report = {
            'lambda1': args.lambda1,
            'lambda2': args.lambda2,
            'forward': forward.to_dict(),
            'backward': backward.to_dict(),
            'precedes': forward.filtered_count > 0 and backward.filtered_count == 0,
        }
        emit_report(report, args.out)
        print(f"✓ Kernel dims: forward {forward.filtered_count}, backward {backward.filtered_count}")
        return EXIT_OK

    specs = ctx.load_specs()
    if len(specs) == 1:
        if args.seed is None:
            raise ParameterError("One-spec intertwine needs --seed for the unitary conjugation", field='seed')
        A = build_ncfb(specs[0].flag)
        unitaries = random_block_unitary(A.n, A.dim_per_block, args.seed)
        B = A.conjugate_blockwise(unitaries, inverses=[V.conj().T for V in unitaries])
    elif len(specs) == 2:
        A, B = build_operator(specs[0]), build_operator(specs[1])
    else:
        raise ParameterError("intertwine needs --lambda1/--lambda2 or one or two --spec files", field='spec')

    triangularity = intertwiner_triangularity(A, B, args.base_dim)
    report = {
        'triangularity': triangularity.to_dict(),
        'diagonal_reduction': diagonal_reduction(A, B),
    }
    emit_report(report, args.out)
    print(f"✓ Intertwiner lower mass {triangularity.lower_mass:.3e} (raw {triangularity.lower_mass_raw:.3e})")
    return EXIT_OK


def cmd_property_h(ctx: RunContext) -> int:
    args = ctx.args
    if args.lambda1 is None or args.lambda2 is None:
        raise ParameterError("property-h needs --lambda1 and --lambda2", field='lambda')
    report = property_h_slope(args.lambda1, args.lambda2, args.kmax)
    if args.out is None:
        print(json.dumps(to_jsonable(report.to_dict()), indent=2, sort_keys=True))
        return EXIT_OK
    emit_report(report.to_dict(), args.out)
    print(f"✓ Property (H) slope {report.fitted_slope:.4f}: {report.verdict}")
    return EXIT_OK


def cmd_correct(ctx: RunContext) -> int:
    first, second = ctx.load_specs(2)
    T, T_tilde = build_operator(first), build_operator(second)
    correction = compact_correction(T, T_tilde, boundary=ctx.args.boundary, tol=ctx.args.tol)
    report = correction.to_dict()
    report['is_zero'] = correction.is_zero
    emit_report(report, ctx.args.out)
    print(f"✓ Compact correction residual {correction.residual:.3e}")
    return EXIT_OK


def cmd_orthogonalize(ctx: RunContext) -> int:
    args = ctx.args
    if args.seed is None:
        raise ParameterError("orthogonalize needs --seed", field='seed')
    family = random_idempotent_family(args.members, args.dim or 24, args.seed)
    result = orthogonalize_idempotents(family)
    X = result.conjugator.entries
    report = {
        'members': args.members,
        'dim': family.dim,
        'seed': args.seed,
        'residuals': result.residuals,
        'compact_tail': result.compact_tail,
        'conjugator_deviation': float(np.linalg.norm(X - np.eye(family.dim), 2)),
        'ranks': [int(round(np.trace(Q).real)) for Q in result.projections],
    }
    emit_report(report, args.out)
    print(f"✓ Orthogonalized {args.members} idempotents (dim {family.dim})")
    return EXIT_OK


def _verdict_exit(verdict) -> int:
    print(f"✓ {verdict.kind} comparison: {verdict.verdict}")
    return VERDICT_EXIT[verdict.verdict]


def cmd_compare_unitary(ctx: RunContext) -> int:
    first, second = ctx.load_specs(2)
    grid = ctx.load_grid()
    verdict = decide_unitary(build_operator(first), build_operator(second), grid, ctx.args.tol)
    emit_report(verdict.to_dict(), ctx.args.out)
    return _verdict_exit(verdict)


def _witness_blocks(A: FlagOperator, second: OperatorSpec, mode: str) -> Optional[list]:
    if mode == 'none':
        return None
    if mode == 'identity':
        return [None] * A.n
    if second.conjugation != 'rank_one':
        raise ParameterError(
            "--witness spec needs the second spec to request a seeded rank_one conjugation", field='witness'
        )
    return random_rank_one_perturbation(A.n, A.dim_per_block, second.seed)


def cmd_compare_uk(ctx: RunContext) -> int:
    first, second = ctx.load_specs(2)
    grid = ctx.load_grid()
    A = build_operator(first)
    if not A.is_model:
        raise ParameterError("compare-uk needs an unconjugated first spec", field='spec')
    B = build_operator(second)

    blocks = _witness_blocks(A, second, ctx.args.witness)
    witness = uk_witness(A, blocks, grid) if blocks is not None else None
    verdict = decide_uk(A, B, witness, grid, ctx.args.tol)

    if witness is not None:
        psi = [psi_laplacian_check(A, j, witness.blocks[j], grid).residual for j in range(A.n)]
        verdict.diagnostics['psi_laplacian_residual'] = psi
    emit_report(verdict.to_dict(), ctx.args.out)
    return _verdict_exit(verdict)


def cmd_verify_structure(ctx: RunContext) -> int:
    spec, = ctx.load_specs(1)
    report = verify_flag_structure(build_operator(spec))
    emit_report(report.to_dict(), ctx.args.out)
    print(f"{'✓' if report.passed else '⚠️ '} Structure check {'passed' if report.passed else 'failed'}")
    return EXIT_OK


COMMANDS = {
    'build': cmd_build,
    'curvature': cmd_curvature,
    'chern': cmd_chern,
    'theta': cmd_theta,
    'intertwine': cmd_intertwine,
    'property-h': cmd_property_h,
    'correct': cmd_correct,
    'orthogonalize': cmd_orthogonalize,
    'compare-unitary': cmd_compare_unitary,
    'compare-uk': cmd_compare_uk,
    'verify-structure': cmd_verify_structure,
}

# Commands that print their JSON report when --out is omitted
STDOUT_COMMANDS = ('property-h',)


def build_parser() -> argparse.ArgumentParser:
    common = LabArgumentParser(add_help=False)
    common.add_argument('--spec', action='append', help='Operator spec JSON (repeat for comparisons)')
    common.add_argument('--grid', help="Grid 'r=START:STOP:STEP,theta=START:STOP:STEP' (degrees)")
    common.add_argument('--out', help='Output CSV or JSON path (property-h prints to stdout without it)')
    common.add_argument('--tol', type=float, help='Verdict or residual tolerance')
    common.add_argument('--fd-step', type=float, help='Finite-difference step h')
    common.add_argument('--seed', type=int, help='Seed for randomized constructions')
    common.add_argument('--config', help='Path to config file')

    parser = LabArgumentParser(
        prog='cdlab',
        description='Cowen-Douglas flag operator lab',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    helps = {
        'build': 'Build an operator and report its digest',
        'curvature': 'Curvature field of one level (CSV)',
        'chern': 'Chern polynomial coefficients (CSV)',
        'theta': 'Second fundamental form of a level pair (CSV)',
        'intertwine': 'Intertwiner kernels or triangularity report',
        'property-h': 'Property (H) recursion slope',
        'correct': 'Compact correction between two flags',
        'orthogonalize': 'Orthogonalize a seeded idempotent family',
        'compare-unitary': 'Unitary equivalence verdict',
        'compare-uk': '(U+K)-equivalence verdict against a witness',
        'verify-structure': 'Structure checks of a built flag',
    }
    sub = {name: subparsers.add_parser(name, parents=[common], help=text) for name, text in helps.items()}

    sub['curvature'].add_argument('--level', type=int, default=1, help='1-based level (default: 1)')
    sub['curvature'].add_argument('--method', choices=CURVATURE_METHODS, default='finite_difference')
    sub['theta'].add_argument('--levels', help="1-based level pair 'l,j' (default: 1,2)")
    for name in ('intertwine', 'property-h'):
        sub[name].add_argument('--lambda1', type=float, help='First weight parameter')
        sub[name].add_argument('--lambda2', type=float, help='Second weight parameter')
    sub['intertwine'].add_argument('--base-dim', type=int, help='Kernel truncation (<= 64)')
    sub['intertwine'].add_argument('--dim', type=int, help='Shift truncation in kernel mode')
    sub['property-h'].add_argument('--kmax', type=int, help='Recursion length (>= 1000)')
    sub['correct'].add_argument('--boundary', choices=BOUNDARY_CHOICES, default='unit')
    sub['orthogonalize'].add_argument('--members', type=int, default=3, help='Family size (default: 3)')
    sub['orthogonalize'].add_argument('--dim', type=int, help='Matrix size (default: 24)')
    sub['compare-uk'].add_argument('--witness', choices=WITNESS_CHOICES, default='spec')
    return parser


def _apply_config(path: Optional[str]) -> None:
    if path:
        loaded = load_config(path)
        config.clear()
        config.update(loaded)


def _report_error(exc: Exception) -> int:
    payload = exc.to_dict() if isinstance(exc, LabError) else {'error': str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one cdlab command and return its exit status"""
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()

    try:
        args = build_parser().parse_args(argv)
        _apply_config(args.config)
        setup_logging(config)
        if args.out is None and args.command not in STDOUT_COMMANDS:
            raise ParameterError(f"{args.command} needs --out", field='out')
        if args.tol is not None and not args.tol > 0:
            raise ParameterError(f"--tol must be positive, got {args.tol}", field='tol')

        ctx = RunContext(args)
        logger.info(f"Running cdlab {args.command}")
        status = COMMANDS[args.command](ctx)

        if args.out is not None:
            write_manifest(
                args.out,
                argv,
                [spec.digest for spec in ctx.specs],
                ctx.grid,
                ctx.tolerances(),
                started
            )
        return status
    except (LabError, OSError, ValueError) as exc:
        logger.debug("Command failed", exc_info=True)
        return _report_error(exc)


def replay(manifest_file: str) -> Dict[str, Any]:
    """
    Re-run the command recorded in a manifest and compare output digests

    Args:
        manifest_file: Path of a <out>.manifest.json sidecar

    Returns:
        Dictionary with the exit status, the recorded and new digests and
        whether they are identical
    """
    recorded = load_manifest(manifest_file)
    output_dir = os.path.dirname(os.path.abspath(manifest_file))
    status = main(recorded['argv'])

    digests = {
        name: file_digest(os.path.join(output_dir, name)) if os.path.exists(os.path.join(output_dir, name)) else None
        for name in recorded['outputs']
    }
    return {
        'status': status,
        'recorded': recorded['outputs'],
        'replayed': digests,
        'identical': digests == recorded['outputs'],
    }


if __name__ == '__main__':
    sys.exit(main())
