"""
Lab Pipeline - Orchestrates a full invariant survey of one operator spec

Builds the operator, checks its structure, samples curvature, Chern and theta
fields on a grid and runs the Property (H) recursion for every adjacent gap.
"""

import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np

from src.analysis.comparator import recover_coupling, theta_field
from src.analysis.property_h import property_h_slope
from src.geometry.chern import chern_polynomial, recover_curvatures
from src.geometry.curvature import closed_form_curvature, curvature_scalar, fit_homogeneity
from src.geometry.grid import DiskGrid
from src.operators.flag import FlagSpec, build_ncfb, verify_flag_structure
from src.utils.config_loader import load_config
from src.utils.io import to_jsonable
from src.utils.spec_loader import OperatorSpec, build_operator

logger = logging.getLogger(__name__)


class LabPipeline:
    """Survey pipeline for one operator spec"""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize the pipeline

        Args:
            config_path: Path to configuration file (repository default when omitted)
        """
        self.config = load_config(config_path)
        logger.info("Initialized LabPipeline")

    def analyze(
        self,
        spec: OperatorSpec,
        grid: DiskGrid,
        k_max: Optional[int] = None,
        save_results: bool = True
    ) -> Dict[str, Any]:
        """
        Run the complete survey

        Args:
            spec: Validated operator spec
            grid: Disk grid for the field samples
            k_max: Property (H) recursion length
            save_results: Save results to a timestamped JSON file

        Returns:
            Survey results dictionary
        """
        logger.info(f"Starting survey of {spec.kind} spec with lambdas {list(spec.flag.lambdas)}")

        logger.info("Step 1: Building operator...")
        flag = build_operator(spec)

        logger.info("Step 2: Verifying flag structure...")
        structure = verify_flag_structure(flag)

        logger.info("Step 3: Sampling curvature and Chern fields...")
        radius = grid.r_max + 2 * grid.fd_step
        curvatures = [curvature_scalar(flag.section(j, r_max=radius), grid) for j in range(flag.n)]
        chern = chern_polynomial(curvatures)
        recovered = recover_curvatures(chern)
        stacked = np.sort_complex(np.stack([c.values for c in curvatures], axis=1).astype(complex))
        curvature_summary = [
            {
                'level': j + 1,
                'lambda': lam,
                'closed_form_gap': float(np.max(np.abs(curvatures[j].values - closed_form_curvature(lam, grid.points)))),
                'homogeneity': fit_homogeneity(curvatures[j]),
            }
            for j, lam in enumerate(flag.lambdas)
        ]

        logger.info("Step 4: Sampling theta fields and couplings...")
        theta_summary = []
        for l in range(flag.n):
            for j in range(l + 1, flag.n):
                theta = theta_field(flag, (l, j), grid)
                coupling = recover_coupling(flag, (l, j), grid)
                theta_summary.append({
                    'levels': [l + 1, j + 1],
                    'ratio_range': [float(theta.ratio_values.min()), float(theta.ratio_values.max())],
                    'coupling_at_first_point': complex(coupling[0]),
                })

        logger.info("Step 5: Running Property (H) recursions...")
        property_h = [
            property_h_slope(flag.lambdas[k], flag.lambdas[k + 1], k_max).to_dict(max_samples=16)
            for k in range(flag.n - 1)
        ]

        results = {
            'metadata': {
                'kind': spec.kind,
                'lambdas': list(flag.lambdas),
                'dim_per_block': flag.dim_per_block,
                'spec_sha256': spec.digest,
                'grid': grid.describe(),
                'timestamp': datetime.now().isoformat(),
            },
            'structure': structure.to_dict(),
            'curvature': curvature_summary,
            'chern': {
                'degree': chern.degree,
                'root_recovery_gap': float(np.max(np.abs(recovered - stacked))),
            },
            'theta': theta_summary,
            'property_h': property_h,
        }

        if save_results:
            output_path = self._save_results(results)
            results['output_file'] = output_path
            logger.info(f"Results saved to: {output_path}")

        logger.info("Survey complete")
        return results

    def sweep_gap(self, lambda1: float, gap: float, dim: int, k_max: Optional[int] = None) -> Dict[str, Any]:
        """
        Property (H) slope and structure check of the 2-block flag (lambda1, lambda1 + gap)

        Gaps outside (0, 2) still get the Property (H) recursion; the
        structure check is skipped for them.
        """
        report = property_h_slope(lambda1, lambda1 + gap, k_max)
        point = {
            'lambda1': lambda1,
            'gap': gap,
            'slope': report.fitted_slope,
            'expected_slope': report.expected_slope,
            'verdict': report.verdict,
        }
        if 0 < gap < 2:
            structure = verify_flag_structure(build_ncfb(FlagSpec(lambdas=(lambda1, lambda1 + gap), dim_per_block=dim)))
            point['decay_exponent'] = structure.decay_exponents[0]
            point['expected_decay'] = structure.expected_exponents[0]
            point['structure_passed'] = structure.passed
        return point

    def _save_results(self, results: Dict[str, Any]) -> str:
        """
        Save results to JSON file

        Args:
            results: Survey results dictionary

        Returns:
            Path to saved file
        """
        output_dir = self.config['results']['json_folder']
        os.makedirs(output_dir, exist_ok=True)

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        lambdas = '_'.join(f"{lam:g}" for lam in results['metadata']['lambdas'])
        filename = f"{results['metadata']['kind']}_{lambdas}_{timestamp}.json"
        filepath = os.path.join(output_dir, filename)

        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(results), f, indent=2, ensure_ascii=False)

        return filepath

    def generate_report(self, results: Dict[str, Any]) -> str:
        """
        Generate human-readable text report

        Args:
            results: Survey results dictionary

        Returns:
            Formatted report string
        """
        meta = results['metadata']
        structure = results['structure']

        curvature_lines = '\n'.join(
            f"  level {c['level']}: lambda={c['lambda']:g}  closed-form gap={c['closed_form_gap']:.2e}  "
            f"lambda_hat={c['homogeneity']['lambda_hat']:.6f}"
            for c in results['curvature']
        )
        theta_lines = '\n'.join(
            f"  theta({t['levels'][0]},{t['levels'][1]}): ratio in [{t['ratio_range'][0]:.6f}, {t['ratio_range'][1]:.6f}]"
            for t in results['theta']
        ) or '  (single block)'
        property_lines = '\n'.join(
            f"  ({p['lambda1']:g}, {p['lambda2']:g}): slope {p['slope']:.4f} "
            f"(expected {p['expected_slope']:.4f}) -> {p['verdict']}"
            for p in results['property_h']
        ) or '  (single block)'

        report = f"""
{'='*70}
CDLAB OPERATOR SURVEY
{'='*70}

Kind: {meta['kind']}
Lambdas: {meta['lambdas']}
Truncation per block: {meta['dim_per_block']}
Grid points: {meta['grid']['points']} (r_max {meta['grid']['r_max']:.3f})
Survey Date: {meta['timestamp']}

{'='*70}
STRUCTURE
{'='*70}

Intertwining residuals: {structure['intertwining_residuals']}
Decay exponents: {structure['decay_exponents']} (expected {structure['expected_exponents']})
Commutator tail sup: {structure['commutator_tail_sup']:.3e}
Strongly irreducible: {'YES' if structure['strongly_irreducible'] else 'NO'}
Passed: {'YES' if structure['passed'] else 'NO'}

{'='*70}
CURVATURE AND CHERN POLYNOMIAL
{'='*70}

{curvature_lines}
  Chern root recovery gap: {results['chern']['root_recovery_gap']:.2e}

{'='*70}
SECOND FUNDAMENTAL FORMS
{'='*70}

{theta_lines}

{'='*70}
PROPERTY (H)
{'='*70}

{property_lines}

{'='*70}
"""
        return report
