"""
Spec loader - Operator spec files

Loads and validates operator spec JSON documents:

    {"type": "bergman" | "ncfb", "lambda": number | [numbers], "n": int,
     "couplings": [{"from": 1, "to": 3, "series": [0, 1]}],
     "truncation": int, "seed": int, "conjugation": "unitary" | "rank_one"}

Coupling levels are 1-based in files and 0-based in FlagSpec.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from src import config
from src.operators.flag import (
    GAP_CITATION, CouplingSeries, FlagOperator, FlagSpec, build_ncfb,
    random_block_unitary, random_rank_one_perturbation
)
from src.utils.errors import SpecError

logger = logging.getLogger(__name__)

SPEC_TYPES = ('bergman', 'ncfb')
CONJUGATIONS = ('unitary', 'rank_one')
ALLOWED_KEYS = {'type', 'lambda', 'n', 'couplings', 'truncation', 'seed', 'conjugation'}


@dataclass(frozen=True)
class OperatorSpec:
    """
    Validated operator spec

    Attributes:
        kind: 'bergman' or 'ncfb'
        flag: FlagSpec (a Bergman shift is a 1-block flag)
        seed: RNG seed for randomized conjugations
        conjugation: Optional blockwise conjugation applied after building
        digest: SHA-256 of the canonical JSON document
    """

    kind: str
    flag: FlagSpec
    seed: Optional[int] = None
    conjugation: Optional[str] = None
    digest: str = ''

    @property
    def lam(self) -> float:
        return self.flag.lambdas[0]


def canonical_digest(document: Dict[str, Any]) -> str:
    payload = json.dumps(document, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return hashlib.sha256(payload).hexdigest()


def _number(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"'{field}' must be a number, got {value!r}", field=field)
    if not np.isfinite(value):
        raise SpecError(f"'{field}' must be finite", field=field)
    return float(value)


def _integer(value: Any, field: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecError(f"'{field}' must be an integer, got {value!r}", field=field)
    if value < minimum:
        raise SpecError(f"'{field}' must be >= {minimum}, got {value}", field=field)
    return value


def _coefficient(value: Any) -> complex:
    if isinstance(value, dict):
        if set(value) - {'re', 'im'}:
            raise SpecError(f"Complex coefficient must use 're'/'im', got {sorted(value)}", field='couplings')
        return complex(_number(value.get('re', 0.0), 'couplings'), _number(value.get('im', 0.0), 'couplings'))
    return _number(value, 'couplings')


def _parse_couplings(entries: Any, n: int) -> Dict:
    if not isinstance(entries, list):
        raise SpecError("'couplings' must be an array", field='couplings')
    couplings = {}
    for entry in entries:
        if not isinstance(entry, dict) or set(entry) != {'from', 'to', 'series'}:
            raise SpecError("Each coupling needs exactly 'from', 'to' and 'series'", field='couplings')
        k = _integer(entry['from'], 'couplings', 1)
        j = _integer(entry['to'], 'couplings', 1)
        if not k < j <= n:
            raise SpecError(f"Coupling ({k}, {j}) needs 1 <= from < to <= {n}", field='couplings')
        if (k - 1, j - 1) in couplings:
            raise SpecError(f"Coupling ({k}, {j}) given twice", field='couplings')
        if not isinstance(entry['series'], list):
            raise SpecError("'series' must be an array of coefficients", field='couplings')
        couplings[(k - 1, j - 1)] = CouplingSeries(tuple(_coefficient(c) for c in entry['series']))
    return couplings


def parse_spec(document: Dict[str, Any]) -> OperatorSpec:
    """
    Validate a spec document and apply defaults

    Args:
        document: Parsed JSON object

    Returns:
        OperatorSpec

    Raises:
        SpecError: Naming the offending field; lambda gaps outside (0, 2)
            carry the gap citation
    """
    if not isinstance(document, dict):
        raise SpecError("Spec must be a JSON object")
    unknown = set(document) - ALLOWED_KEYS
    if unknown:
        raise SpecError(f"Unknown spec keys: {sorted(unknown)}", field=sorted(unknown)[0])

    kind = document.get('type')
    if kind not in SPEC_TYPES:
        raise SpecError(f"'type' must be one of {SPEC_TYPES}, got {kind!r}", field='type')
    if 'lambda' not in document:
        raise SpecError("'lambda' is required", field='lambda')

    truncation = _integer(
        document.get('truncation', int(config['truncation']['default_dim'])), 'truncation', 2
    )

    if kind == 'bergman':
        if 'couplings' in document or document.get('n', 1) != 1:
            raise SpecError("Bergman specs describe a single shift", field='n')
        lambdas = (_number(document['lambda'], 'lambda'),)
        couplings = {}
    else:
        raw = document['lambda']
        if not isinstance(raw, list) or not raw:
            raise SpecError("'lambda' must be a non-empty array for ncfb specs", field='lambda')
        lambdas = tuple(_number(v, 'lambda') for v in raw)
        n = _integer(document.get('n', len(lambdas)), 'n', 1)
        if n != len(lambdas):
            raise SpecError(f"'n' is {n} but {len(lambdas)} lambdas were given", field='n')
        couplings = _parse_couplings(document.get('couplings', []), n)

    for k in range(len(lambdas) - 1):
        gap = lambdas[k + 1] - lambdas[k]
        if not 0 < gap < 2:
            raise SpecError(
                f"lambda gap {gap:g} between levels {k + 1} and {k + 2} outside (0, 2); "
                f"the construction requires it: \"{GAP_CITATION}\"",
                field='lambda',
                citation=GAP_CITATION
            )

    seed = document.get('seed')
    if seed is not None:
        seed = _integer(seed, 'seed', 0)
    conjugation = document.get('conjugation')
    if conjugation is not None:
        if conjugation not in CONJUGATIONS:
            raise SpecError(f"'conjugation' must be one of {CONJUGATIONS}", field='conjugation')
        if seed is None:
            raise SpecError("Randomized conjugations need an explicit 'seed'", field='seed')

    flag = FlagSpec(lambdas=lambdas, couplings=couplings, dim_per_block=truncation)
    return OperatorSpec(
        kind=kind, flag=flag, seed=seed, conjugation=conjugation, digest=canonical_digest(document)
    )


def load_spec(path: str) -> OperatorSpec:
    """
    Load and validate a spec file

    Raises:
        FileNotFoundError: If the file does not exist
        SpecError: If the file is not valid JSON or violates the schema
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Spec file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as exc:
            raise SpecError(f"Spec file is not valid JSON: {exc}") from exc

    spec = parse_spec(document)
    logger.info(f"Loaded {spec.kind} spec {os.path.basename(path)}: lambdas={list(spec.flag.lambdas)} N={spec.flag.dim_per_block}")
    return spec


def _coefficient_json(c: complex) -> Any:
    c = complex(c)
    return c.real if c.imag == 0 else {'re': c.real, 'im': c.imag}


def dump_spec(spec: OperatorSpec) -> Dict[str, Any]:
    """Spec document that parses back to an identical operator"""
    flag = spec.flag
    document: Dict[str, Any] = {'type': spec.kind, 'truncation': flag.dim_per_block}
    if spec.kind == 'bergman':
        document['lambda'] = flag.lambdas[0]
    else:
        document['lambda'] = list(flag.lambdas)
        document['n'] = flag.n
        couplings: List[Dict[str, Any]] = [
            {'from': k + 1, 'to': j + 1, 'series': [_coefficient_json(c) for c in series.coeffs]}
            for (k, j), series in flag.couplings.items()
        ]
        document['couplings'] = couplings
    if spec.seed is not None:
        document['seed'] = spec.seed
    if spec.conjugation is not None:
        document['conjugation'] = spec.conjugation
    return document


def build_operator(spec: OperatorSpec) -> FlagOperator:
    """Build the flag of a spec, applying its seeded conjugation if any"""
    flag = build_ncfb(spec.flag)
    if spec.conjugation == 'unitary':
        unitaries = random_block_unitary(flag.n, flag.dim_per_block, spec.seed)
        flag = flag.conjugate_blockwise(unitaries, inverses=[V.conj().T for V in unitaries])
    elif spec.conjugation == 'rank_one':
        flag = flag.conjugate_blockwise(random_rank_one_perturbation(flag.n, flag.dim_per_block, spec.seed))
    return flag
