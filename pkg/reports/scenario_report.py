"""
Scenario summary: grid metadata, rho, <phi, u_dagger>, operator norm and the
eigenvector diagnostic, printed as a table and saved as JSON.
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Tuple

from tabulate import tabulate

from shared.constants import GOLDEN_FEATURE_VALUES, GOLDEN_RHO
from shared.forward_problems import Scenario
from shared.map_testing import PriorSpec, eigenvector_diagnostic, unregularized_probe

logger = logging.getLogger(__name__)


def scenario_summary(scn: Scenario) -> Dict[str, object]:
    grid = scn.grid
    gamma_hat = eigenvector_diagnostic(scn, PriorSpec.power_law(1.0, scn.mu))
    unreg_norm = unregularized_probe(scn).norm()
    return {
        'problem': scn.name,
        'beta': scn.beta,
        'mu': scn.mu,
        'nu': scn.nu,
        'N': grid.n,
        'domain': [grid.a, grid.b],
        'node_rule': grid.node_rule,
        'h': grid.h,
        'basis': scn.op.basis,
        'operator_norm': scn.op.operator_norm,
        'rho': scn.rho,
        'feature_value': scn.feature_value,
        'phi_norm': scn.phi.norm(),
        'unregularized_probe_norm': unreg_norm if math.isfinite(unreg_norm) else None,
        'eigenvector': gamma_hat is not None,
        'eigenvector_gamma_hat': gamma_hat,
        'published_feature_value': GOLDEN_FEATURE_VALUES.get((scn.name, scn.beta), (None,))[0],
        'published_rho': GOLDEN_RHO.get(scn.name, (None,))[0],
    }


def summary_rows(summary: Dict[str, object]) -> List[Tuple[str, object]]:
    return [(key, value) for key, value in summary.items()]


def print_summary(summary: Dict[str, object]):
    print("=" * 80)
    print(f"Scenario: {summary['problem']} (beta={summary['beta']}, mu={summary['mu']})")
    print("=" * 80)
    print(tabulate(summary_rows(summary), headers=['Quantity', 'Value'], tablefmt='simple',
                   floatfmt='.6g'))


def write_summary(summary: Dict[str, object], out_dir: Path) -> Path:
    """<out_dir>/scenario_<problem>_<beta>.json"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    beta = summary['beta']
    beta_text = str(int(beta)) if float(beta).is_integer() else repr(float(beta))
    path = out_dir / f"scenario_{summary['problem']}_{beta_text}.json"
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug("wrote %s", path)
    return path
