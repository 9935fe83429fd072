"""
Static SVG line plots of sweep results (log-scaled sigma axis, descending).

Output is byte-for-byte deterministic for fixed records: the SVG id salt is pinned
and the date metadata is dropped.
"""
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from shared.constants import DEFAULT_ALPHA1  # noqa: E402
from shared.errors import MapTestError  # noqa: E402
from shared.simulation import SweepRecord  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ('power', 'level', 'gamma')

# Columns drawn per plot kind, with their legend labels
PLOT_COLUMNS = {
    'power': [
        ('exact_unreg', 'unregularized (exact)'),
        ('exact_oracle_map', 'MAP, oracle gamma (exact)'),
        ('exact_apriori_map', 'MAP, a priori gamma (exact)'),
        ('bound_xi', 'lower bound'),
        ('emp_2sample', 'MAP, 2 samples'),
        ('emp_1sample', 'MAP, 1 sample'),
    ],
    'level': [
        ('emp_level', 'MAP, 1 sample (max size)'),
    ],
    'gamma': [
        ('gamma_mean', 'a posteriori mean'),
        ('gamma_q16', 'a posteriori 16% quantile'),
        ('gamma_q84', 'a posteriori 84% quantile'),
        ('gamma_oracle', 'oracle'),
    ],
}

SVG_HASH_SALT = 'map-tests'


def infer_plot_kind(records: Sequence[SweepRecord], path: Optional[Path] = None) -> str:
    """
    Plot kind of a CSV: the name of its output directory (power/, level/, gamma/)
    when it is one, else from the columns carrying data (emp_level -> level,
    only gamma columns -> gamma, otherwise power).
    """
    if path is not None and Path(path).parent.name in PLOT_KINDS:
        return Path(path).parent.name

    def has(column):
        return any(getattr(r, column) is not None for r in records)

    if has('emp_level'):
        return 'level'
    gamma_data = any(has(column) for column, _ in PLOT_COLUMNS['gamma'])
    power_data = any(has(column) for column, _ in PLOT_COLUMNS['power'])
    if gamma_data and not power_data:
        return 'gamma'
    return 'power'


def _series(records: Sequence[SweepRecord], column: str) -> Optional[List[float]]:
    values = [getattr(r, column) for r in records]
    if all(v is None for v in values):
        return None
    return [math.nan if v is None else v for v in values]


def plot_sweep(records: Sequence[SweepRecord], kind: str, path: Path, title: str = '') -> int:
    """Write the SVG; returns the number of polylines drawn"""
    if kind not in PLOT_KINDS:
        raise MapTestError(f"unknown plot kind '{kind}', expected one of {PLOT_KINDS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sigmas = [r.sigma for r in records]

    with plt.rc_context({'svg.hashsalt': SVG_HASH_SALT, 'svg.fonttype': 'path'}):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        drawn = 0
        for column, label in PLOT_COLUMNS[kind]:
            values = _series(records, column)
            if values is None:
                continue
            ax.plot(sigmas, values, marker='.', markersize=3, linewidth=1.2, label=label)
            drawn += 1

        ax.set_xscale('log')
        ax.invert_xaxis()
        ax.set_xlabel('noise level sigma')
        if kind == 'gamma':
            ax.set_yscale('log')
            ax.set_ylabel('gamma')
        elif kind == 'level':
            ax.axhline(DEFAULT_ALPHA1, color='grey', linestyle='--', linewidth=0.8, label='alpha1')
            ax.set_ylim(0.0, 0.15)
            ax.set_ylabel('rejection rate under the hypothesis')
        else:
            ax.set_ylim(-0.02, 1.02)
            ax.set_ylabel('power')
        if title:
            ax.set_title(title)
        if drawn:
            ax.legend(loc='best', fontsize=8)
        ax.grid(True, which='major', linewidth=0.3)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)

    logger.debug("wrote %s with %d curves", path, drawn)
    return drawn
