"""
Verification reports: per-cell results, provenance, CSV/JSON output and interpretation
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src import __version__
from src.utils import spec_hash, to_jsonable, write_csv, write_json

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['n', 'y', 'z', 'delta', 'mc_prob', 'mc_stderr', 'theory', 'ratio', 'pass']


@dataclass
class CellResult:
    """Monte Carlo probability against the theory value for one (n, y, z, delta) cell"""

    n: int
    y: float
    z: float
    delta: float
    mc_prob: float
    mc_stderr: float
    theory: float
    ratio: Optional[float]
    passed: bool
    floor_pass: bool = False

    def to_row(self) -> Dict[str, Any]:
        return {
            'n': self.n, 'y': self.y, 'z': self.z, 'delta': self.delta,
            'mc_prob': self.mc_prob, 'mc_stderr': self.mc_stderr, 'theory': self.theory,
            'ratio': self.ratio if self.ratio is not None else np.nan, 'pass': self.passed,
        }


@dataclass
class VerificationReport:
    """Outcome of one verify_* experiment"""

    theorem: str
    cells: List[CellResult] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)
    globals: Dict[str, Any] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cells) and all(self.checks.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_row() for c in self.cells], columns=CSV_COLUMNS)

    def to_json(self) -> Dict[str, Any]:
        return to_jsonable({
            'theorem': self.theorem,
            'passed': self.passed,
            'cells': [c.to_row() for c in self.cells],
            'checks': self.checks,
            'globals': self.globals,
            'extras': self.extras,
            'provenance': self.provenance,
        })

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """Write <theorem>_cells.csv and <theorem>_report.json into out_dir"""
        out_dir = Path(out_dir)
        paths = {
            'csv': write_csv(self.to_frame(), out_dir / f"{self.theorem}_cells.csv"),
            'json': write_json(self.to_json(), out_dir / f"{self.theorem}_report.json"),
        }
        logger.info(f"✓ Report written to {out_dir}")
        return paths


def build_provenance(ensemble: Dict[str, Any], lyapunov_hat: Optional[float], sigma2_hat: Optional[float],
                     v_tables: Dict[str, Any], seeds: Dict[str, int]) -> Dict[str, Any]:
    """
    Provenance block embedded in every report

    No timestamps or host names, so identical inputs give identical bytes.
    """
    return to_jsonable({
        'ensemble_hash': spec_hash(ensemble),
        'ensemble': ensemble,
        'lyapunov_hat': lyapunov_hat,
        'sigma2_hat': sigma2_hat,
        'v_tables': v_tables,
        'seeds': seeds,
        'version': __version__,
    })


class ReportAnalyzer:
    """Turns a VerificationReport into readable summary lines"""

    def __init__(self):
        logger.debug("Initialized report analyzer")

    def summarize(self, report: VerificationReport) -> Dict[str, Any]:
        """
        Summarize a verification report

        Args:
            report: The report to interpret

        Returns:
            Dictionary with the verdict, counts, the worst cell, a confidence
            reading of the relative standard errors and notes
        """
        scored = [c for c in report.cells if c.ratio is not None]
        worst = max(scored, key=lambda c: abs(c.ratio - 1.0), default=None)
        rel_errors = [c.mc_stderr / c.mc_prob for c in report.cells if c.mc_prob > 0]
        worst_rel = max(rel_errors, default=0.0)
        summary = {
            'verdict': 'PASS' if report.passed else 'FAIL',
            'cells': len(report.cells),
            'cells_passed': sum(c.passed for c in report.cells),
            'floor_cells': sum(c.floor_pass for c in report.cells),
            'worst_cell': worst.to_row() if worst is not None else None,
            'confidence_level': self._interpret_confidence(worst_rel),
            'failed_checks': sorted(k for k, ok in report.checks.items() if not ok),
            'notes': self._notes(report),
        }
        summary['lines'] = self._lines(report, summary)
        return to_jsonable(summary)

    def _lines(self, report: VerificationReport, summary: Dict[str, Any]) -> List[str]:
        lines = [f"{report.theorem}: {summary['verdict']} "
                 f"({summary['cells_passed']}/{summary['cells']} cells, {summary['floor_cells']} by floor)"]
        if summary['worst_cell'] is not None:
            w = summary['worst_cell']
            lines.append(f"worst ratio {w['ratio']:.4f} at n={w['n']}, y={w['y']:g}, z={w['z']:g}, delta={w['delta']:g}")
        for name in summary['failed_checks']:
            lines.append(f"check failed: {name}")
        lines.append(f"statistical confidence: {summary['confidence_level']}")
        return lines

    def _interpret_confidence(self, rel_stderr: float) -> str:
        """Read the largest relative standard error of a Monte Carlo cell"""
        if rel_stderr < 0.01:
            return "Very High - stderr below 1% of the estimate"
        elif rel_stderr < 0.05:
            return "High - stderr below 5% of the estimate"
        elif rel_stderr < 0.15:
            return "Moderate - comparable to the cell tolerance"
        else:
            return "Low - increase the number of trajectories"

    def _notes(self, report: VerificationReport) -> List[str]:
        notes = ["Non-arithmeticity of the ensemble is asserted, not certified"]
        diagnostics = report.globals.get('diagnostics') or {}
        variant = diagnostics.get('theorem_variant')
        if variant == 'A1':
            notes.append(f"Moment condition with delta={diagnostics.get('delta')} >= 1: the A1 variant applies")
        elif variant == 'FK':
            notes.append(f"Moment condition with delta={diagnostics.get('delta')} < 1: relies on the FK condition")
        elif variant == 'unsupported':
            notes.append("delta < 1 without a finite kappa: no theorem variant covers this ensemble")
        if diagnostics.get('kappa_sampled'):
            notes.append("kappa was not certified draw by draw")
        if report.extras.get('plateau_missing'):
            notes.append(f"V without plateau at: {report.extras['plateau_missing']}")
        return notes


# Singleton instance
_analyzer = None


def get_report_analyzer() -> ReportAnalyzer:
    """Get or create the report analyzer"""
    global _analyzer
    if _analyzer is None:
        _analyzer = ReportAnalyzer()
    return _analyzer
