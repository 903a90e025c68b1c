"""Stage error metrics and the error -> fitness transform.

Every stage error is a mean of per-plot contributions in [0, 2], so the
maximum attainable error for any stage is 2. Plots missing from either side
are scored as zero interventions (or empty direction sets) and counted in the
report diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .connectivity import DirectionRecord, quantize_directions
from .landscape import Direction, InterventionRecord

DEFAULT_EPSILON = 1e-6
MAX_STAGE_ERROR = 2.0
PENALTY_ERROR = 10 * MAX_STAGE_ERROR

_EMPTY: frozenset[Direction] = frozenset()


@dataclass
class FitnessReport:
    error: float
    fitness: float
    per_plot: dict[int, float] = field(default_factory=dict)
    diagnostics: dict[str, object] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return 1.0 - self.error


def fitness_of(error: float, epsilon: float = DEFAULT_EPSILON) -> float:
    if error < 0:
        raise ValueError("error must be nonnegative")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 1.0 / (error + epsilon)


def penalty_report(reason: str, epsilon: float = DEFAULT_EPSILON) -> FitnessReport:
    """Report for a candidate that could not be executed or repaired."""
    return FitnessReport(PENALTY_ERROR, fitness_of(PENALTY_ERROR, epsilon), {}, {"penalized": reason})


def jaccard_distance(a: Iterable[Direction], b: Iterable[Direction]) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def _plot_universe(pred: Mapping, gt: Mapping, plot_ids: Sequence[int] | None):
    ids = sorted(set(pred) | set(gt)) if plot_ids is None else list(plot_ids)
    missing_pred = [i for i in ids if i not in pred]
    missing_gt = [i for i in ids if i not in gt]
    return ids, {"missing_pred": missing_pred, "missing_gt": missing_gt}


def _report(per_plot: dict[int, float], diagnostics: dict, epsilon: float) -> FitnessReport:
    error = sum(per_plot.values()) / len(per_plot) if per_plot else 0.0
    return FitnessReport(error, fitness_of(error, epsilon), per_plot, diagnostics)


def npv_report(
    pred: Mapping[int, InterventionRecord],
    gt: Mapping[int, InterventionRecord],
    plot_ids: Sequence[int] | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> FitnessReport:
    ids, diag = _plot_universe(pred, gt, plot_ids)
    zero = InterventionRecord(0)
    per_plot = {}
    for i in ids:
        p, g = pred.get(i, zero), gt.get(i, zero)
        per_plot[i] = abs(g.margin_intervention - p.margin_intervention) + abs(g.habitat_conversion - p.habitat_conversion)
    return _report(per_plot, diag, epsilon)


def error_npv(pred, gt, plot_ids=None) -> float:
    return npv_report(pred, gt, plot_ids).error


def conn_report(
    pred: Mapping[int, DirectionRecord],
    gt: Mapping[int, DirectionRecord],
    plot_ids: Sequence[int] | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> FitnessReport:
    ids, diag = _plot_universe(pred, gt, plot_ids)
    per_plot = {}
    for i in ids:
        p, g = pred.get(i), gt.get(i)
        md_p, hd_p = (p.margin_directions, p.habitat_directions) if p else (_EMPTY, _EMPTY)
        md_g, hd_g = (g.margin_directions, g.habitat_directions) if g else (_EMPTY, _EMPTY)
        per_plot[i] = jaccard_distance(md_g, md_p) + jaccard_distance(hd_g, hd_p)
    return _report(per_plot, diag, epsilon)


def error_conn(pred, gt, plot_ids=None) -> float:
    return conn_report(pred, gt, plot_ids).error


def nudge_targets(gt_dirs: Mapping[int, DirectionRecord]) -> dict[int, InterventionRecord]:
    """Fractional amounts implied by target directions (multiples of 0.25)."""
    return {
        pid: InterventionRecord(pid, quantize_directions(r.margin_directions), quantize_directions(r.habitat_directions))
        for pid, r in gt_dirs.items()
    }


def nudge_report(
    pred_amounts: Mapping[int, InterventionRecord],
    gt_dirs: Mapping[int, DirectionRecord],
    plot_ids: Sequence[int] | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> FitnessReport:
    return npv_report(pred_amounts, nudge_targets(gt_dirs), plot_ids, epsilon)


def error_nudge(pred_amounts, gt_dirs, plot_ids=None) -> float:
    return nudge_report(pred_amounts, gt_dirs, plot_ids).error
