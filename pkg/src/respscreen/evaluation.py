"""Measurement procedures: ROC AUC, MCC, ROC curves and their mean,
stratified k-fold planning with 70-15-15 roles, the stacking-weight grid
search, and probability-distribution analytics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import UndefinedMetricError
from .screening import BRANCH_ORDER, UNCERTAIN_HIGH, UNCERTAIN_LOW, StackingWeights

MEAN_ROC_GRID_POINTS = 101
DEFAULT_GRID_STEP = 0.004
MCC_BINARIZE_THRESHOLD = 0.5


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("scores and labels must be 1-D and aligned")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(bool))

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")


@dataclass(frozen=True)
class RocCurve:
    """Staircase points (fpr, tpr), monotone from (0, 0) to (1, 1)."""

    fpr: np.ndarray
    tpr: np.ndarray


def _require_both_classes(data: LabeledScores, what: str):
    n_pos = int(data.labels.sum())
    if n_pos == 0 or n_pos == len(data):
        raise UndefinedMetricError(f"{what} needs both classes present")
    return n_pos, len(data) - n_pos


def roc_auc(data: LabeledScores) -> float:
    """Mann-Whitney statistic: P(score+ > score-) + 0.5 * P(tie)."""
    n_pos, n_neg = _require_both_classes(data, "ROC AUC")
    order = np.argsort(data.scores, kind="stable")
    s = data.scores[order]
    y = data.labels[order]
    pairs = 0.0
    neg_below = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        gp = float(y[i:j].sum())
        gn = float(j - i) - gp
        pairs += gp * neg_below + 0.5 * gp * gn
        neg_below += gn
        i = j
    return pairs / (n_pos * n_neg)


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation; 0 whenever a denominator factor is 0."""
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    d1, d2, d3, d4 = tp + fp, tp + fn, tn + fp, tn + fn
    if d1 == 0 or d2 == 0 or d3 == 0 or d4 == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(float(d1) * d2 * d3 * d4)


def binarize(data: LabeledScores,
             threshold: float = MCC_BINARIZE_THRESHOLD) -> ConfusionCounts:
    """Confusion counts with prediction = score >= threshold."""
    pred = data.scores >= threshold
    y = data.labels
    return ConfusionCounts(
        tp=int(np.sum(pred & y)), tn=int(np.sum(~pred & ~y)),
        fp=int(np.sum(pred & ~y)), fn=int(np.sum(~pred & y)))


def mcc_at_threshold(data: LabeledScores,
                     threshold: float = MCC_BINARIZE_THRESHOLD) -> float:
    return mcc(binarize(data, threshold))


def roc_curve(data: LabeledScores) -> RocCurve:
    """Staircase ROC over distinct score thresholds (descending), starting
    at (0, 0); its trapezoid area equals roc_auc."""
    n_pos, n_neg = _require_both_classes(data, "a ROC curve")
    order = np.argsort(-data.scores, kind="stable")
    s = data.scores[order]
    y = data.labels[order]
    # group ties: cumulative counts after each distinct threshold
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    ends = np.concatenate([distinct, [len(s) - 1]])
    cum_tp = np.cumsum(y)[ends]
    cum_fp = (ends + 1) - cum_tp
    fpr = np.concatenate([[0.0], cum_fp / n_neg])
    tpr = np.concatenate([[0.0], cum_tp / n_pos])
    return RocCurve(fpr=fpr, tpr=tpr)


def trapezoid_area(curve: RocCurve) -> float:
    return float(np.trapezoid(curve.tpr, curve.fpr))


def resample_roc(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """TPR of the curve's upper envelope at the given FPR grid points."""
    fpr = curve.fpr
    tpr = curve.tpr
    # collapse vertical segments: keep the max tpr per distinct fpr
    keep = np.concatenate([fpr[1:] != fpr[:-1], [True]])
    return np.interp(grid, fpr[keep], tpr[keep])


def mean_roc(curves: Sequence[RocCurve],
             grid_points: int = MEAN_ROC_GRID_POINTS) -> RocCurve:
    """Average TPR over a common FPR grid (pointwise mean)."""
    if len(curves) == 0:
        raise UndefinedMetricError("cannot average zero ROC curves")
    grid = np.linspace(0.0, 1.0, grid_points)
    tprs = np.stack([resample_roc(c, grid) for c in curves])
    return RocCurve(fpr=grid, tpr=tprs.mean(axis=0))


# ---------------------------------------------------------------------------
# Fold planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldRoles:
    train: tuple
    val: tuple
    test: tuple


@dataclass(frozen=True)
class FoldPlan:
    """k-fold partition stratified by label within group, plus per-fold
    train/val/test roles at 70-15-15."""

    k: int
    assignments: dict
    roles: tuple  # FoldRoles per replication

    def fold_items(self, fold: int) -> list:
        return [item for item, f in self.assignments.items() if f == fold]


def kfold_plan(items: Sequence[tuple], k: int = 10,
               seed: int = 0) -> FoldPlan:
    """Plan k folds over (id, label, group) items.

    Items are shuffled deterministically per (group, label) stratum and
    dealt round-robin with a per-label continuing cursor, so each fold
    holds each label's global count within one item. For replication r,
    folds are concatenated in rotated order [r, r+1, ...] and the prefix
    round(0.15 n) is the test role, the next round(0.15 n) the validation
    role, the remainder the train role.
    """
    items = list(items)
    n = len(items)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds item count {n}")
    ids = [it[0] for it in items]
    if len(set(ids)) != n:
        raise ValueError("item ids must be unique")

    rng = np.random.default_rng(seed)
    strata: dict = {}
    for item_id, label, group in items:
        strata.setdefault((label, group), []).append(item_id)

    # one continuing round-robin cursor over label-sorted strata: each
    # label's items form a contiguous run, so every fold gets that label's
    # count within one item, and fold sizes stay within one item too
    assignments: dict = {}
    cursor = 0
    for key in sorted(strata, key=lambda key: (str(key[0]), str(key[1]))):
        members = strata[key]
        for idx in rng.permutation(len(members)):
            assignments[members[idx]] = cursor % k
            cursor += 1

    fold_lists: list = [[] for _ in range(k)]
    for item_id, _, _ in items:
        fold_lists[assignments[item_id]].append(item_id)

    n_test = round(0.15 * n)
    n_val = round(0.15 * n)
    roles = []
    for r in range(k):
        rotated = [item for f in range(k) for item in fold_lists[(r + f) % k]]
        roles.append(FoldRoles(
            test=tuple(rotated[:n_test]),
            val=tuple(rotated[n_test:n_test + n_val]),
            train=tuple(rotated[n_test + n_val:]),
        ))
    return FoldPlan(k=k, assignments=assignments, roles=tuple(roles))


# ---------------------------------------------------------------------------
# Stacking-weight grid search
# ---------------------------------------------------------------------------

def _aligned_branch_matrix(branch_scores: dict) -> tuple:
    missing = set(BRANCH_ORDER) - set(branch_scores)
    if missing:
        raise ValueError(f"missing branch scores for {sorted(missing)}")
    ref: Optional[LabeledScores] = None
    columns = []
    for name in BRANCH_ORDER:
        data = branch_scores[name]
        if ref is None:
            ref = data
        elif len(data) != len(ref) or not np.array_equal(data.labels, ref.labels):
            raise ValueError(
                f"branch {name!r} is not aligned with branch "
                f"{BRANCH_ORDER[0]!r} (lengths or labels differ)")
        columns.append(data.scores)
    return np.column_stack(columns), ref.labels


def grid_search_weights(branch_scores: dict, metric: str = "auc",
                        step: float = DEFAULT_GRID_STEP) -> tuple:
    """Exhaustive search over the simplex grid {weights in multiples of
    `step` summing to 1} for the metric-maximizing StackingWeights.

    `branch_scores` maps each of "dcnn", "gb", "gb_breath", "gb_voice" to
    LabeledScores aligned on identical items. Ties are broken toward the
    lexicographically smallest (t, x, y, z). Returns (weights, achieved).

    The sweep accumulates stacked scores incrementally along the grid, so
    scores can drift ~1e-13 from a direct dot product; exact-tie handling
    is guaranteed for items with identical score rows.
    """
    n_steps = 1.0 / step
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError(f"step {step!r} must divide 1")
    n_grid = int(round(n_steps))
    s, y = _aligned_branch_matrix(branch_scores)
    if metric == "auc":
        if y.all() or not y.any():
            raise UndefinedMetricError("AUC grid search needs both classes")
        count, n_pos, n_neg, i, j, k, l = _kernels.grid_sweep_auc(
            np.ascontiguousarray(s), y, n_grid)
        achieved = count / (n_pos * n_neg)
    elif metric == "mcc":
        achieved, i, j, k, l = _kernels.grid_sweep_mcc(
            np.ascontiguousarray(s), y, n_grid, MCC_BINARIZE_THRESHOLD)
    else:
        raise ValueError(f"unknown metric {metric!r}; use 'auc' or 'mcc'")
    weights = StackingWeights(*(v / n_grid for v in (i, j, k, l)))
    return weights, float(achieved)


# ---------------------------------------------------------------------------
# Probability-distribution analytics
# ---------------------------------------------------------------------------

def probability_quantile(scores, value: float) -> float:
    """Mid-distribution quantile of `value` within `scores`: the fraction
    strictly below plus half the fraction equal."""
    s = np.asarray(scores, dtype=np.float64)
    if len(s) == 0:
        raise UndefinedMetricError("quantile of an empty score set is undefined")
    below = float(np.sum(s < value))
    equal = float(np.sum(s == value))
    return (below + 0.5 * equal) / len(s)


@dataclass(frozen=True)
class ProbabilityHistogram:
    edges: np.ndarray
    counts: np.ndarray
    band_markers: tuple = (UNCERTAIN_LOW, UNCERTAIN_HIGH)


def probability_histogram(scores, bin_count: int = 10) -> ProbabilityHistogram:
    """Equal-width histogram over [0, 1] with the uncertainty-band markers
    attached for rendering."""
    if bin_count <= 0:
        raise ValueError("bin_count must be positive")
    s = np.asarray(scores, dtype=np.float64)
    if len(s) and (s.min() < 0.0 or s.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    counts, edges = np.histogram(s, bins=bin_count, range=(0.0, 1.0))
    return ProbabilityHistogram(edges=edges, counts=counts)
