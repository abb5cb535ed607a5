"""Classification metrics and the Wilcoxon signed-rank test.

Precision/recall/F1 are macro-averaged with a zero convention for empty
denominators. The signed-rank test drops zero differences, average-ranks
ties, and computes the exact two-sided p (all 2^n sign assignments) up to
n=25, switching to a tie-corrected normal approximation beyond that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllZeroDifferences,
    EmptyInput,
    TooFewPairs,
    ValidationError,
)

EXACT_LIMIT = 25


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # C x C counts, rows = true class
    n_test: int
    absent_pred_classes: tuple = ()
    task: str = ""
    model_id: str = ""
    layer: int | None = None
    k: int | None = None


@dataclass(frozen=True)
class WilcoxonResult:
    w_plus: float
    w_minus: float
    n_effective: int
    p_value: float
    method: str  # "exact" | "normal_approx"


@dataclass(frozen=True)
class PairingSpec:
    """Bootstrap pairing for system comparison on a shared test set."""

    n_resamples: int = 30
    fraction: float = 0.8
    seed: int = 0


def compute_metrics(predictions, n_classes: int | None = None) -> EvalReport:
    """Accuracy, macro precision/recall/F1 and confusion from (true, pred) pairs."""
    pairs = list(predictions)
    if not pairs:
        raise EmptyInput("no predictions to score")
    true = np.array([p[0] for p in pairs], dtype=int)
    pred = np.array([p[1] for p in pairs], dtype=int)
    if n_classes is None:
        n_classes = int(max(true.max(), pred.max())) + 1
    if true.min() < 0 or pred.min() < 0 or max(true.max(), pred.max()) >= n_classes:
        raise ValidationError(f"labels must lie in [0, {n_classes})")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)

    diag = confusion.diagonal().astype(np.float64)
    col_sums = confusion.sum(axis=0).astype(np.float64)
    row_sums = confusion.sum(axis=1).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision_c = np.where(col_sums > 0, diag / col_sums, 0.0)
        recall_c = np.where(row_sums > 0, diag / row_sums, 0.0)
        pr_sum = precision_c + recall_c
        f1_c = np.where(pr_sum > 0, 2 * precision_c * recall_c / pr_sum, 0.0)

    absent = tuple(int(c) for c in np.nonzero(col_sums == 0)[0])
    return EvalReport(
        accuracy=float(diag.sum() / len(pairs)),
        precision=float(precision_c.mean()),
        recall=float(recall_c.mean()),
        f1=float(f1_c.mean()),
        confusion=confusion,
        n_test=len(pairs),
        absent_pred_classes=absent,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their rank span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(double_ranks: np.ndarray, w_min_doubled: int) -> float:
    """P(W <= w_min or W >= S - w_min) over all 2^n sign assignments.

    Ranks are doubled so tied (half-integer) ranks become exact integers;
    the count distribution is built by convolving one rank at a time, which
    enumerates every assignment.
    """
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.uint64)
    counts[0] = 1
    for r in double_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    low = int(counts[: w_min_doubled + 1].sum())
    high = int(counts[total - w_min_doubled :].sum())
    n = len(double_ranks)
    return min(1.0, (low + high) / float(2**n))


def wilcoxon_signed_rank(paired_scores, method: str = "auto") -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on (a, b) pairs, differences a-b.

    `method` is "auto" (exact up to 25 effective pairs, normal beyond),
    "exact", or "normal_approx".
    """
    if method not in ("auto", "exact", "normal_approx"):
        raise ValidationError(f"unknown method {method!r}")
    pairs = list(paired_scores)
    diffs = np.array([float(a) - float(b) for a, b in pairs])
    if len(diffs) == 0 or np.all(diffs == 0.0):
        raise AllZeroDifferences("every paired difference is zero")
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n < 5:
        raise TooFewPairs(f"only {n} nonzero differences, need at least 5")

    abs_d = np.abs(diffs)
    ranks = _average_ranks(abs_d)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w_min = min(w_plus, w_minus)

    use_exact = n <= EXACT_LIMIT if method == "auto" else method == "exact"
    if use_exact:
        double_ranks = np.round(2.0 * ranks).astype(np.int64)
        p = _exact_two_sided_p(double_ranks, int(round(2.0 * w_min)))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(abs_d, return_counts=True)
        tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        if var <= 0:
            p = 1.0
        else:
            # continuity correction of 0.5 toward the mean
            z = (w_min - mean + 0.5) / math.sqrt(var)
            p = 2.0 * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
            p = min(1.0, max(p, 5e-324))
        method = "normal_approx"
    return WilcoxonResult(
        w_plus=w_plus,
        w_minus=w_minus,
        n_effective=n,
        p_value=p,
        method=method,
    )


def compare_to_baseline(
    baseline_predictions,
    candidate_predictions,
    pairing: PairingSpec | None = None,
) -> WilcoxonResult:
    """Signed-rank test on paired bootstrap accuracies of two systems.

    Both inputs are (utterance_id, true, pred) triples over the identical
    test set. Each of the K seeded subsamples draws fraction*n indices with
    replacement and scores both systems on the same indices.
    """
    pairing = pairing or PairingSpec()
    base = {u: (t, p) for u, t, p in baseline_predictions}
    cand = {u: (t, p) for u, t, p in candidate_predictions}
    if set(base) != set(cand):
        raise ValidationError("systems were evaluated on different utterance sets")
    if not base:
        raise ValidationError("empty prediction lists")
    utts = sorted(base)
    for u in utts:
        if base[u][0] != cand[u][0]:
            raise ValidationError(f"true label mismatch for utterance {u!r}")

    base_correct = np.array([base[u][0] == base[u][1] for u in utts], dtype=np.float64)
    cand_correct = np.array([cand[u][0] == cand[u][1] for u in utts], dtype=np.float64)
    n = len(utts)
    size = max(1, int(round(pairing.fraction * n)))
    rng = np.random.default_rng(pairing.seed)
    scores = []
    for _ in range(pairing.n_resamples):
        idx = rng.integers(0, n, size=size)
        scores.append((float(cand_correct[idx].mean()), float(base_correct[idx].mean())))
    return wilcoxon_signed_rank(scores)
