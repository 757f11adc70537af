"""Rank statistics, paired AUC comparison, and multi-model significance.

Distribution tail areas (normal, chi-squared) come from scipy.special;
everything else is computed here. Exact small-sample null distributions
are used where enumeration is cheap:

 - Mann-Whitney: full permutation enumeration when n + m <= 12.
 - Wilcoxon signed rank: subset-sum table over doubled ranks for n <= 20.

The paired AUC test follows the structural-components construction:
each positive contributes its placement among negatives and vice
versa; the variance of the AUC difference combines the empirical
covariances of those placements across both models.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import special

__all__ = [
    "average_ranks", "roc_auc", "pr_auc", "roc_curve_points",
    "pr_curve_points", "delong_test", "mann_whitney_u",
    "wilcoxon_signed_rank", "friedman_test", "holm_correction",
    "critical_difference",
]


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    v = np.asarray(values)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    sv = v[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_binary(y_true) -> np.ndarray:
    y = np.asarray(y_true)
    if not np.isin(y, [0, 1]).all():
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("labels must contain both classes")
    return y.astype(bool)


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve via the rank statistic (ties get half credit)."""
    y = _check_binary(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("scores and labels must align")
    r = average_ranks(s)
    m = int(y.sum())
    n = len(y) - m
    return float((r[y].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_curve_points(y_true, scores):
    """(fpr, tpr, thresholds) at each distinct score, descending."""
    y = _check_binary(y_true)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct = np.flatnonzero(np.diff(s_sorted)) if len(s_sorted) > 1 else np.array([], int)
    cut = np.concatenate([distinct, [len(s_sorted) - 1]])
    tps = np.cumsum(y_sorted)[cut]
    fps = np.cumsum(~y_sorted)[cut]
    m = int(y.sum())
    n = len(y) - m
    fpr = np.concatenate([[0.0], fps / n])
    tpr = np.concatenate([[0.0], tps / m])
    thresholds = np.concatenate([[np.inf], s_sorted[cut]])
    return fpr, tpr, thresholds


def pr_curve_points(y_true, scores):
    """(recall, precision, thresholds); recall is non-decreasing."""
    y = _check_binary(y_true)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct = np.flatnonzero(np.diff(s_sorted)) if len(s_sorted) > 1 else np.array([], int)
    cut = np.concatenate([distinct, [len(s_sorted) - 1]])
    tps = np.cumsum(y_sorted)[cut].astype(np.float64)
    counts = (cut + 1).astype(np.float64)
    m = float(y.sum())
    recall = tps / m
    precision = tps / counts
    thresholds = s_sorted[cut]
    return recall, precision, thresholds


def pr_auc(y_true, scores) -> float:
    """Average precision: step-wise integral of the PR curve."""
    recall, precision, _ = pr_curve_points(y_true, scores)
    prev_r = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_r) * precision).sum())


def _delong_placements(y: np.ndarray, s: np.ndarray):
    pos = s[y]
    neg = s[~y]
    # v10[i]: fraction of negatives below positive i (ties half)
    v10 = np.empty(len(pos))
    v01 = np.empty(len(neg))
    for i, p in enumerate(pos):
        v10[i] = ((neg < p).sum() + 0.5 * (neg == p).sum()) / len(neg)
    for j, q in enumerate(neg):
        v01[j] = ((pos > q).sum() + 0.5 * (pos == q).sum()) / len(pos)
    return v10, v01


def delong_test(y_true, scores_a, scores_b):
    """Paired comparison of two AUCs on the same test set.

    Returns (auc_a, auc_b, p_value) for the two-sided test of equal
    AUC. Degenerate zero-variance cases: p = 1 when the AUCs agree,
    p = 0 otherwise.
    """
    y = _check_binary(y_true)
    sa = np.asarray(scores_a, dtype=np.float64)
    sb = np.asarray(scores_b, dtype=np.float64)
    if sa.shape != y.shape or sb.shape != y.shape:
        raise ValueError("scores and labels must align")
    va10, va01 = _delong_placements(y, sa)
    vb10, vb01 = _delong_placements(y, sb)
    auc_a = va10.mean()
    auc_b = vb10.mean()
    m = len(va10)
    n = len(va01)
    d10 = va10 - vb10
    d01 = va01 - vb01
    var = 0.0
    if m > 1:
        var += d10.var(ddof=1) / m
    if n > 1:
        var += d01.var(ddof=1) / n
    diff = auc_a - auc_b
    if var <= 0:
        p = 1.0 if diff == 0 else 0.0
    else:
        z = diff / math.sqrt(var)
        p = 2.0 * float(special.ndtr(-abs(z)))
    return float(auc_a), float(auc_b), float(p)


def _mwu_statistic(x: np.ndarray, y: np.ndarray) -> float:
    gt = (x[:, None] > y[None, :]).sum()
    eq = (x[:, None] == y[None, :]).sum()
    return float(gt) + 0.5 * float(eq)


def mann_whitney_u(x, y, alternative: str = "two-sided"):
    """Rank-sum test for independent samples; returns (U of x, p).

    alternative "greater" tests whether x tends to exceed y. Exact
    permutation null when n + m <= 12, tie-corrected normal
    approximation (continuity corrected) otherwise.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    u = _mwu_statistic(x, y)

    if n + m <= 12:
        pooled = np.concatenate([x, y])
        idx = range(n + m)
        us = np.array([
            _mwu_statistic(pooled[list(chosen)],
                           pooled[[i for i in idx if i not in set(chosen)]])
            for chosen in itertools.combinations(idx, n)
        ])
        total = len(us)
        p_greater = (us >= u - 1e-12).sum() / total
        p_less = (us <= u + 1e-12).sum() / total
    else:
        mu = n * m / 2.0
        pooled = np.concatenate([x, y])
        _, counts = np.unique(pooled, return_counts=True)
        tie_term = (counts ** 3 - counts).sum() / ((n + m) * (n + m - 1.0))
        sigma2 = n * m / 12.0 * ((n + m + 1.0) - tie_term)
        sigma = math.sqrt(max(sigma2, 1e-300))
        p_greater = float(special.ndtr(-(u - mu - 0.5) / sigma))
        p_less = float(special.ndtr((u - mu + 0.5) / sigma))

    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = min(1.0, 2.0 * min(p_greater, p_less))
    return u, float(p)


def wilcoxon_signed_rank(x, y=None, alternative: str = "two-sided"):
    """Signed-rank test on paired differences; returns (W, p).

    W is the smaller of the positive and negative rank sums. Zero
    differences are dropped. Exact null via the subset-sum table over
    doubled ranks for n <= 20; normal approximation with tie
    correction beyond that.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= 20:
        # distribution of 2*W+ over all 2^n sign assignments
        doubled = np.rint(2 * ranks).astype(int)
        max_sum = int(doubled.sum())
        table = np.zeros(max_sum + 1, dtype=np.float64)
        table[0] = 1.0
        for r in doubled:
            table[r:] += table[:-r].copy() if r > 0 else table.copy()
        total = 2.0 ** n
        cdf = np.cumsum(table) / total
        target = int(round(2 * w_plus))
        p_le = float(cdf[min(target, max_sum)])
        p_ge = float(1.0 - (cdf[target - 1] if target >= 1 else 0.0))
    else:
        mu = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        tie_term = (counts ** 3 - counts).sum() / 48.0
        sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
        p_le = float(special.ndtr((w_plus - mu + 0.5) / sigma))
        p_ge = float(special.ndtr(-(w_plus - mu - 0.5) / sigma))

    if alternative == "greater":       # x tends to exceed y
        p = p_ge
    elif alternative == "less":
        p = p_le
    else:
        p = min(1.0, 2.0 * min(p_le, p_ge))
    return w, float(p)


def friedman_test(metrics: np.ndarray):
    """Friedman rank test over an (n_datasets, k_models) metric table.

    Higher metric is better and receives rank 1. Returns
    (chi2, p_value, mean_ranks).
    """
    table = np.asarray(metrics, dtype=np.float64)
    if table.ndim != 2:
        raise ValueError("metrics must be 2D (datasets x models)")
    n, k = table.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 datasets and 2 models")
    ranks = np.vstack([average_ranks(-row) for row in table])
    mean_ranks = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1.0)) * ((mean_ranks - (k + 1.0) / 2.0) ** 2).sum()
    p = float(special.chdtrc(k - 1, chi2))
    return float(chi2), p, mean_ranks


def holm_correction(p_values) -> np.ndarray:
    """Holm step-down adjusted p-values (same order as the input)."""
    p = np.asarray(p_values, dtype=np.float64)
    order = np.argsort(p, kind="stable")
    k = len(p)
    adjusted = np.empty(k)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (k - rank) * p[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


def critical_difference(metrics: np.ndarray, names: list, alpha: float = 0.1):
    """Mean-rank comparison of models over shared datasets.

    Gate: the Friedman test must reject at ``alpha`` before any
    pairwise comparison is interpreted; otherwise all models fall in
    one clique. Pairwise Wilcoxon signed-rank p-values are Holm
    corrected. Cliques are maximal rank-consecutive groups with no
    significant internal pair.

    Returns a dict with mean ranks, the gate, pairwise decisions, and
    cliques (lists of model names, best rank first).
    """
    table = np.asarray(metrics, dtype=np.float64)
    n, k = table.shape
    if len(names) != k:
        raise ValueError("one name per model column")
    chi2, p_gate, mean_ranks = friedman_test(table)
    order = np.argsort(mean_ranks, kind="stable")

    pair_list = list(itertools.combinations(range(k), 2))
    raw = np.array([wilcoxon_signed_rank(table[:, i], table[:, j])[1]
                    for i, j in pair_list])
    adjusted = holm_correction(raw) if len(raw) else np.array([])
    significant = {}
    for (i, j), p_adj in zip(pair_list, adjusted):
        significant[(i, j)] = significant[(j, i)] = bool(p_adj < alpha)

    if p_gate >= alpha:
        cliques = [[names[i] for i in order]]
    else:
        intervals = []
        for start in range(k):
            end = start
            while end + 1 < k and not any(
                significant[(order[a], order[end + 1])]
                for a in range(start, end + 1)
            ):
                end += 1
            intervals.append((start, end))
        # keep only maximal intervals
        cliques = [
            [names[order[i]] for i in range(s, e + 1)]
            for s, e in intervals
            if not any(s2 <= s and e <= e2 and (s2, e2) != (s, e)
                       for s2, e2 in intervals)
        ]

    return {
        "friedman_chi2": chi2,
        "friedman_p": p_gate,
        "alpha": alpha,
        "mean_ranks": {names[i]: float(mean_ranks[i]) for i in range(k)},
        "order": [names[i] for i in order],
        "pairwise_p": {f"{names[i]}|{names[j]}": float(p)
                       for (i, j), p in zip(pair_list, adjusted)},
        "cliques": cliques,
    }


def render_cd_text(cd: dict) -> str:
    """Plain-text view of a critical_difference result."""
    lines = [
        f"friedman chi2={cd['friedman_chi2']:.4f} p={cd['friedman_p']:.4g} "
        f"(alpha={cd['alpha']})",
        "mean ranks (best first):",
    ]
    for name in cd["order"]:
        lines.append(f"  {cd['mean_ranks'][name]:.3f}  {name}")
    lines.append("cliques (no significant difference within a group):")
    for group in cd["cliques"]:
        lines.append("  [" + " | ".join(group) + "]")
    return "\n".join(lines)


def render_cd_svg(cd: dict) -> str:
    """Rank-axis diagram: models on a number line, bars joining cliques."""
    names = cd["order"]
    ranks = [cd["mean_ranks"][n] for n in names]
    k = len(names)
    width, margin = 640, 60
    axis_y = 60
    span = max(k - 1.0, 1e-9)

    def x_of(rank):
        return margin + (rank - 1.0) / span * (width - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{140 + 18 * (k + len(cd["cliques"]))}" '
        f'font-family="sans-serif" font-size="12">',
        f'<line x1="{margin}" y1="{axis_y}" x2="{width - margin}" y2="{axis_y}" '
        'stroke="black"/>',
    ]
    for tick in range(1, k + 1):
        tx = x_of(tick)
        parts.append(f'<line x1="{tx:.1f}" y1="{axis_y - 4}" x2="{tx:.1f}" '
                     f'y2="{axis_y + 4}" stroke="black"/>')
        parts.append(f'<text x="{tx:.1f}" y="{axis_y - 8}" '
                     f'text-anchor="middle">{tick}</text>')
    label_y = axis_y + 30
    for name, rank in zip(names, ranks):
        nx = x_of(rank)
        parts.append(f'<line x1="{nx:.1f}" y1="{axis_y}" x2="{nx:.1f}" '
                     f'y2="{label_y - 10}" stroke="gray"/>')
        parts.append(f'<text x="{nx:.1f}" y="{label_y}" text-anchor="middle">'
                     f'{name} ({rank:.2f})</text>')
        label_y += 18
    bar_y = label_y + 6
    for group in cd["cliques"]:
        if len(group) < 2:
            continue
        xs = [x_of(cd["mean_ranks"][n]) for n in group]
        parts.append(f'<line x1="{min(xs):.1f}" y1="{bar_y}" x2="{max(xs):.1f}" '
                     f'y2="{bar_y}" stroke="black" stroke-width="4"/>')
        bar_y += 12
    parts.append("</svg>")
    return "\n".join(parts)
