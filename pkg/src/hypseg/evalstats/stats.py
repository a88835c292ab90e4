"""Nonparametric group statistics: AUROC, Wilcoxon tests, DeLong, Pearson,
Bonferroni. Exact null distributions are counted over doubled midranks so
that ties stay integral."""
import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .._accel import NUMBA_ENABLED, jit
from ..errors import DataError, DegenerateError

EXACT_MAX_N = 12


def _values(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} has non-finite values")
    return x


def auroc(x_neg, x_pos):
    """P(pos > neg) + 0.5 P(pos == neg) over all pairs."""
    neg = _values(x_neg, "negative group")
    pos = _values(x_pos, "positive group")
    r = rankdata(np.concatenate([neg, pos]))
    u = r[neg.size:].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


# ------------------------------------------------------- subset-sum counts

def _subset_counts_numba(w, k, total):
    dp = np.zeros((k + 1, total + 1))
    dp[0, 0] = 1.0
    for v in w:
        for j in range(k, 0, -1):
            for s in range(total, v - 1, -1):
                dp[j, s] += dp[j - 1, s - v]
    return dp


def _subset_counts_numpy(w, k, total):
    dp = np.zeros((k + 1, total + 1))
    dp[0, 0] = 1.0
    for v in w:
        nxt = dp.copy()
        nxt[1:, v:] += dp[:-1, : total + 1 - v]
        dp = nxt
    return dp


_subset_counts_numba = jit(_subset_counts_numba)
_subset_counts = _subset_counts_numba if NUMBA_ENABLED else _subset_counts_numpy


def subset_sum_counts(weights, k=None):
    """Number of subsets with each total weight.

    With ``k`` given, row ``k`` of the table counts subsets of exactly k
    items; otherwise counts are summed over all subset sizes.
    """
    w = np.asarray(weights, dtype=np.int64)
    total = int(w.sum())
    dp = _subset_counts(w, len(w) if k is None else int(k), total)
    return dp[int(k)] if k is not None else dp.sum(axis=0)


def _exact_two_sided(counts, obs, twice_mean):
    """P(|S - mean| >= |obs - mean|); ``counts`` is indexed by S."""
    s = np.arange(counts.size)
    dev = np.abs(2 * s - twice_mean)
    hit = dev >= abs(2 * obs - twice_mean)
    return float(min(1.0, counts[hit].sum() / counts.sum()))


def _tie_term(r):
    _, t = np.unique(r, return_counts=True)
    return float((t ** 3 - t).sum())


def _normal_p(dev, var):
    if var <= 0:
        return 1.0
    z = max(abs(dev) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2.0 * ndtr(-z)))


def _mode(mode, n):
    if mode not in ("exact", "approx", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        return "exact" if n <= EXACT_MAX_N else "approx"
    return mode


def ranksum_test(x, y, mode="auto"):
    """Wilcoxon rank-sum test; returns (rank sum of x, two-sided p)."""
    x = _values(x, "x")
    y = _values(y, "y")
    n1, n2 = x.size, y.size
    N = n1 + n2
    r = rankdata(np.concatenate([x, y]))
    r2 = np.rint(2 * r).astype(np.int64)
    w2 = int(r2[:n1].sum())
    mean2 = n1 * (N + 1)  # twice the null mean
    if _mode(mode, N) == "exact":
        p = _exact_two_sided(subset_sum_counts(r2, n1), w2, 2 * mean2)
    else:
        var = n1 * n2 / 12.0 * ((N + 1) - _tie_term(r) / (N * (N - 1)))
        p = _normal_p(w2 / 2.0 - mean2 / 2.0, var)
    return w2 / 2.0, p


def signedrank_test(pairs, mode="auto"):
    """Wilcoxon signed-rank test on (a, b) pairs; returns (W+, two-sided p).

    Zero differences are dropped before ranking.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
        raise DataError("signed-rank test needs a non-empty list of (a, b) pairs")
    d = pairs[:, 0] - pairs[:, 1]
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateError("all paired differences are zero")
    n = d.size
    r = rankdata(np.abs(d))
    r2 = np.rint(2 * r).astype(np.int64)
    w2 = int(r2[d > 0].sum())
    mean2 = int(r2.sum())  # twice the null mean of doubled sums
    if _mode(mode, n) == "exact":
        p = _exact_two_sided(subset_sum_counts(r2), w2, mean2)
    else:
        var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(r) / 48.0
        p = _normal_p(w2 / 2.0 - mean2 / 4.0, var)
    return w2 / 2.0, p


# ------------------------------------------------------------------ DeLong

def placements(scores, labels):
    """Structural components (V10 over positives, V01 over negatives)."""
    s = np.asarray(scores, dtype=np.float64)
    pos, neg = s[labels], s[~labels]
    psi = (pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :])
    return psi.mean(axis=1), psi.mean(axis=0)


def delong_covariance(scores_a, scores_b, labels):
    """(aucs, covariance matrix of the two AUC estimates)."""
    labels = np.asarray(labels).astype(bool)
    va = placements(scores_a, labels)
    vb = placements(scores_b, labels)
    m, n = va[0].size, va[1].size
    s10 = np.cov(np.vstack([va[0], vb[0]])) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.vstack([va[1], vb[1]])) if n > 1 else np.zeros((2, 2))
    aucs = np.array([va[0].mean(), vb[0].mean()])
    return aucs, s10 / m + s01 / n


def delong_test(scores_a, scores_b, labels):
    """Compare two correlated AUROCs; returns (auc_a, auc_b, z, two-sided p)."""
    a = _values(scores_a, "scores_a")
    b = _values(scores_b, "scores_b")
    labels = np.asarray(labels)
    if not (a.size == b.size == labels.size):
        raise DataError("scores and labels must have equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be binary")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise DataError("both classes must be present")
    (auc_a, auc_b), S = delong_covariance(a, b, labels)
    var = S[0, 0] + S[1, 1] - 2.0 * S[0, 1]
    diff = auc_a - auc_b
    if var <= 1e-15:
        if abs(diff) <= 1e-15:
            return float(auc_a), float(auc_b), 0.0, 1.0
        return float(auc_a), float(auc_b), float(np.copysign(np.inf, diff)), 0.0
    z = diff / np.sqrt(var)
    return float(auc_a), float(auc_b), float(z), float(min(1.0, 2.0 * ndtr(-abs(z))))


# ------------------------------------------------------------------- misc

def pearson(x, y):
    x = _values(x, "x")
    y = _values(y, "y")
    if x.size != y.size or x.size < 2:
        raise DataError("pearson needs two equal-length samples of size >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise DegenerateError("zero variance")
    return float((dx * dy).sum() / (sx * sy))


def bonferroni(pvals):
    p = np.asarray(pvals, dtype=np.float64).ravel()
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DataError("p-values must lie in [0, 1]")
    return np.minimum(1.0, p * p.size).tolist()
