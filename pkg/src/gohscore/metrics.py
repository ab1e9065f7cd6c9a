"""Agreement statistics: MAE, weighted kappa, ICC(2,1), Bland-Altman, OLS,
Wilcoxon signed-rank.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import UndefinedStatisticError
from .synth import round_to_grade

GRADES = np.arange(0, 101, 5)
EXACT_WILCOXON_MAX_N = 25


def _pair(a, b, min_len=1):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} paired values, got {a.size}")
    return a, b


def mae_std(pred, truth):
    """Mean absolute error and the population std of the absolute errors."""
    pred, truth = _pair(pred, truth)
    err = np.abs(pred - truth)
    return float(err.mean()), float(err.std())


def _categories(x):
    x = np.asarray(x)
    idx = np.rint(x / 5.0).astype(int)
    if np.any(idx * 5 != x) or idx.min() < 0 or idx.max() >= len(GRADES):
        raise ValueError("weighted kappa expects grades on the 0-100 step-5 scale")
    return idx


def weighted_kappa(a, b, weighting="linear"):
    """Cohen's weighted kappa over the fixed 21-grade table.

    Parameters
    ----------
    a, b : sequences of grades (0, 5, ..., 100)
    weighting : {"linear", "quadratic"}
    """
    a, b = _pair(a, b, min_len=2)
    ia, ib = _categories(a), _categories(b)
    k = len(GRADES)
    observed = np.zeros((k, k))
    np.add.at(observed, (ia, ib), 1.0)
    observed /= observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    dist = np.abs(np.subtract.outer(np.arange(k), np.arange(k))) / (k - 1)
    if weighting == "linear":
        w = dist
    elif weighting == "quadratic":
        w = dist ** 2
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    denom = float((w * expected).sum())
    if denom == 0.0:
        raise UndefinedStatisticError("kappa undefined: both raters use a single identical grade")
    return 1.0 - float((w * observed).sum()) / denom


def anova_mean_squares(table):
    """Two-way ANOVA mean squares (rows, columns, residual) of an n x k table."""
    x = np.asarray(table, dtype=np.float64)
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * ((x.mean(axis=1) - grand) ** 2).sum()
    ss_cols = n * ((x.mean(axis=0) - grand) ** 2).sum()
    ss_total = ((x - grand) ** 2).sum()
    ss_err = ss_total - ss_rows - ss_cols
    return ss_rows / (n - 1), ss_cols / (k - 1), ss_err / ((n - 1) * (k - 1))


def icc_2_1(table):
    """ICC(2,1): two-way random effects, absolute agreement, single rater.

    ``table`` is n subjects x k raters.
    """
    x = np.asarray(table, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need an n x k table with n, k >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("rating table has missing entries")
    n, k = x.shape
    msr, msc, mse = anova_mean_squares(x)
    denom = msr + (k - 1) * mse + k / n * (msc - mse)
    if denom == 0.0:
        raise UndefinedStatisticError("ICC undefined: no variance in the table")
    return float((msr - mse) / denom)


def bland_altman(a, b):
    """Mean difference ``a - b`` and its 95% limits of agreement."""
    a, b = _pair(a, b, min_len=2)
    d = a - b
    mean = float(d.mean())
    half = 1.96 * float(d.std(ddof=1))
    return mean, mean - half, mean + half


def linear_fit(x, y):
    """Ordinary least squares ``y = slope * x + intercept``."""
    x, y = _pair(x, y, min_len=2)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("x is constant; the fit is degenerate")
    slope = float(dx @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


def _signed_rank_terms(a, b):
    a, b = _pair(a, b)
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise UndefinedStatisticError("all paired differences are zero")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    return ranks, w_plus, w_minus


def _exact_lower_tail(ranks, w):
    # ranks are multiples of 0.5, so doubling makes them integers
    doubled = np.rint(2 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[:-r].copy()
    counts /= counts.sum()
    return float(counts[: int(round(2 * w)) + 1].sum())


def wilcoxon_signed_rank(a, b):
    """Two-sided p-value of the Wilcoxon signed-rank test.

    Zero differences are dropped and tied magnitudes get average ranks.  The
    null distribution is exact for up to 25 non-zero differences; beyond that
    a tie-corrected normal approximation with continuity correction is used.
    """
    ranks, w_plus, w_minus = _signed_rank_terms(a, b)
    w = min(w_plus, w_minus)
    n = ranks.size
    if n <= EXACT_WILCOXON_MAX_N:
        return min(1.0, 2.0 * _exact_lower_tail(ranks, w))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    z = (abs(w - mean) - 0.5) / math.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(max(z, 0.0))))


# ---------------------------------------------------------------------------

@dataclass
class AgreementReport:
    mae: float
    mae_std: float
    wk: float | None
    icc: float
    bland_altman: tuple
    fit: tuple
    wilcoxon_p: float | None = None


REPORT_COLUMNS = ("pattern", "mae", "mae_std", "wk", "icc", "ba_mean", "ba_low", "ba_high",
                  "slope", "intercept", "wilcoxon_p")


def agreement_report(pred, truth, kappa=True, weighting="linear", baseline=None):
    """All agreement metrics of ``pred`` against ``truth``.

    Parameters
    ----------
    pred, truth : continuous predictions and reference values
    kappa : bool
        Compute weighted kappa on predictions rounded to the 5% grade scale.
    baseline : optional predictions from a competing method; when given,
        ``wilcoxon_p`` compares the absolute errors of the two.
    """
    pred, truth = _pair(pred, truth, min_len=2)
    mae, std = mae_std(pred, truth)
    wk = None
    if kappa:
        try:
            wk = weighted_kappa([round_to_grade(v) for v in pred],
                                [round_to_grade(v) for v in truth], weighting)
        except UndefinedStatisticError:
            wk = math.nan
    try:
        icc = icc_2_1(np.column_stack([pred, truth]))
    except UndefinedStatisticError:
        icc = math.nan
    try:
        fit = linear_fit(truth, pred)
    except ValueError:
        fit = (math.nan, math.nan)
    wil = None
    if baseline is not None:
        base, _ = _pair(baseline, truth)
        try:
            wil = wilcoxon_signed_rank(np.abs(pred - truth), np.abs(base - truth))
        except UndefinedStatisticError:
            wil = 1.0
    return AgreementReport(mae, std, wk, icc, bland_altman(pred, truth), fit, wil)


def report_row(pattern, rep):
    def fmt(v):
        return "" if v is None else repr(float(v))

    return [pattern, fmt(rep.mae), fmt(rep.mae_std), fmt(rep.wk), fmt(rep.icc),
            *(fmt(v) for v in rep.bland_altman), *(fmt(v) for v in rep.fit),
            fmt(rep.wilcoxon_p)]


def write_report_csv(path, rows):
    """``rows`` is an iterable of ``(pattern, AgreementReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for pattern, rep in rows:
            w.writerow(report_row(pattern, rep))


def write_plot_data(prefix, pred, truth):
    """Bland-Altman (mean, diff) and correlation (truth, pred) point lists."""
    pred, truth = _pair(pred, truth)
    with open(f"{prefix}_bland_altman.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean", "diff"])
        for p, t in zip(pred.tolist(), truth.tolist()):
            w.writerow([repr((p + t) / 2.0), repr(p - t)])
    with open(f"{prefix}_correlation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth", "pred"])
        for p, t in zip(pred.tolist(), truth.tolist()):
            w.writerow([repr(t), repr(p)])
