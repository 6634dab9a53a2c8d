"""Model comparison: ELPD (PSIS-LOO or exact k-fold) and QQ RMSE.

Pointwise log likelihoods are always evaluated on the partner-age scale by
adding the log Jacobian of the dependent-variable transform, which makes
ELPD values comparable across models fit on different outcome
parametrisations.

The PSIS estimator smooths, per record, the top 20% of importance weights by
an empirical-Bayes generalized Pareto fit (Zhang & Stephens style), truncates
the smoothed weights at the largest raw weight, and reports the Pareto tail
index k-hat per record; records with k-hat > 0.7 are flagged as unreliable.
Standard errors follow the usual pointwise convention
se = sqrt(n * var(pointwise)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import transforms
from .design import design_matrices
from .distributions import log_pdf_slots
from .inference import (
    FitResult,
    PosteriorDraws,
    _full_etas,
    _natural_params,
    fit_map,
    laplace_draws,
)

__all__ = [
    "LogLikMatrix",
    "ElpdResult",
    "ComparisonReport",
    "ComparisonRow",
    "pointwise_loglik",
    "elpd_loo",
    "elpd_diff",
    "qq_rmse",
    "DEFAULT_QUANTILES",
    "KHAT_WARN",
]

DEFAULT_QUANTILES = tuple(np.round(np.arange(0.1, 0.91, 0.1), 10))
KHAT_WARN = 0.7
_TAIL_FRACTION = 0.2
_MIN_TAIL = 5
_DRAW_CHUNK = 256


@dataclass
class LogLikMatrix:
    """Per-draw, per-record log densities on the partner-age scale."""

    values: np.ndarray  # (n_draws, n_records)

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_records(self) -> int:
        return self.values.shape[1]


def pointwise_loglik(
    fit: FitResult,
    draws: PosteriorDraws,
    records,
    *,
    transform=None,
) -> LogLikMatrix:
    """Jacobian-adjusted log-likelihood matrix for ``records`` under ``fit``.

    Entry (d, i) is the log density of record i's partner age under draw d.
    Any non-finite entry raises, naming the offending record and draw.
    """
    t = transform if transform is not None else fit.transform
    ages = np.array([r.respondent_age for r in records], dtype=float)
    sexes = np.array([r.respondent_sex for r in records], dtype=int)
    partners = np.array([r.partner_age for r in records], dtype=float)
    y = transforms.forward_array(t, ages, sexes, partners)
    jac = transforms.log_jacobian_array(t, ages, sexes, partners)

    mats = design_matrices(fit.spec, ages, sexes, slots=fit.slots, center=True)
    n_draws = draws.draws.shape[0]
    out = np.empty((n_draws, len(records)))
    for start in range(0, n_draws, _DRAW_CHUNK):
        stop = min(start + _DRAW_CHUNK, n_draws)
        chunk = draws.draws[start:stop]
        etas = {}
        for slot in fit.slots:
            a, b = fit.offsets[slot]
            etas[slot] = chunk[:, a:b] @ mats[slot].T
        params = _natural_params(fit.family, _full_etas(fit, etas))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out[start:stop] = log_pdf_slots(fit.family, y[None, :], *params) + jac[None, :]

    if not np.all(np.isfinite(out)):
        d, i = np.argwhere(~np.isfinite(out))[0]
        raise ValueError(
            f"non-finite log likelihood at draw {d}, record {i} "
            f"(respondent_age={ages[i]}, respondent_sex={sexes[i]}, partner_age={partners[i]})"
        )
    return LogLikMatrix(values=out)


# ---------------------------------------------------------------------------
# generalized Pareto machinery
# ---------------------------------------------------------------------------


def gpd_fit(exceedances: np.ndarray) -> tuple[float, float]:
    """Empirical-Bayes fit of a generalized Pareto to sorted exceedances.

    Returns (k, sigma); ``exceedances`` must be ascending with a positive
    maximum. The shape estimate is regularized toward 0.5 by a weak prior.
    """
    x = np.asarray(exceedances, dtype=float)
    n = x.size
    m = 30 + int(math.isqrt(n))
    idx = np.arange(1.0, m + 1.0)
    bs = 1.0 - np.sqrt(m / (idx - 0.5))
    quart = x[n // 4] if x[n // 4] > 0 else x[x > 0][0]
    bs = bs / (3.0 * quart) + 1.0 / x[-1]
    ks = np.mean(np.log1p(-bs[:, None] * x[None, :]), axis=1)
    profile = n * (np.log(-bs / ks) - ks - 1.0)
    weights = 1.0 / np.sum(np.exp(profile[None, :] - profile[:, None]), axis=1)
    weights /= weights.sum()
    b = float(np.sum(bs * weights))
    k = float(np.mean(np.log1p(-b * x)))
    sigma = -k / b
    prior_n = 10.0
    k = k * n / (n + prior_n) + prior_n * 0.5 / (n + prior_n)
    return k, sigma


def _gpd_quantiles(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < 1e-12:
        return sigma * (-np.log1p(-p))
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def _psis_column(ll_col: np.ndarray) -> tuple[np.ndarray, float]:
    """Smoothed, self-normalized log importance weights for one record.

    Reference implementation; ``_psis_matrix`` is the vectorized equivalent
    used in production and is tested against this one.
    """
    lw = -ll_col
    lw = lw - lw.max()
    n = lw.size
    m = int(math.floor(_TAIL_FRACTION * n))
    khat = -math.inf
    if m >= _MIN_TAIL:
        order = np.argsort(lw, kind="stable")
        tail_idx = order[n - m :]
        cutoff = max(lw[order[n - m - 1]], math.log(np.finfo(float).tiny))
        exp_cutoff = math.exp(cutoff)
        exceed = np.exp(lw[tail_idx]) - exp_cutoff
        if exceed[-1] > 0:
            if np.count_nonzero(exceed > 0) < _MIN_TAIL:
                # weights so concentrated the tail underflows; unassessable
                khat = math.inf
            else:
                k, sigma = gpd_fit(exceed)
                khat = k
                if np.isfinite(k) and k >= 1.0 / 3.0:
                    probs = (np.arange(m) + 0.5) / m
                    smoothed = np.log(_gpd_quantiles(probs, k, sigma) + exp_cutoff)
                    lw = lw.copy()
                    lw[tail_idx] = np.minimum(smoothed, 0.0)
    return lw - logsumexp(lw), khat


_PSIS_CHUNK = 512


def _gpd_fit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise generalized Pareto fits; x is (rows, m) ascending per row."""
    rows, n = x.shape
    m = 30 + int(math.isqrt(n))
    idx = np.arange(1.0, m + 1.0)
    bs0 = 1.0 - np.sqrt(m / (idx - 0.5))
    quart = x[:, n // 4].copy()
    bad = quart <= 0
    if bad.any():
        # fall back to each row's smallest positive exceedance
        masked = np.where(x > 0, x, np.inf)
        quart[bad] = masked[bad].min(axis=1)
    bs = bs0[None, :] / (3.0 * quart[:, None]) + 1.0 / x[:, -1][:, None]
    ks = np.mean(np.log1p(-bs[:, :, None] * x[:, None, :]), axis=2)
    profile = n * (np.log(-bs / ks) - ks - 1.0)
    profile -= profile.max(axis=1, keepdims=True)
    w = np.exp(profile)
    w /= w.sum(axis=1, keepdims=True)
    b = np.sum(bs * w, axis=1)
    k = np.mean(np.log1p(-b[:, None] * x), axis=1)
    sigma = -k / b
    prior_n = 10.0
    k = k * n / (n + prior_n) + prior_n * 0.5 / (n + prior_n)
    return k, sigma


def _psis_matrix(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized PSIS over all records; returns (normalized lw, khat)."""
    s, n = values.shape
    lw = -values
    lw = lw - lw.max(axis=0, keepdims=True)
    m = int(math.floor(_TAIL_FRACTION * s))
    khat = np.full(n, -math.inf)
    if m >= _MIN_TAIL:
        order = np.argsort(lw, axis=0, kind="stable")
        cols = np.arange(n)
        cutoff = np.maximum(lw[order[s - m - 1], cols], math.log(np.finfo(float).tiny))
        tail_idx = order[s - m :, :]
        tail = np.take_along_axis(lw, tail_idx, axis=0)
        exp_cutoff = np.exp(cutoff)
        exceed = np.exp(tail) - exp_cutoff[None, :]
        positive = exceed[-1, :] > 0
        n_pos = np.count_nonzero(exceed > 0, axis=0)
        khat[positive & (n_pos < _MIN_TAIL)] = math.inf
        valid = np.nonzero(positive & (n_pos >= _MIN_TAIL))[0]
        probs = (np.arange(m) + 0.5) / m
        for start in range(0, valid.size, _PSIS_CHUNK):
            chunk = valid[start : start + _PSIS_CHUNK]
            k, sigma = _gpd_fit_rows(exceed[:, chunk].T)
            khat[chunk] = k
            smooth = np.isfinite(k) & (k >= 1.0 / 3.0)
            if not smooth.any():
                continue
            sm_cols = chunk[smooth]
            ks = k[smooth][:, None]
            sig = sigma[smooth][:, None]
            with np.errstate(divide="ignore"):
                quantiles = np.where(
                    np.abs(ks) < 1e-12,
                    sig * (-np.log1p(-probs))[None, :],
                    sig * np.expm1(-ks * np.log1p(-probs)[None, :]) / np.where(np.abs(ks) < 1e-12, 1.0, ks),
                )
            smoothed = np.minimum(np.log(quantiles + exp_cutoff[sm_cols][:, None]), 0.0)
            sub = lw[:, sm_cols]
            np.put_along_axis(sub, tail_idx[:, sm_cols], smoothed.T, axis=0)
            lw[:, sm_cols] = sub
    lw = lw - logsumexp(lw, axis=0, keepdims=True)
    return lw, khat


@dataclass
class ElpdResult:
    """ELPD estimate with its standard error and per-record contributions."""

    elpd: float
    se: float
    pointwise: np.ndarray
    method: str
    khat: np.ndarray | None = None
    flagged: tuple[int, ...] = ()

    def __iter__(self):
        # unpack as (elpd, se, pointwise)
        return iter((self.elpd, self.se, self.pointwise))


def _pointwise_se(pointwise: np.ndarray) -> float:
    n = pointwise.size
    if n < 2:
        return 0.0
    return float(math.sqrt(n * np.var(pointwise, ddof=1)))


def elpd_loo(
    ll: LogLikMatrix,
    method: str = "psis",
    *,
    problem=None,
    folds: int = 10,
    n_draws: int = 1000,
    seed: int = 0,
) -> ElpdResult:
    """Leave-one-out expected log predictive density.

    ``method="psis"`` estimates LOO from the draw matrix alone (requires at
    least 100 draws). ``method="exact_kfold"`` refits ``problem`` on K
    training folds and scores each record out of fold; it needs the
    originating FitProblem and ignores the draw values in ``ll`` beyond the
    record count.
    """
    if method == "psis":
        values = ll.values
        if values.shape[0] < 100:
            raise ValueError("psis requires at least 100 draws")
        lw, khat = _psis_matrix(values)
        pointwise = logsumexp(lw + values, axis=0)
        flagged = tuple(int(i) for i in np.nonzero(khat > KHAT_WARN)[0])
        if flagged:
            warnings.warn(
                f"PSIS tail index k-hat exceeds {KHAT_WARN} for {len(flagged)} "
                f"record(s); ELPD may be unreliable",
                RuntimeWarning,
                stacklevel=2,
            )
        return ElpdResult(
            elpd=float(pointwise.sum()),
            se=_pointwise_se(pointwise),
            pointwise=pointwise,
            method="psis",
            khat=khat,
            flagged=flagged,
        )

    if method == "exact_kfold":
        if problem is None:
            raise ValueError("exact_kfold needs the originating FitProblem")
        records = problem.records
        n = len(records)
        if ll is not None and ll.n_records != n:
            raise ValueError("log-likelihood matrix does not match the problem's records")
        # pin spline knots on the full data so folds share one design
        from .inference import _Prepared

        spec = _Prepared(problem).spec
        base = replace(problem, spec=spec)
        assignment = np.arange(n) % folds
        pointwise = np.empty(n)
        for fold in range(folds):
            held = np.nonzero(assignment == fold)[0]
            if held.size == 0:
                continue
            train = [records[i] for i in np.nonzero(assignment != fold)[0]]
            sub = replace(base, records=train)
            fit = fit_map(sub)
            draws = laplace_draws(fit, n_draws, seed=seed + fold + 1)
            held_ll = pointwise_loglik(fit, draws, [records[i] for i in held])
            pointwise[held] = logsumexp(held_ll.values, axis=0) - math.log(n_draws)
        return ElpdResult(
            elpd=float(pointwise.sum()),
            se=_pointwise_se(pointwise),
            pointwise=pointwise,
            method="exact_kfold",
        )

    raise ValueError(f"unknown ELPD method {method!r}")


def elpd_diff(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Paired ELPD difference sum(a - b) and its pointwise standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"pointwise vectors differ in length: {a.shape} vs {b.shape}")
    d = a - b
    return float(d.sum()), _pointwise_se(d)


def qq_rmse(observed, predictive, quantiles=DEFAULT_QUANTILES) -> float:
    """RMSE between observed and predictive quantiles across groups.

    ``observed`` and ``predictive`` map group keys to sample vectors; every
    observed group must be present and nonempty on both sides. Quantiles use
    linear interpolation of the empirical CDF (numpy's default, R type 7).
    """
    problems = []
    for key, obs in observed.items():
        if len(obs) == 0:
            problems.append(f"{key}: empty observed group")
        if key not in predictive:
            problems.append(f"{key}: missing predictive group")
        elif len(predictive[key]) == 0:
            problems.append(f"{key}: empty predictive group")
    if problems:
        raise ValueError("qq_rmse group problems: " + "; ".join(str(p) for p in problems))
    if not observed:
        raise ValueError("qq_rmse requires at least one group")

    qs = np.asarray(quantiles, dtype=float)
    errors = []
    for key in observed:
        q_obs = np.quantile(np.asarray(observed[key], dtype=float), qs)
        q_pred = np.quantile(np.asarray(predictive[key], dtype=float), qs)
        errors.append(q_obs - q_pred)
    stacked = np.concatenate(errors)
    return float(np.sqrt(np.mean(stacked**2)))


# ---------------------------------------------------------------------------
# comparison reports
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    """One model's metrics inside a ranked comparison."""

    rank: int
    name: str
    elpd: float
    elpd_se: float
    elpd_diff: float
    diff_se: float
    qq_rmse: float
    converged: bool = True
    n_flagged: int = 0


@dataclass
class ComparisonReport:
    """Ranked model comparison (higher ELPD is better)."""

    rows: list[ComparisonRow]

    @classmethod
    def from_models(cls, entries) -> "ComparisonReport":
        """Build from (name, ElpdResult, qq_rmse, converged) tuples."""
        entries = list(entries)
        order = sorted(range(len(entries)), key=lambda i: -entries[i][1].elpd)
        best = entries[order[0]][1]
        rows = []
        for rank, i in enumerate(order, start=1):
            name, res, qq, converged = entries[i]
            if i == order[0]:
                diff, dse = 0.0, 0.0
            else:
                diff, dse = elpd_diff(res.pointwise, best.pointwise)
            rows.append(
                ComparisonRow(
                    rank=rank,
                    name=name,
                    elpd=res.elpd,
                    elpd_se=res.se,
                    elpd_diff=diff,
                    diff_se=dse,
                    qq_rmse=qq,
                    converged=converged,
                    n_flagged=len(res.flagged),
                )
            )
        return cls(rows=rows)

    def to_dicts(self) -> list[dict]:
        return [
            {
                "rank": r.rank,
                "model": r.name,
                "elpd": r.elpd,
                "elpd_diff": r.elpd_diff,
                "se_of_diff": r.diff_se,
                "qq_rmse": r.qq_rmse,
                "elpd_se": r.elpd_se,
                "converged": r.converged,
                "n_flagged": r.n_flagged,
            }
            for r in self.rows
        ]
