"""MAP fitting of distributional regression models with Gaussian posteriors.

The posterior combines the per-record log density of the transformed outcome
with independent N(0, prior_sd^2) priors on every regression coefficient
(including the prior normalizing constants, so objective values are
comparable across dimensionalities). Coefficients act on the *centered*
design (linear-age columns shifted by ``design.AGE_CENTER``); reported
coefficient blocks are translated back to the uncentered scale, which is an
exact linear reparameterization.

Optimization is BFGS with a backtracking (Armijo) line search and analytic
gradients; non-finite objective values act as +inf sentinels that the line
search backs away from. The curvature (Hessian of the negative log posterior
at the optimum) is built by central finite differences of the analytic
gradient, and posterior draws come from the resulting Gaussian (Laplace)
approximation.

Link functions: location-like parameters are identity-linked, positive
parameters log-linked. For the sinh-arcsinh family the scale is
reparameterized as sigma = sigma_star * delta with log sigma_star the linear
predictor, so the tail-weight predictor moves both delta and the effective
scale. Gamma and beta use the first two linear-predictor slots for their own
positive parameters (log k / log theta and log alpha / log beta).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma, log_ndtr

from . import transforms
from .design import ModelSpec, SLOT_NAMES, design_matrices, uncenter_matrix
from .distributions import Family, ParamVector, linpred_slots, log_pdf_slots, params_from_slots
from .transforms import Transform

__all__ = [
    "FitProblem",
    "FitResult",
    "PosteriorDraws",
    "FitError",
    "linpred_to_params",
    "neg_log_posterior",
    "neg_log_posterior_and_grad",
    "fit_map",
    "laplace_draws",
    "posterior_predictive",
    "predictive_for_records",
]

EXP_CLAMP = 700.0
DEFAULT_PRIOR_SD = 5.0

_RESTART_SEED = 202401  # fixed; restarts must be deterministic given init


class FitError(RuntimeError):
    """Fitting could not produce a usable result."""


@dataclass
class FitProblem:
    """One model to fit: family + transform + design spec + data."""

    family: Family
    transform: Transform
    spec: ModelSpec
    records: list
    prior_sd: float | None = DEFAULT_PRIOR_SD


class _Prepared:
    """Arrays and bookkeeping shared by objective/gradient evaluations."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        recs = problem.records
        self.ages = np.array([r.respondent_age for r in recs], dtype=float)
        self.sexes = np.array([r.respondent_sex for r in recs], dtype=int)
        self.partners = np.array([r.partner_age for r in recs], dtype=float)
        self.y = transforms.forward_array(problem.transform, self.ages, self.sexes, self.partners)

        spec = problem.spec
        if spec.uses_splines and spec.knots is None:
            spec = spec.with_knots_from_ages(self.ages) if len(recs) else spec.resolved()
        else:
            spec = spec.resolved()
        self.spec = spec

        self.slots = linpred_slots(problem.family)
        self.X = design_matrices(spec, self.ages, self.sexes, slots=self.slots, center=True)
        self.offsets: dict[str, tuple[int, int]] = {}
        start = 0
        for slot in self.slots:
            d = self.X[slot].shape[1]
            self.offsets[slot] = (start, start + d)
            start += d
        self.dim = start
        self.prior_var = None if problem.prior_sd in (None, math.inf) else float(problem.prior_sd) ** 2
        self.exp_clamps = 0

    def split(self, beta: np.ndarray) -> dict[str, np.ndarray]:
        return {slot: beta[a:b] for slot, (a, b) in self.offsets.items()}

    def etas(self, beta: np.ndarray) -> dict[str, np.ndarray]:
        parts = self.split(beta)
        return {slot: self.X[slot] @ parts[slot] for slot in self.slots}


def _clamped_exp(eta: np.ndarray, prep: _Prepared | None = None) -> np.ndarray:
    over = np.abs(eta) > EXP_CLAMP
    if over.any():
        if prep is not None:
            prep.exp_clamps += int(over.sum())
        eta = np.clip(eta, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(eta)


def _natural_params(family: Family, etas: dict, prep: _Prepared | None = None):
    """Family parameters (in slot order) from the linear predictors."""
    if family is Family.NORMAL:
        return etas["mu"], _clamped_exp(etas["sigma"], prep)
    if family is Family.SKEW_NORMAL:
        return etas["mu"], _clamped_exp(etas["sigma"], prep), etas["epsilon"]
    if family is Family.GAMMA:
        return _clamped_exp(etas["mu"], prep), _clamped_exp(etas["sigma"], prep)
    if family is Family.BETA:
        return _clamped_exp(etas["mu"], prep), _clamped_exp(etas["sigma"], prep)
    if family is Family.SINH_ARCSINH:
        sigma_star = _clamped_exp(etas["sigma"], prep)
        delta = _clamped_exp(etas["delta"], prep)
        # the product can overflow to inf during wild line-search steps; the
        # likelihood then evaluates to -inf and the step is rejected
        with np.errstate(over="ignore"):
            sigma = sigma_star * delta
        return etas["mu"], sigma, etas["epsilon"], delta
    raise ValueError(f"unknown family {family!r}")  # pragma: no cover


def linpred_to_params(
    family: Family,
    eta_mu: float = 0.0,
    eta_sigma: float = 0.0,
    eta_epsilon: float = 0.0,
    eta_delta: float = 0.0,
) -> ParamVector:
    """Apply the link functions to scalar linear predictors."""
    etas = {
        "mu": np.asarray(eta_mu, dtype=float),
        "sigma": np.asarray(eta_sigma, dtype=float),
        "epsilon": np.asarray(eta_epsilon, dtype=float),
        "delta": np.asarray(eta_delta, dtype=float),
    }
    values = _natural_params(family, etas)
    return params_from_slots(family, [float(v) for v in values])


# ---------------------------------------------------------------------------
# gradients of log f with respect to the family's own parameters
# ---------------------------------------------------------------------------


def _inv_mills(u: np.ndarray) -> np.ndarray:
    # phi(u) / Phi(u), stable for very negative u
    return np.exp(-0.5 * u * u - 0.5 * math.log(2.0 * math.pi) - log_ndtr(u))


def _grads_normal(x, mu, sigma):
    z = (x - mu) / sigma
    return z / sigma, (z * z - 1.0) / sigma


def _grads_skew_normal(x, mu, sigma, epsilon):
    z = (x - mu) / sigma
    zeta = _inv_mills(epsilon * z)
    dmu = (z - epsilon * zeta) / sigma
    dsigma = (z * z - 1.0 - epsilon * z * zeta) / sigma
    deps = z * zeta
    return dmu, dsigma, deps


def _grads_gamma(x, k, theta):
    dk = -digamma(k) - np.log(theta) + np.log(x)
    dtheta = (x / theta - k) / theta
    return dk, dtheta


def _grads_beta(x, alpha, beta_p):
    dab = digamma(alpha + beta_p)
    return np.log(x) - digamma(alpha) + dab, np.log1p(-x) - digamma(beta_p) + dab


def _grads_sinh_arcsinh(x, mu, sigma, epsilon, delta):
    z = (x - mu) / sigma
    r = np.arcsinh(z)
    w = np.clip(epsilon + delta * r, -EXP_CLAMP, EXP_CLAMP)
    t = np.tanh(w) - 0.5 * np.sinh(2.0 * w)
    z2p1 = 1.0 + z * z
    dz = t * delta / np.sqrt(z2p1) - z / z2p1
    dmu = -dz / sigma
    dsigma = -(1.0 + z * dz) / sigma
    deps = t
    ddelta = 1.0 / delta + t * r
    return dmu, dsigma, deps, ddelta


_GRADS = {
    Family.NORMAL: _grads_normal,
    Family.SKEW_NORMAL: _grads_skew_normal,
    Family.GAMMA: _grads_gamma,
    Family.BETA: _grads_beta,
    Family.SINH_ARCSINH: _grads_sinh_arcsinh,
}


def _eta_grads(family: Family, x, params, etas) -> dict[str, np.ndarray]:
    """Chain the natural-parameter gradients through the link functions."""
    g = _GRADS[family](x, *params)
    if family is Family.NORMAL:
        mu, sigma = params
        return {"mu": g[0], "sigma": g[1] * sigma}
    if family is Family.SKEW_NORMAL:
        mu, sigma, epsilon = params
        return {"mu": g[0], "sigma": g[1] * sigma, "epsilon": g[2]}
    if family in (Family.GAMMA, Family.BETA):
        p1, p2 = params
        return {"mu": g[0] * p1, "sigma": g[1] * p2}
    if family is Family.SINH_ARCSINH:
        mu, sigma, epsilon, delta = params
        return {
            "mu": g[0],
            "sigma": g[1] * sigma,
            "epsilon": g[2],
            # delta moves both delta itself and the effective scale sigma
            "delta": g[3] * delta + g[1] * sigma,
        }
    raise ValueError(f"unknown family {family!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def _prepare(problem) -> _Prepared:
    return problem if isinstance(problem, _Prepared) else _Prepared(problem)


def _prior_terms(prep: _Prepared, beta: np.ndarray):
    if prep.prior_var is None:
        return 0.0, np.zeros_like(beta)
    v = prep.prior_var
    value = float(np.sum(beta * beta) / (2.0 * v) + beta.size * 0.5 * math.log(2.0 * math.pi * v))
    return value, beta / v


def neg_log_posterior(problem, beta) -> float:
    """Negative log posterior at coefficient vector ``beta`` (centered scale).

    Returns +inf when the likelihood is non-finite at ``beta``.
    """
    prep = _prepare(problem)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prep.dim,):
        raise ValueError(f"beta must have shape ({prep.dim},), got {beta.shape}")
    prior_val, _ = _prior_terms(prep, beta)
    if prep.y.size == 0:
        return prior_val
    params = _natural_params(prep.problem.family, prep.etas(beta), prep)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = log_pdf_slots(prep.problem.family, prep.y, *params)
    total = float(np.sum(ll))
    if not np.isfinite(total):
        return math.inf
    return -total + prior_val


def neg_log_posterior_and_grad(problem, beta):
    """Objective and its analytic gradient; gradient is NaN-free only where
    the objective is finite."""
    prep = _prepare(problem)
    beta = np.asarray(beta, dtype=float)
    prior_val, prior_grad = _prior_terms(prep, beta)
    if prep.y.size == 0:
        return prior_val, prior_grad
    etas = prep.etas(beta)
    params = _natural_params(prep.problem.family, etas, prep)
    grad = np.empty(prep.dim)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = log_pdf_slots(prep.problem.family, prep.y, *params)
        total = float(np.sum(ll))
        if not np.isfinite(total):
            return math.inf, prior_grad
        dl = _eta_grads(prep.problem.family, prep.y, params, etas)
        # dl can still hold inf at near-overflow points the line search is
        # about to reject; the matmul may then produce NaN entries
        for slot, (a, b) in prep.offsets.items():
            grad[a:b] = -(prep.X[slot].T @ dl[slot])
    grad += prior_grad
    return -total + prior_val, grad


# ---------------------------------------------------------------------------
# BFGS with backtracking line search
# ---------------------------------------------------------------------------


def _minimize_bfgs(fg, x0, max_iter: int, grad_tol: float):
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    if not np.isfinite(f):
        return x, f, g, 0, False
    n = x.size
    h_inv = np.eye(n)
    first_update = True
    iterations = 0
    converged = bool(np.max(np.abs(g)) < grad_tol)

    for _ in range(max_iter):
        if converged:
            break
        direction = -h_inv @ g
        slope = float(g @ direction)
        if slope >= 0.0:
            h_inv = np.eye(n)
            first_update = True
            direction = -g
            slope = float(g @ direction)
        step = 1.0
        accepted = None
        for _ in range(60):
            x_new = x + step * direction
            f_new, g_new = fg(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope and np.all(np.isfinite(g_new)):
                accepted = (x_new, f_new, g_new)
                break
            step *= 0.5
        if accepted is None:
            break
        x_new, f_new, g_new = accepted
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first_update:
                h_inv *= sy / float(yv @ yv)
                first_update = False
            rho = 1.0 / sy
            hy = h_inv @ yv
            h_inv = (
                h_inv
                - rho * (np.outer(s, hy) + np.outer(hy, s))
                + (rho * rho * float(yv @ hy) + rho) * np.outer(s, s)
            )
        x, f, g = x_new, f_new, g_new
        iterations += 1
        converged = bool(np.max(np.abs(g)) < grad_tol)

    return x, f, g, iterations, converged


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    """MAP fit: coefficient blocks, curvature, and convergence metadata.

    ``beta_mu`` .. ``beta_delta`` are on the uncentered design scale (None
    for slots the family does not use); ``beta_packed`` is the concatenated
    centered-scale vector the curvature and posterior draws refer to.
    """

    family: Family
    transform: Transform
    spec: ModelSpec
    prior_sd: float | None
    beta_mu: np.ndarray | None
    beta_sigma: np.ndarray | None
    beta_epsilon: np.ndarray | None
    beta_delta: np.ndarray | None
    beta_packed: np.ndarray
    nlp: float
    curvature: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    curvature_pd: bool
    exp_clamps: int
    n_records: int
    offsets: dict = field(repr=False, default_factory=dict)

    @property
    def slots(self) -> tuple[str, ...]:
        return linpred_slots(self.family)

    def block(self, slot: str) -> np.ndarray:
        """Centered-scale coefficients for one distributional parameter."""
        a, b = self.offsets[slot]
        return self.beta_packed[a:b]

    def coef(self, slot: str) -> np.ndarray:
        """Uncentered coefficients for one slot."""
        value = getattr(self, f"beta_{slot}")
        if value is None:
            raise KeyError(f"{self.family.value} has no {slot} block")
        return value

    def coef_sd(self, slot: str) -> np.ndarray:
        """Laplace standard deviations of the uncentered coefficients."""
        cov = np.linalg.inv(self.curvature)
        a, b = self.offsets[slot]
        m = uncenter_matrix(self.spec, slot)
        block_cov = m @ cov[a:b, a:b] @ m.T
        return np.sqrt(np.diag(block_cov))

    def to_dict(self) -> dict:
        blocks = {}
        for slot in self.slots:
            blocks[slot] = [float(v) for v in self.coef(slot)]
        return {
            "family": self.family.value,
            "transform": self.transform.kind.value,
            "spec": self.spec.to_dict(),
            "prior_sd": self.prior_sd,
            "coefficients": blocks,
            "nlp": self.nlp,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "gradient_norm": self.gradient_norm,
                "curvature_pd": self.curvature_pd,
                "exp_clamps": self.exp_clamps,
            },
            "n_records": self.n_records,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _default_init(prep: _Prepared) -> np.ndarray:
    y = prep.y
    beta = np.zeros(prep.dim)
    mean = float(y.mean()) if y.size else 0.0
    sd = float(y.std()) if y.size else 1.0
    sd = max(sd, 1e-6)
    family = prep.problem.family

    def set_intercept(slot, value):
        beta[prep.offsets[slot][0]] = value

    if family in (Family.NORMAL, Family.SKEW_NORMAL, Family.SINH_ARCSINH):
        set_intercept("mu", mean)
        set_intercept("sigma", math.log(sd))
    elif family is Family.GAMMA:
        var = sd * sd
        if var > 0 and mean > 0:
            k = mean * mean / var
            theta = var / mean
        else:
            k, theta = 1.0, max(mean, 1.0)
        set_intercept("mu", math.log(k))
        set_intercept("sigma", math.log(theta))
    elif family is Family.BETA:
        var = max(sd * sd, 1e-12)
        m = min(max(mean, 1e-6), 1.0 - 1e-6)
        common = m * (1.0 - m) / var - 1.0
        if common <= 0:
            common = 2.0
        set_intercept("mu", math.log(m * common))
        set_intercept("sigma", math.log((1.0 - m) * common))
    return beta


def _fd_hessian(fg, x, h_scale: float = 1e-5) -> np.ndarray:
    n = x.size
    hess = np.empty((n, n))
    for j in range(n):
        h = h_scale * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        _, g_plus = fg(x + e)
        _, g_minus = fg(x - e)
        hess[:, j] = (g_plus - g_minus) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def _newton_polish(fg, x, f, g, grad_tol: float, max_steps: int = 10):
    """Newton refinement with the finite-difference Hessian.

    BFGS can creep in narrow, ill-conditioned valleys (the gamma fits on
    reflected ages are the worst case); a few damped Newton steps land the
    gradient below tolerance cheaply.
    """
    for _ in range(max_steps):
        gnorm = np.max(np.abs(g))
        if gnorm < grad_tol:
            return x, f, g, True
        hess = _fd_hessian(fg, x)
        try:
            direction = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(direction)) or float(g @ direction) >= 0.0:
            break
        # the objective is flat to summation round-off near the optimum, so
        # acceptance is driven by gradient decrease with an f no-worse guard
        f_slack = 1e-10 * max(1.0, abs(f))
        step = 1.0
        accepted = None
        for _ in range(40):
            f_new, g_new = fg(x + step * direction)
            if (
                np.isfinite(f_new)
                and np.all(np.isfinite(g_new))
                and f_new <= f + f_slack
                and np.max(np.abs(g_new)) < gnorm
            ):
                accepted = (x + step * direction, f_new, g_new)
                break
            step *= 0.5
        if accepted is None:
            break
        x, f, g = accepted
    return x, f, g, bool(np.max(np.abs(g)) < grad_tol)


def fit_map(
    problem: FitProblem,
    init=None,
    *,
    max_iter: int = 500,
    grad_tol: float = 1e-6,
    n_restarts: int = 3,
) -> FitResult:
    """MAP fit by BFGS; non-convergence is flagged on the result, not raised.

    If the first run does not converge, up to ``n_restarts`` further runs
    start from deterministically jittered copies of the init and the best
    outcome (converged preferred, then lowest objective) is reported.
    """
    if not problem.records:
        raise FitError("fit_map requires at least one record")
    prep = _Prepared(problem)
    fg = lambda b: neg_log_posterior_and_grad(prep, b)
    x0 = np.asarray(init, dtype=float).copy() if init is not None else _default_init(prep)
    if x0.shape != (prep.dim,):
        raise ValueError(f"init must have shape ({prep.dim},), got {x0.shape}")

    rng = np.random.default_rng(_RESTART_SEED)
    best = None
    for attempt in range(1 + n_restarts):
        start = x0 if attempt == 0 else x0 + 0.3 * rng.standard_normal(prep.dim)
        x, f, g, iters, ok = _minimize_bfgs(fg, start, max_iter=max_iter, grad_tol=grad_tol)
        if not ok and np.isfinite(f):
            x, f, g, ok = _newton_polish(fg, x, f, g, grad_tol)
        cand = (x, f, g, iters, ok)
        if best is None or (ok, -f) > (best[4], -best[1]):
            best = cand
        if ok:
            break
    x, f, g, iters, ok = best

    curvature = _fd_hessian(fg, x)
    try:
        np.linalg.cholesky(curvature)
        pd = True
    except np.linalg.LinAlgError:
        pd = False

    parts = prep.split(x)
    uncentered: dict[str, np.ndarray | None] = {slot: None for slot in SLOT_NAMES}
    for slot in prep.slots:
        uncentered[slot] = uncenter_matrix(prep.spec, slot) @ parts[slot]

    return FitResult(
        family=problem.family,
        transform=problem.transform,
        spec=prep.spec,
        prior_sd=problem.prior_sd,
        beta_mu=uncentered["mu"],
        beta_sigma=uncentered["sigma"],
        beta_epsilon=uncentered["epsilon"],
        beta_delta=uncentered["delta"],
        beta_packed=x,
        nlp=float(f),
        curvature=curvature,
        converged=bool(ok),
        iterations=iters,
        gradient_norm=float(np.max(np.abs(g))),
        curvature_pd=pd,
        exp_clamps=prep.exp_clamps,
        n_records=len(problem.records),
        offsets=dict(prep.offsets),
    )


# ---------------------------------------------------------------------------
# Laplace draws and posterior prediction
# ---------------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Draws from the Laplace approximation, one coefficient vector per row.

    Columns follow the packed (centered-scale) coefficient order of the fit.
    """

    draws: np.ndarray
    seed: int


def laplace_draws(fit: FitResult, n_draws: int, seed: int) -> PosteriorDraws:
    """Gaussian posterior draws centered at the MAP estimate."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if not fit.converged:
        raise FitError("cannot draw from a non-converged fit")
    if not fit.curvature_pd:
        raise FitError("curvature is not positive definite; draws unavailable")
    chol = np.linalg.cholesky(fit.curvature)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, fit.beta_packed.size))
    offset = solve_triangular(chol, z.T, trans="T", lower=True).T
    return PosteriorDraws(draws=fit.beta_packed + offset, seed=seed)


def draw_etas(fit: FitResult, draws: np.ndarray, ages, sexes) -> dict[str, np.ndarray]:
    """Linear predictors for every (draw, observation) pair.

    Returns one (n_draws, n_obs) array per active slot.
    """
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    sexes = np.atleast_1d(np.asarray(sexes))
    mats = design_matrices(fit.spec, ages, sexes, slots=fit.slots, center=True)
    out = {}
    for slot in fit.slots:
        a, b = fit.offsets[slot]
        out[slot] = draws[:, a:b] @ mats[slot].T
    return out


def _full_etas(fit: FitResult, etas: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    any_eta = next(iter(etas.values()))
    full = dict(etas)
    for slot in SLOT_NAMES:
        full.setdefault(slot, np.zeros_like(any_eta))
    return full


def _sample_family(family: Family, params, size, rng) -> np.ndarray:
    """Vectorized family sampling with broadcastable parameter arrays."""
    if family is Family.NORMAL:
        mu, sigma = params
        return mu + sigma * rng.standard_normal(size)
    if family is Family.SKEW_NORMAL:
        mu, sigma, epsilon = params
        d = epsilon / np.hypot(1.0, epsilon)
        u = rng.standard_normal(size)
        v = rng.standard_normal(size)
        return mu + sigma * (d * np.abs(u) + np.sqrt(1.0 - d * d) * v)
    if family is Family.GAMMA:
        k, theta = params
        return rng.gamma(np.broadcast_to(k, size), np.broadcast_to(theta, size))
    if family is Family.BETA:
        alpha, beta_p = params
        return rng.beta(np.broadcast_to(alpha, size), np.broadcast_to(beta_p, size))
    if family is Family.SINH_ARCSINH:
        from scipy.special import ndtri

        mu, sigma, epsilon, delta = params
        u = rng.uniform(size=size)
        return mu + sigma * np.sinh((np.arcsinh(ndtri(u)) - epsilon) / delta)
    raise ValueError(f"unknown family {family!r}")  # pragma: no cover


def posterior_predictive(
    fit: FitResult,
    draws: PosteriorDraws,
    respondent_age: float,
    respondent_sex: int,
    n_per_draw: int,
    seed: int,
) -> np.ndarray:
    """Posterior predictive partner ages for one covariate combination.

    Samples ``n_per_draw`` outcome values under each posterior draw and maps
    them back through the inverse transform; returns the pooled vector.
    """
    etas = {s: e[:, 0] for s, e in draw_etas(fit, draws.draws, [respondent_age], [respondent_sex]).items()}
    params = _natural_params(fit.family, _full_etas(fit, etas))
    n_draw_rows = draws.draws.shape[0]
    rng = np.random.default_rng(seed)
    y = _sample_family(
        fit.family, tuple(p[:, None] for p in params), (n_draw_rows, n_per_draw), rng
    ).ravel()
    ages = np.full(y.shape, float(respondent_age))
    sexes = np.full(y.shape, int(respondent_sex))
    return transforms.inverse_array(fit.transform, ages, sexes, y)


def predictive_for_records(
    fit: FitResult,
    draws: PosteriorDraws,
    records,
    n_total: int,
    seed: int,
) -> np.ndarray:
    """Posterior predictive partner ages mirroring a record set's covariates.

    Each of the ``n_total`` samples pairs a uniformly chosen record (its age
    and sex) with a uniformly chosen posterior draw.
    """
    if not records:
        raise ValueError("predictive_for_records requires a nonempty record list")
    ages = np.array([r.respondent_age for r in records], dtype=float)
    sexes = np.array([r.respondent_sex for r in records], dtype=int)
    rng = np.random.default_rng(seed)
    rec_idx = rng.integers(0, len(records), size=n_total)
    draw_idx = rng.integers(0, draws.draws.shape[0], size=n_total)

    sel_ages = ages[rec_idx]
    sel_sexes = sexes[rec_idx]
    mats = design_matrices(fit.spec, sel_ages, sel_sexes, slots=fit.slots, center=True)
    etas = {}
    for slot in fit.slots:
        a, b = fit.offsets[slot]
        etas[slot] = np.einsum("ij,ij->i", mats[slot], draws.draws[draw_idx, a:b])
    params = _natural_params(fit.family, _full_etas(fit, etas))
    y = _sample_family(fit.family, params, (n_total,), rng)
    return transforms.inverse_array(fit.transform, sel_ages, sel_sexes, y)
