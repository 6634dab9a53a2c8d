"""Candidate outcome distributions: normal, skew normal, gamma, beta, sinh-arcsinh.

All densities are evaluated in log space. The sinh-arcsinh family uses the
transform S(x) = sinh(epsilon + delta * asinh(x)) applied to the standardized
value x_z = (x - mu) / sigma, so that S(X_z) is standard normal. Under this
sign convention a *positive* epsilon stretches the left tail and produces
*negatively* skewed samples (verified empirically in the test suite; the
convention is kept as-is rather than flipped to match other parametrisations
found in the literature).

Large sinh/cosh arguments are guarded by clamping the argument
epsilon + delta * asinh(x_z) at +/- 700 before exponentiation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import (
    betainc,
    betaincinv,
    betaln,
    gammainc,
    gammaincinv,
    gammaln,
    log_ndtr,
    ndtr,
    ndtri,
)

__all__ = [
    "Family",
    "ParamVector",
    "DomainError",
    "ParameterError",
    "Moments",
    "log_pdf",
    "cdf",
    "quantile",
    "sample",
    "empirical_moments",
    "log_pdf_slots",
    "active_slots",
    "linpred_slots",
    "slot_values",
    "params_from_slots",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# sinh/cosh argument guard: |epsilon + delta*asinh(x_z)| is clamped here.
SINH_ARG_CLAMP = 700.0


class DomainError(ValueError):
    """Evaluation point lies outside the support of the distribution."""


class ParameterError(ValueError):
    """Parameter vector violates positivity or completeness requirements."""


class Family(str, enum.Enum):
    """The five candidate distribution families."""

    NORMAL = "normal"
    SKEW_NORMAL = "skew_normal"
    GAMMA = "gamma"
    BETA = "beta"
    SINH_ARCSINH = "sinh_arcsinh"


# Parameter fields used by each family, in packing order. Slots correspond to
# (location-like, scale-like, skewness, tail weight); gamma and beta use the
# first two slots for their own natural parameters.
_SLOTS = {
    Family.NORMAL: ("mu", "sigma"),
    Family.SKEW_NORMAL: ("mu", "sigma", "epsilon"),
    Family.GAMMA: ("k", "theta"),
    Family.BETA: ("alpha", "beta_p"),
    Family.SINH_ARCSINH: ("mu", "sigma", "epsilon", "delta"),
}

# Linear-predictor slots backing those parameters; regression code keys its
# design matrices and coefficient blocks by these names.
_LINPRED_SLOTS = {
    Family.NORMAL: ("mu", "sigma"),
    Family.SKEW_NORMAL: ("mu", "sigma", "epsilon"),
    Family.GAMMA: ("mu", "sigma"),
    Family.BETA: ("mu", "sigma"),
    Family.SINH_ARCSINH: ("mu", "sigma", "epsilon", "delta"),
}

_POSITIVE_FIELDS = ("sigma", "delta", "k", "theta", "alpha", "beta_p")


@dataclass
class ParamVector:
    """Parameter container; only the fields relevant to a family are populated.

    Positivity of sigma, delta, k, theta, alpha and beta_p is enforced at
    construction for whichever of them is set.
    """

    mu: float | None = None
    sigma: float | None = None
    epsilon: float | None = None
    delta: float | None = None
    k: float | None = None
    theta: float | None = None
    alpha: float | None = None
    beta_p: float | None = None

    def __post_init__(self):
        for name in _POSITIVE_FIELDS:
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ParameterError(f"{name} must be positive, got {value!r}")

    def require(self, family: Family) -> tuple[float, ...]:
        """Return the populated slot values for ``family``, erroring on gaps."""
        values = []
        for name in _SLOTS[family]:
            value = getattr(self, name)
            if value is None:
                raise ParameterError(
                    f"{family.value} requires parameter {name!r}, but it is unset"
                )
            values.append(float(value))
        return tuple(values)


def active_slots(family: Family) -> tuple[str, ...]:
    """Names of the parameter fields a family actually uses, in packing order."""
    return _SLOTS[family]


def linpred_slots(family: Family) -> tuple[str, ...]:
    """Linear-predictor slots a family's parameters are driven by."""
    return _LINPRED_SLOTS[family]


def slot_values(family: Family, params: ParamVector) -> tuple[float, ...]:
    """Validated slot values for ``family`` extracted from ``params``."""
    return params.require(family)


def params_from_slots(family: Family, values) -> ParamVector:
    """Inverse of :func:`slot_values`."""
    names = _SLOTS[family]
    if len(values) != len(names):
        raise ParameterError(
            f"{family.value} takes {len(names)} parameters, got {len(values)}"
        )
    return ParamVector(**dict(zip(names, (float(v) for v in values))))


# ---------------------------------------------------------------------------
# log-density kernels (vectorized over x and parameter arrays, no validation)
# ---------------------------------------------------------------------------


def _logpdf_normal(x, mu, sigma):
    z = (x - mu) / sigma
    return -np.log(sigma) - _HALF_LOG_2PI - 0.5 * z * z


def _logpdf_skew_normal(x, mu, sigma, epsilon):
    z = (x - mu) / sigma
    return math.log(2.0) - np.log(sigma) - _HALF_LOG_2PI - 0.5 * z * z + log_ndtr(epsilon * z)


def _logpdf_gamma(x, k, theta):
    out = np.where(
        x > 0,
        -gammaln(k) - k * np.log(theta) + (k - 1.0) * np.log(np.where(x > 0, x, 1.0)) - x / theta,
        -np.inf,
    )
    return out


def _logpdf_beta(x, alpha, beta_p):
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    out = (alpha - 1.0) * np.log(xs) + (beta_p - 1.0) * np.log1p(-xs) - betaln(alpha, beta_p)
    return np.where(inside, out, -np.inf)


def _sas_w(x, mu, sigma, epsilon, delta):
    z = (x - mu) / sigma
    w = epsilon + delta * np.arcsinh(z)
    return z, np.clip(w, -SINH_ARG_CLAMP, SINH_ARG_CLAMP)


def _log_cosh(w):
    a = np.abs(w)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _logpdf_sinh_arcsinh(x, mu, sigma, epsilon, delta):
    z, w = _sas_w(x, mu, sigma, epsilon, delta)
    s = np.sinh(w)
    # log sqrt(1 + z^2) via hypot avoids overflow for extreme z
    with np.errstate(over="ignore"):
        return (
            -np.log(sigma)
            - _HALF_LOG_2PI
            + np.log(delta)
            + _log_cosh(w)
            - np.log(np.hypot(1.0, z))
            - 0.5 * s * s
        )


_LOGPDF = {
    Family.NORMAL: _logpdf_normal,
    Family.SKEW_NORMAL: _logpdf_skew_normal,
    Family.GAMMA: _logpdf_gamma,
    Family.BETA: _logpdf_beta,
    Family.SINH_ARCSINH: _logpdf_sinh_arcsinh,
}


def log_pdf_slots(family: Family, x, *slots):
    """Vectorized log-density on raw slot arrays.

    Out-of-support x yields -inf rather than an error; this is the
    "total log-likelihood" mode used by the fitting code. Positivity of the
    slot arrays is the caller's responsibility (link functions guarantee it).
    """
    return _LOGPDF[family](np.asarray(x, dtype=float), *slots)


def _check_support(family: Family, x: float) -> None:
    if family is Family.GAMMA and not x > 0:
        raise DomainError(f"gamma support is x > 0, got x={x!r}")
    if family is Family.BETA and not (0.0 < x < 1.0):
        raise DomainError(f"beta support is 0 < x < 1, got x={x!r}")


def log_pdf(family: Family, params: ParamVector, x: float, *, strict: bool = True) -> float:
    """Natural log of the density of ``family`` at ``x``.

    With ``strict`` (the default) an out-of-support ``x`` raises
    :class:`DomainError`; with ``strict=False`` it returns ``-inf`` so callers
    accumulating a total log-likelihood can handle it themselves.
    """
    slots = params.require(family)
    if strict:
        _check_support(family, x)
    return float(log_pdf_slots(family, x, *slots))


# ---------------------------------------------------------------------------
# CDFs
# ---------------------------------------------------------------------------

# standardized left anchor for skew-normal quadrature; the left tail mass
# below it is bounded by 2*Phi(-40) ~ 1e-349
_SKEWNORM_Z_ANCHOR = 40.0


def _skew_normal_cdf_scalar(x: float, mu: float, sigma: float, epsilon: float) -> float:
    z = (x - mu) / sigma
    if z <= -_SKEWNORM_Z_ANCHOR:
        return 0.0
    if z >= _SKEWNORM_Z_ANCHOR:
        return 1.0

    def integrand(t):
        return 2.0 * math.exp(-0.5 * t * t - _HALF_LOG_2PI) * ndtr(epsilon * t)

    if z > 0:
        val, _ = quad(integrand, -_SKEWNORM_Z_ANCHOR, z, epsabs=1e-12, limit=300, points=[0.0])
    else:
        val, _ = quad(integrand, -_SKEWNORM_Z_ANCHOR, z, epsabs=1e-12, limit=300)
    return min(max(val, 0.0), 1.0)


def _skew_normal_cdf_array(x: np.ndarray, mu: float, sigma: float, epsilon: float) -> np.ndarray:
    """Cumulative quadrature over sorted points; one short quad per segment."""
    order = np.argsort(x, kind="stable")
    xs = x[order]

    def integrand(t):
        return (2.0 / sigma) * math.exp(-0.5 * ((t - mu) / sigma) ** 2 - _HALF_LOG_2PI) * ndtr(
            epsilon * (t - mu) / sigma
        )

    out = np.empty_like(xs)
    lo = mu - _SKEWNORM_Z_ANCHOR * sigma
    acc = 0.0
    prev = lo
    for i, xi in enumerate(xs):
        if xi <= lo:
            out[i] = 0.0
            continue
        seg, _ = quad(integrand, prev, xi, epsabs=1e-13, limit=200)
        acc += seg
        prev = xi
        out[i] = min(max(acc, 0.0), 1.0)
    result = np.empty_like(out)
    result[order] = out
    return result


def cdf(family: Family, params: ParamVector, x):
    """Cumulative distribution function; accepts a scalar or an array of x."""
    slots = params.require(family)
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))

    if family is Family.NORMAL:
        mu, sigma = slots
        out = ndtr((xa - mu) / sigma)
    elif family is Family.GAMMA:
        k, theta = slots
        out = np.where(xa > 0, gammainc(k, np.maximum(xa, 0.0) / theta), 0.0)
    elif family is Family.BETA:
        alpha, beta_p = slots
        out = betainc(alpha, beta_p, np.clip(xa, 0.0, 1.0))
    elif family is Family.SINH_ARCSINH:
        mu, sigma, epsilon, delta = slots
        _, w = _sas_w(xa, mu, sigma, epsilon, delta)
        out = ndtr(np.sinh(w))
    elif family is Family.SKEW_NORMAL:
        mu, sigma, epsilon = slots
        if xa.size == 1:
            out = np.array([_skew_normal_cdf_scalar(float(xa[0]), mu, sigma, epsilon)])
        else:
            out = _skew_normal_cdf_array(xa, mu, sigma, epsilon)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {family!r}")

    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# quantile functions
# ---------------------------------------------------------------------------


def _skew_normal_quantile_scalar(q: float, mu: float, sigma: float, epsilon: float) -> float:
    # bracket around the normal quantile, expanding geometrically
    z0 = ndtri(q)
    lo, hi = z0 - 1.0, z0 + 1.0
    f = lambda z: _skew_normal_cdf_scalar(mu + sigma * z, mu, sigma, epsilon) - q
    flo, fhi = f(lo), f(hi)
    width = 2.0
    while flo > 0.0:
        lo -= width
        width *= 2.0
        flo = f(lo)
    width = 2.0
    while fhi < 0.0:
        hi += width
        width *= 2.0
        fhi = f(hi)
    z = brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16)
    return mu + sigma * z


def quantile(family: Family, params: ParamVector, q):
    """Inverse CDF; accepts a scalar or an array of probabilities in (0, 1)."""
    slots = params.require(family)
    scalar = np.isscalar(q) or np.ndim(q) == 0
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any((qa <= 0.0) | (qa >= 1.0)):
        raise DomainError("quantile probabilities must lie strictly in (0, 1)")

    if family is Family.NORMAL:
        mu, sigma = slots
        out = mu + sigma * ndtri(qa)
    elif family is Family.GAMMA:
        k, theta = slots
        out = theta * gammaincinv(k, qa)
    elif family is Family.BETA:
        alpha, beta_p = slots
        out = betaincinv(alpha, beta_p, qa)
    elif family is Family.SINH_ARCSINH:
        mu, sigma, epsilon, delta = slots
        out = mu + sigma * np.sinh((np.arcsinh(ndtri(qa)) - epsilon) / delta)
    elif family is Family.SKEW_NORMAL:
        mu, sigma, epsilon = slots
        out = np.array([_skew_normal_quantile_scalar(float(v), mu, sigma, epsilon) for v in qa])
    else:  # pragma: no cover
        raise ValueError(f"unknown family {family!r}")

    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample(family: Family, params: ParamVector, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. values; deterministic for a given ``seed``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    slots = params.require(family)
    rng = np.random.default_rng(seed)

    if family is Family.NORMAL:
        mu, sigma = slots
        return mu + sigma * rng.standard_normal(n)
    if family is Family.SKEW_NORMAL:
        # Z = d|U| + sqrt(1-d^2) V with d = eps/sqrt(1+eps^2) has density
        # 2 phi(z) Phi(eps z)
        mu, sigma, epsilon = slots
        d = epsilon / math.hypot(1.0, epsilon)
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        z = d * np.abs(u) + math.sqrt(1.0 - d * d) * v
        return mu + sigma * z
    if family is Family.GAMMA:
        k, theta = slots
        return rng.gamma(shape=k, scale=theta, size=n)
    if family is Family.BETA:
        alpha, beta_p = slots
        return rng.beta(alpha, beta_p, size=n)
    if family is Family.SINH_ARCSINH:
        # closed-form quantile applied to uniforms
        u = rng.uniform(size=n)
        return quantile(family, params, u)
    raise ValueError(f"unknown family {family!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# empirical moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Moments:
    """Sample moments; skewness/kurtosis are NaN when not available."""

    mean: float
    sd: float
    skewness: float
    kurtosis: float


def empirical_moments(values) -> Moments:
    """Population-style sample moments of a vector.

    sd is the population standard deviation sqrt(m2); skewness is
    m3 / m2^(3/2) and kurtosis m4 / m2^2 with m_r the central moments.
    Skewness and kurtosis are NaN for degenerate (sd = 0) or too-short input;
    sd is NaN for a single observation.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empirical_moments requires a nonempty input")
    mean = float(v.mean())
    if v.size < 2:
        return Moments(mean, math.nan, math.nan, math.nan)
    c = v - mean
    m2 = float(np.mean(c**2))
    sd = math.sqrt(m2)
    if v.size < 3 or sd == 0.0:
        return Moments(mean, sd, math.nan, math.nan)
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    return Moments(mean, sd, m3 / m2**1.5, m4 / m2**2)
