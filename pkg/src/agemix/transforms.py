"""Dependent-variable transforms of partner age and their Jacobians.

Four outcome parametrisations (linear age, age difference, log age, log
ratio) plus the two family-specific rescalings: a horizontal reflection for
fitting the always-right-skewed gamma to male respondents' data, and a
rescaling of ages into (0, 1) for the beta. Jacobians are the log absolute
derivatives |dy/dp| needed to compare model densities on the common
partner-age scale.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TransformKind",
    "Transform",
    "TransformError",
    "forward",
    "inverse",
    "log_jacobian",
    "forward_array",
    "inverse_array",
    "log_jacobian_array",
]

FEMALE = 1
MALE = 0


class TransformError(ValueError):
    """A record lies outside the domain (or image) of a transform."""


class TransformKind(str, enum.Enum):
    LINEAR_AGE = "linear_age"
    AGE_DIFFERENCE = "age_difference"
    LOG_AGE = "log_age"
    LOG_RATIO = "log_ratio"
    GAMMA_REFLECTED = "gamma_reflected"
    BETA_RESCALED = "beta_rescaled"


@dataclass(frozen=True)
class Transform:
    """A dependent-variable transform.

    ``upper_bound`` is the partner-age ceiling used to rescale ages into
    (0, 1) for the beta family; ``offset`` is the constant added after
    reflecting male respondents' partner ages for the gamma family. Both
    default to 150 years.
    """

    kind: TransformKind
    upper_bound: float = 150.0
    offset: float = 150.0


def _record_tag(age, sex, partner_age) -> str:
    return f"(respondent_age={age!r}, respondent_sex={sex!r}, partner_age={partner_age!r})"


def forward(t: Transform, respondent_age: float, respondent_sex: int, partner_age: float) -> float:
    """Map a partner age to the dependent-variable scale."""
    k = t.kind
    if k is TransformKind.LINEAR_AGE:
        return float(partner_age)
    if k is TransformKind.AGE_DIFFERENCE:
        return float(partner_age - respondent_age)
    if k is TransformKind.LOG_AGE:
        if not partner_age > 0:
            raise TransformError(
                "log-age requires partner_age > 0 for record "
                + _record_tag(respondent_age, respondent_sex, partner_age)
            )
        return math.log(partner_age)
    if k is TransformKind.LOG_RATIO:
        if not partner_age > 0:
            raise TransformError(
                "log-ratio requires partner_age > 0 for record "
                + _record_tag(respondent_age, respondent_sex, partner_age)
            )
        return math.log(partner_age / respondent_age)
    if k is TransformKind.GAMMA_REFLECTED:
        if respondent_sex == MALE:
            return float(t.offset - partner_age)
        return float(partner_age)
    if k is TransformKind.BETA_RESCALED:
        if not 0.0 < partner_age < t.upper_bound:
            raise TransformError(
                f"beta rescaling requires 0 < partner_age < {t.upper_bound} for record "
                + _record_tag(respondent_age, respondent_sex, partner_age)
            )
        return float(partner_age / t.upper_bound)
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover


def inverse(t: Transform, respondent_age: float, respondent_sex: int, y: float) -> float:
    """Map a dependent-variable value back to the partner-age scale."""
    k = t.kind
    if k is TransformKind.LINEAR_AGE:
        return float(y)
    if k is TransformKind.AGE_DIFFERENCE:
        return float(y + respondent_age)
    if k is TransformKind.LOG_AGE:
        return math.exp(y)
    if k is TransformKind.LOG_RATIO:
        return float(respondent_age * math.exp(y))
    if k is TransformKind.GAMMA_REFLECTED:
        if respondent_sex == MALE:
            return float(t.offset - y)
        return float(y)
    if k is TransformKind.BETA_RESCALED:
        if not 0.0 < y < 1.0:
            raise TransformError(f"beta rescaling image is (0, 1); got y={y!r}")
        return float(y * t.upper_bound)
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover


def log_jacobian(t: Transform, respondent_age: float, respondent_sex: int, partner_age: float) -> float:
    """log |dy/dp|, the change-of-variables correction onto the age scale."""
    k = t.kind
    if k in (TransformKind.LINEAR_AGE, TransformKind.AGE_DIFFERENCE, TransformKind.GAMMA_REFLECTED):
        return 0.0
    if k in (TransformKind.LOG_AGE, TransformKind.LOG_RATIO):
        if not partner_age > 0:
            raise TransformError(
                "log transforms require partner_age > 0 for record "
                + _record_tag(respondent_age, respondent_sex, partner_age)
            )
        return -math.log(partner_age)
    if k is TransformKind.BETA_RESCALED:
        return -math.log(t.upper_bound)
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# vectorized versions used by the fitting and evaluation code
# ---------------------------------------------------------------------------


def _first_bad(mask: np.ndarray, ages, sexes, partners, why: str) -> TransformError:
    i = int(np.argmax(mask))
    return TransformError(
        f"{why} at record index {i} "
        + _record_tag(float(ages[i]), int(sexes[i]), float(partners[i]))
    )


def forward_array(t: Transform, ages, sexes, partners) -> np.ndarray:
    ages = np.asarray(ages, dtype=float)
    sexes = np.asarray(sexes)
    p = np.asarray(partners, dtype=float)
    k = t.kind
    if k is TransformKind.LINEAR_AGE:
        return p.copy()
    if k is TransformKind.AGE_DIFFERENCE:
        return p - ages
    if k in (TransformKind.LOG_AGE, TransformKind.LOG_RATIO):
        bad = ~(p > 0)
        if bad.any():
            raise _first_bad(bad, ages, sexes, p, "log transform requires partner_age > 0")
        return np.log(p) if k is TransformKind.LOG_AGE else np.log(p / ages)
    if k is TransformKind.GAMMA_REFLECTED:
        return np.where(sexes == MALE, t.offset - p, p)
    if k is TransformKind.BETA_RESCALED:
        bad = ~((p > 0) & (p < t.upper_bound))
        if bad.any():
            raise _first_bad(bad, ages, sexes, p, f"beta rescaling requires 0 < partner_age < {t.upper_bound}")
        return p / t.upper_bound
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover


def inverse_array(t: Transform, ages, sexes, y) -> np.ndarray:
    ages = np.asarray(ages, dtype=float)
    sexes = np.asarray(sexes)
    y = np.asarray(y, dtype=float)
    k = t.kind
    if k is TransformKind.LINEAR_AGE:
        return y.copy()
    if k is TransformKind.AGE_DIFFERENCE:
        return y + ages
    if k is TransformKind.LOG_AGE:
        return np.exp(y)
    if k is TransformKind.LOG_RATIO:
        return ages * np.exp(y)
    if k is TransformKind.GAMMA_REFLECTED:
        return np.where(sexes == MALE, t.offset - y, y)
    if k is TransformKind.BETA_RESCALED:
        return y * t.upper_bound
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover


def log_jacobian_array(t: Transform, ages, sexes, partners) -> np.ndarray:
    ages = np.asarray(ages, dtype=float)
    p = np.asarray(partners, dtype=float)
    k = t.kind
    if k in (TransformKind.LINEAR_AGE, TransformKind.AGE_DIFFERENCE, TransformKind.GAMMA_REFLECTED):
        return np.zeros_like(p)
    if k in (TransformKind.LOG_AGE, TransformKind.LOG_RATIO):
        bad = ~(p > 0)
        if bad.any():
            raise _first_bad(bad, ages, np.asarray(sexes), p, "log transform requires partner_age > 0")
        return -np.log(p)
    if k is TransformKind.BETA_RESCALED:
        return np.full_like(p, -math.log(t.upper_bound))
    raise ValueError(f"unknown transform {k!r}")  # pragma: no cover
