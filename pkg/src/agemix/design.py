"""Design matrices for the five regression specifications.

Each specification assigns one design row per distributional parameter
(location, scale, skewness, tail weight). Rows range from a bare intercept
through linear age-sex interactions up to sex-specific natural cubic splines
in respondent age. Sex is coded 1 = female.

The natural cubic spline basis is the truncated-power construction: columns
are piecewise cubic, C2-continuous, and exactly linear beyond the boundary
knots. Columns are rescaled by the boundary span so values stay O(1).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ModelTag",
    "ModelSpec",
    "DesignRow",
    "spline_basis",
    "build_design",
    "design_matrices",
    "slot_recipes",
    "uncenter_matrix",
    "AGE_CENTER",
]

SLOT_NAMES = ("mu", "sigma", "epsilon", "delta")

# linear-age columns are centered at this age inside the optimizer; reported
# coefficients are translated back to the uncentered scale
AGE_CENTER = 35.0


class ModelTag(str, enum.Enum):
    """Regression specifications, plus the intercept-only setting used for
    the per-subset distribution comparison fits."""

    INTERCEPT_ONLY = "intercept_only"
    CONVENTIONAL = "conventional"
    DISTRIBUTIONAL_1 = "distributional_1"
    DISTRIBUTIONAL_2 = "distributional_2"
    DISTRIBUTIONAL_3 = "distributional_3"
    DISTRIBUTIONAL_4 = "distributional_4"


_DISPLAY = {
    ModelTag.INTERCEPT_ONLY: "Intercept only",
    ModelTag.CONVENTIONAL: "Conventional",
    ModelTag.DISTRIBUTIONAL_1: "Distributional 1",
    ModelTag.DISTRIBUTIONAL_2: "Distributional 2",
    ModelTag.DISTRIBUTIONAL_3: "Distributional 3",
    ModelTag.DISTRIBUTIONAL_4: "Distributional 4",
}

# row recipes; column kinds are const / sex / age / sexage / spline / sexspline
_CONST = ("const",)
_LINEAR = ("const", "sex", "age", "sexage")
_ADDITIVE = ("const", "sex", "age")
_SPLINE = ("const", "sex", "spline", "sexspline")

_RECIPES = {
    ModelTag.INTERCEPT_ONLY: (_CONST, _CONST, _CONST, _CONST),
    ModelTag.CONVENTIONAL: (_LINEAR, _CONST, _CONST, _CONST),
    ModelTag.DISTRIBUTIONAL_1: (_LINEAR, _ADDITIVE, _ADDITIVE, _ADDITIVE),
    ModelTag.DISTRIBUTIONAL_2: (_LINEAR, _LINEAR, _LINEAR, _LINEAR),
    ModelTag.DISTRIBUTIONAL_3: (_SPLINE, _LINEAR, _LINEAR, _LINEAR),
    ModelTag.DISTRIBUTIONAL_4: (_SPLINE, _SPLINE, _SPLINE, _SPLINE),
}


@dataclass(frozen=True)
class ModelSpec:
    """A regression specification plus its spline configuration.

    ``knots`` holds the resolved interior knot positions; when ``None`` they
    are placed at evenly spaced quantiles of the observed respondent ages
    the first time a spline design is built (see ``with_knots_from_ages``).
    """

    tag: ModelTag
    interior_knots: int = 5
    boundary: tuple[float, float] = (15.0, 64.0)
    knots: tuple[float, ...] | None = None

    def __post_init__(self):
        lo, hi = self.boundary
        if not lo < hi:
            raise ValueError(f"boundary must be increasing, got {self.boundary}")
        if self.knots is not None:
            _check_knots(self.knots, self.boundary)

    @property
    def display_name(self) -> str:
        return _DISPLAY[self.tag]

    @property
    def uses_splines(self) -> bool:
        return any("spline" in r for r in _RECIPES[self.tag])

    def resolved(self) -> "ModelSpec":
        """Spec with concrete knots (evenly spaced fallback)."""
        if not self.uses_splines or self.knots is not None:
            return self
        lo, hi = self.boundary
        m = self.interior_knots
        pts = tuple(lo + (hi - lo) * (i + 1) / (m + 1) for i in range(m))
        return replace(self, knots=pts)

    def with_knots_from_ages(self, ages) -> "ModelSpec":
        """Spec with interior knots at quantiles {1/(m+1), ..., m/(m+1)} of
        ``ages``; falls back to even spacing when the quantiles collide or
        leave the boundary interval."""
        if not self.uses_splines or self.knots is not None:
            return self
        ages = np.asarray(ages, dtype=float)
        m = self.interior_knots
        lo, hi = self.boundary
        qs = np.quantile(ages, [(i + 1) / (m + 1) for i in range(m)])
        ok = np.all(np.diff(qs) > 0) and qs[0] > lo and qs[-1] < hi
        if not ok:
            return self.resolved()
        return replace(self, knots=tuple(float(q) for q in qs))

    def to_dict(self) -> dict:
        return {
            "tag": self.tag.value,
            "interior_knots": self.interior_knots,
            "boundary": list(self.boundary),
            "knots": None if self.knots is None else list(self.knots),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            tag=ModelTag(d["tag"]),
            interior_knots=int(d.get("interior_knots", 5)),
            boundary=tuple(d.get("boundary", (15.0, 64.0))),
            knots=None if d.get("knots") is None else tuple(d["knots"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DesignRow:
    """Uncentered design rows, one per distributional parameter."""

    x_mu: np.ndarray
    x_sigma: np.ndarray
    x_epsilon: np.ndarray
    x_delta: np.ndarray

    def row(self, slot: str) -> np.ndarray:
        return getattr(self, f"x_{slot}")


def _check_knots(knots, boundary) -> None:
    lo, hi = boundary
    ks = np.asarray(knots, dtype=float)
    if ks.size and (np.any(np.diff(ks) <= 0) or ks[0] <= lo or ks[-1] >= hi):
        raise ValueError(
            f"interior knots must be strictly increasing and inside {boundary}, got {list(ks)}"
        )


def spline_basis(age, interior_knots, boundary) -> np.ndarray:
    """Natural cubic spline basis values (intercept excluded).

    Returns ``interior + 1`` columns: a rescaled linear term plus one
    truncated-power term per interior knot. For a scalar ``age`` the result
    is a 1-D vector; for an array it is an (n, K) matrix.
    """
    _check_knots(interior_knots, boundary)
    lo, hi = float(boundary[0]), float(boundary[1])
    scalar = np.isscalar(age) or np.ndim(age) == 0
    x = np.atleast_1d(np.asarray(age, dtype=float))
    knots = np.concatenate([[lo], np.asarray(interior_knots, dtype=float), [hi]])
    span = hi - lo

    def d(k_idx):
        return (
            np.clip(x - knots[k_idx], 0.0, None) ** 3
            - np.clip(x - knots[-1], 0.0, None) ** 3
        ) / (knots[-1] - knots[k_idx])

    cols = [(x - lo) / span]
    d_last = d(len(knots) - 2)
    for k_idx in range(len(knots) - 2):
        cols.append((d(k_idx) - d_last) / span**2)
    out = np.column_stack(cols)
    return out[0] if scalar else out


def _columns(recipe, spec: ModelSpec, ages, sexes, *, center: bool) -> np.ndarray:
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    sexes = np.atleast_1d(np.asarray(sexes, dtype=float))
    n = ages.shape[0]
    a = ages - AGE_CENTER if center else ages
    cols = []
    for kind in recipe:
        if kind == "const":
            cols.append(np.ones(n))
        elif kind == "sex":
            cols.append(sexes.copy())
        elif kind == "age":
            cols.append(a)
        elif kind == "sexage":
            cols.append(sexes * a)
        elif kind == "spline":
            basis = spline_basis(ages, spec.knots, spec.boundary)
            cols.extend(basis.T)
        elif kind == "sexspline":
            basis = spline_basis(ages, spec.knots, spec.boundary)
            cols.extend((sexes[:, None] * basis).T)
        else:  # pragma: no cover
            raise ValueError(f"unknown column kind {kind!r}")
    return np.column_stack(cols)


def slot_recipes(spec: ModelSpec) -> dict[str, tuple[str, ...]]:
    """Column recipe per distributional-parameter slot."""
    return dict(zip(SLOT_NAMES, _RECIPES[spec.tag]))


def row_width(spec: ModelSpec, recipe) -> int:
    k = spec.interior_knots + 1
    return sum(k if "spline" in kind else 1 for kind in recipe)


def build_design(spec: ModelSpec, respondent_age: float, respondent_sex: int) -> DesignRow:
    """Uncentered design rows for one observation."""
    s = spec.resolved()
    rows = {}
    for slot, recipe in zip(SLOT_NAMES, _RECIPES[s.tag]):
        rows[slot] = _columns(recipe, s, respondent_age, respondent_sex, center=False)[0]
    return DesignRow(
        x_mu=rows["mu"], x_sigma=rows["sigma"], x_epsilon=rows["epsilon"], x_delta=rows["delta"]
    )


def design_matrices(
    spec: ModelSpec, ages, sexes, slots=SLOT_NAMES, *, center: bool = True
) -> dict[str, np.ndarray]:
    """(n, d) design matrix per requested slot.

    ``center=True`` produces the internally used parameterization with
    linear-age columns shifted by ``AGE_CENTER``; the spec must already carry
    resolved knots if it uses splines.
    """
    s = spec.resolved()
    recipes = slot_recipes(s)
    return {slot: _columns(recipes[slot], s, ages, sexes, center=center) for slot in slots}


def uncenter_matrix(spec: ModelSpec, slot: str) -> np.ndarray:
    """Matrix M with uncentered coefficients b = M @ c (c centered).

    Centering maps the age column a to a - AGE_CENTER, which folds
    AGE_CENTER * c_age into the intercept (and AGE_CENTER * c_sexage into the
    sex main effect); M undoes that fold. Spline columns are never centered.
    """
    recipe = slot_recipes(spec)[slot]
    # expand recipe into per-column kinds
    kinds: list[str] = []
    k = spec.interior_knots + 1
    for kind in recipe:
        kinds.extend([kind] * (k if "spline" in kind else 1))
    d = len(kinds)
    m = np.eye(d)
    for j, kind in enumerate(kinds):
        if kind == "age":
            m[kinds.index("const"), j] = -AGE_CENTER
        elif kind == "sexage":
            m[kinds.index("sex"), j] = -AGE_CENTER
    return m
