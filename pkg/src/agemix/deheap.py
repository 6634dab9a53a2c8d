"""Correction of age heaping in reported partner ages.

Respondents disproportionately report partner ages that are a multiple of
five years away from their own age. Within each (sex, respondent age) group,
expected counts at those "heaped" partner ages are estimated by a
Gaussian-kernel Nadaraya-Watson regression trained only on non-heaped ages;
the positive excess over the expectation is then redistributed to the four
neighbouring ages (p*-2 .. p*+2, never another heaped age), each receiving a
share proportional to its observed count, by moving floor(share * excess)
randomly chosen records. Expected counts and excesses are computed for the
whole group before any record moves, counts are conserved exactly, and all
randomness is driven by per-group seeds derived from the caller's seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "HeapReport",
    "GroupHeapDetail",
    "nw_expected",
    "deheap",
    "heaping_index",
    "is_heaped",
]

# under uniform placement of (p - a) mod 5, a fifth of records sit on heaps
_UNIFORM_SHARE = 0.2
_WINDOW = (-2, -1, 1, 2)


def _require_integer_ages(records) -> None:
    for i, r in enumerate(records):
        for name in ("respondent_age", "partner_age"):
            v = getattr(r, name)
            if abs(v - round(v)) > 1e-9:
                raise ValueError(
                    f"deheaping operates on integer age grids; record {i} has {name}={v!r}"
                )


def is_heaped(respondent_age: int, partner_age: int) -> bool:
    """True when the partner age sits a multiple of five from the respondent."""
    return (int(round(partner_age)) - int(round(respondent_age))) % 5 == 0


def heaping_index(records) -> float:
    """Excess share of records at heaped ages, scaled to [0, 1].

    0 means the heaped share is at (or below) the 1/5 expected under a
    uniform offset distribution; 1 means every record is heaped.
    """
    if not records:
        raise ValueError("heaping_index requires a nonempty record list")
    heaped = sum(1 for r in records if is_heaped(r.respondent_age, r.partner_age))
    frac = heaped / len(records)
    return max(0.0, frac - _UNIFORM_SHARE) / (1.0 - _UNIFORM_SHARE)


def nw_expected(counts, respondent_age: int, bandwidth: float) -> dict[int, float]:
    """Expected counts at heaped partner ages for one (sex, age) group.

    ``counts`` maps integer partner age to an observed count. The regression
    is trained on every integer age in the observed range whose offset from
    the respondent age is not a multiple of five (absent ages count as zero)
    and evaluated at the heaped ages in the range.
    """
    if not counts:
        return {}
    a = int(respondent_age)
    lo, hi = min(counts), max(counts)
    support = np.arange(lo, hi + 1)
    heaped_mask = (support - a) % 5 == 0
    train_p = support[~heaped_mask]
    if train_p.size < 2:
        raise ValueError(
            f"Nadaraya-Watson needs >= 2 non-heaped support ages, got {train_p.size}"
        )
    train_n = np.array([counts.get(int(p), 0) for p in train_p], dtype=float)
    out = {}
    for p_star in support[heaped_mask]:
        u = (p_star - train_p) / bandwidth
        w = np.exp(-0.5 * u * u)
        out[int(p_star)] = float(np.sum(w * train_n) / np.sum(w))
    return out


@dataclass
class GroupHeapDetail:
    """Per-(sex, respondent age) bookkeeping of the correction."""

    sex: int
    respondent_age: int
    n_records: int
    skipped: str | None = None
    expected: dict = field(default_factory=dict)  # p* -> nhat
    excess: dict = field(default_factory=dict)  # p* -> e
    shares: dict = field(default_factory=dict)  # p* -> {p: b}
    moved: dict = field(default_factory=dict)  # p* -> {p: count}


@dataclass
class HeapReport:
    """Summary of one deheaping pass."""

    bandwidth: float
    seed: int
    n_records: int
    index_before: float
    index_after: float
    n_moved: int
    groups: list[GroupHeapDetail] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "seed": self.seed,
            "n_records": self.n_records,
            "heaping_index_before": self.index_before,
            "heaping_index_after": self.index_after,
            "n_moved": self.n_moved,
            "groups": [
                {
                    "sex": g.sex,
                    "respondent_age": g.respondent_age,
                    "n_records": g.n_records,
                    "skipped": g.skipped,
                    "expected": {str(k): v for k, v in g.expected.items()},
                    "excess": {str(k): v for k, v in g.excess.items()},
                    "shares": {
                        str(k): {str(p): b for p, b in v.items()} for k, v in g.shares.items()
                    },
                    "moved": {
                        str(k): {str(p): c for p, c in v.items()} for k, v in g.moved.items()
                    },
                }
                for g in self.groups
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def deheap(records, bandwidth: float = 2.0, seed: int = 0):
    """Redistribute excess heaped records; returns (new_records, HeapReport).

    Groups with fewer than two records, or without enough non-heaped support
    for the kernel regression, pass through unchanged and are noted in the
    report.
    """
    _require_integer_ages(records)
    if not records:
        raise ValueError("deheap requires a nonempty record list")

    index_before = heaping_index(records)
    new_partner = np.array([float(r.partner_age) for r in records])

    groups: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(records):
        key = (int(r.respondent_sex), int(round(r.respondent_age)))
        groups.setdefault(key, []).append(i)

    details = []
    n_moved_total = 0
    for (sex, age) in sorted(groups):
        idx = groups[(sex, age)]
        detail = GroupHeapDetail(sex=sex, respondent_age=age, n_records=len(idx))
        details.append(detail)
        if len(idx) < 2:
            detail.skipped = "fewer than 2 records"
            continue
        counts: dict[int, int] = {}
        by_partner: dict[int, list[int]] = {}
        for i in idx:
            p = int(round(records[i].partner_age))
            counts[p] = counts.get(p, 0) + 1
            by_partner.setdefault(p, []).append(i)
        try:
            expected = nw_expected(counts, age, bandwidth)
        except ValueError as exc:
            detail.skipped = str(exc)
            continue
        detail.expected = expected

        rng = np.random.default_rng(np.random.SeedSequence([seed, sex, age]))
        for p_star in sorted(expected):
            n_star = counts.get(p_star, 0)
            excess = max(n_star - expected[p_star], 0.0)
            detail.excess[p_star] = excess
            if excess <= 0.0 or n_star == 0:
                continue
            denom = expected[p_star] + sum(counts.get(p_star + off, 0) for off in _WINDOW)
            if denom <= 0.0:
                detail.moved[p_star] = {}
                continue
            shares = {}
            move_counts = {}
            for off in _WINDOW:
                p = p_star + off
                # receivers are never heaped themselves: offsets 1..4 mod 5
                assert (p - age) % 5 != 0
                b = counts.get(p, 0) / denom
                shares[p] = b
                # epsilon keeps an exactly-integer b*excess from flooring one
                # short under float round-off
                move_counts[p] = int(math.floor(b * excess + 1e-9))
            detail.shares[p_star] = shares
            total_moving = sum(move_counts.values())
            if total_moving == 0:
                detail.moved[p_star] = move_counts
                continue
            pool = rng.permutation(np.array(by_partner[p_star], dtype=int))
            cursor = 0
            for off in _WINDOW:
                p = p_star + off
                take = move_counts[p]
                for i in pool[cursor : cursor + take]:
                    new_partner[i] = float(p)
                cursor += take
            detail.moved[p_star] = move_counts
            n_moved_total += total_moving

    new_records = [
        replace(r, partner_age=float(p)) if float(p) != float(r.partner_age) else r
        for r, p in zip(records, new_partner)
    ]
    report = HeapReport(
        bandwidth=bandwidth,
        seed=seed,
        n_records=len(records),
        index_before=index_before,
        index_after=heaping_index(new_records),
        n_moved=n_moved_total,
        groups=details,
    )
    return new_records, report
