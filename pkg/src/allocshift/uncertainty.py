"""Chi-square uncertainty sets over instance and individual weights.

Divergence convention: D(q, p) = sum((q_i - p_i)^2 / p_i), with no 1/2 factor.
Offsets are distributions minus the uniform center, so the zero offset is the
empirical (uniform over observed support) distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleOffsetError

_SUM_TOL = 1e-9
_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-10
_MAX_BISECT = 200


@dataclass(frozen=True)
class UncertaintyBudget:
    """Radii of the two chi-square balls: within-instance and across-instance."""

    rho_ind: float
    rho_xi: float

    def __post_init__(self):
        if self.rho_ind < 0:
            raise ValueError(f"rho_ind must be >= 0, got {self.rho_ind}")
        if self.rho_xi < 0:
            raise ValueError(f"rho_xi must be >= 0, got {self.rho_xi}")


def default_budget(pool_size: int) -> UncertaintyBudget:
    """rho_ind equal to the pool size (the within ball then covers the simplex),
    rho_xi = 6.25."""
    return UncertaintyBudget(rho_ind=float(pool_size), rho_xi=6.25)


def chi_square_div(q: np.ndarray, p: np.ndarray) -> float:
    """sum((q - p)^2 / p). Both arguments must be probability vectors; p strictly positive."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"length mismatch: q has shape {q.shape}, p has shape {p.shape}")
    if np.any(p <= 0):
        raise ValueError("p must be strictly positive in every coordinate")
    if abs(q.sum() - 1.0) > _SUM_TOL or np.any(q < -_SUM_TOL):
        raise ValueError("q is not a probability vector")
    if abs(p.sum() - 1.0) > _SUM_TOL:
        raise ValueError("p is not a probability vector")
    return float(((q - p) ** 2 / p).sum())


def uniform_center(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError(f"need at least one coordinate, got {m}")
    return np.full(m, 1.0 / m)


def offset_to_distribution(w: np.ndarray) -> np.ndarray:
    """q = w + 1/m. The offset must sum to zero and keep every coordinate >= 0."""
    w = np.asarray(w, dtype=np.float64)
    m = w.shape[0]
    if m < 1:
        raise InfeasibleOffsetError("offset vector is empty")
    if abs(w.sum()) > _SUM_TOL:
        raise InfeasibleOffsetError(f"offset sums to {w.sum():.3e}, expected 0")
    q = w + 1.0 / m
    if np.any(q < -_SUM_TOL):
        raise InfeasibleOffsetError(f"offset drives coordinate {int(np.argmin(q))} below zero")
    return np.maximum(q, 0.0)


def distribution_to_offset(q: np.ndarray) -> np.ndarray:
    """Inverse of offset_to_distribution."""
    q = np.asarray(q, dtype=np.float64)
    if abs(q.sum() - 1.0) > _SUM_TOL or np.any(q < -_SUM_TOL):
        raise InfeasibleOffsetError("q is not a probability vector")
    return q - 1.0 / q.shape[0]


@dataclass(frozen=True, eq=False)
class HierarchicalShift:
    """Across-instance offset plus one within-instance offset per pool."""

    across: np.ndarray
    within: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "across", np.asarray(self.across, dtype=np.float64))
        object.__setattr__(self, "within", tuple(np.asarray(w, dtype=np.float64) for w in self.within))
        if self.across.shape[0] != len(self.within):
            raise InfeasibleOffsetError(
                f"across offset has {self.across.shape[0]} entries but there are {len(self.within)} pools")
        offset_to_distribution(self.across)  # validates
        for j, w in enumerate(self.within):
            try:
                offset_to_distribution(w)
            except InfeasibleOffsetError as exc:
                raise InfeasibleOffsetError(f"instance {j}: {exc}") from exc

    @property
    def instance_distribution(self) -> np.ndarray:
        return offset_to_distribution(self.across)

    def individual_distribution(self, j: int) -> np.ndarray:
        return offset_to_distribution(self.within[j])


def shift_to_dict(shift: HierarchicalShift, instance_ids: list[str],
                  budget: UncertaintyBudget) -> dict:
    return {
        "across": shift.across.tolist(),
        "within": {iid: shift.within[j].tolist() for j, iid in enumerate(instance_ids)},
        "instance_ids": list(instance_ids),
        "budget": {"rho_ind": budget.rho_ind, "rho_xi": budget.rho_xi},
    }


def shift_from_dict(raw: dict) -> tuple[HierarchicalShift, list[str], UncertaintyBudget]:
    ids = list(raw["instance_ids"])
    shift = HierarchicalShift(
        across=np.array(raw["across"], dtype=np.float64),
        within=tuple(np.array(raw["within"][iid], dtype=np.float64) for iid in ids),
    )
    budget = UncertaintyBudget(rho_ind=float(raw["budget"]["rho_ind"]),
                               rho_xi=float(raw["budget"]["rho_xi"]))
    return shift, ids, budget


def is_feasible(shift: HierarchicalShift, budget: UncertaintyBudget) -> tuple[bool, str | None]:
    """Check every ball constraint; returns (flag, first violation description)."""
    k = shift.across.shape[0]
    try:
        q_xi = offset_to_distribution(shift.across)
    except InfeasibleOffsetError as exc:
        return False, f"across offset: {exc}"
    div = chi_square_div(q_xi, uniform_center(k))
    if div > budget.rho_xi + _FEAS_TOL:
        return False, f"across offset: divergence {div:.6f} exceeds rho_xi {budget.rho_xi:.6f}"
    for j, w in enumerate(shift.within):
        try:
            q = offset_to_distribution(w)
        except InfeasibleOffsetError as exc:
            return False, f"instance {j}: {exc}"
        div = chi_square_div(q, uniform_center(w.shape[0]))
        if div > budget.rho_ind + _FEAS_TOL:
            return False, f"instance {j}: divergence {div:.6f} exceeds rho_ind {budget.rho_ind:.6f}"
    return True, None


def _clamped_stationary(v: np.ndarray, p: np.ndarray, lam: float) -> np.ndarray:
    """KKT point q = p (1 + (v - mu) / (2 lam)) with negative coordinates clamped off."""
    m = v.shape[0]
    active = np.ones(m, dtype=bool)
    q = np.zeros(m)
    for _ in range(m):
        pa = p[active]
        va = v[active]
        mu = (pa @ va + 2.0 * lam * (pa.sum() - 1.0)) / pa.sum()
        q = np.zeros(m)
        q[active] = p[active] * (1.0 + (v[active] - mu) / (2.0 * lam))
        newly_negative = (q < 0) & active
        if not newly_negative.any():
            break
        active &= ~newly_negative
    return np.maximum(q, 0.0)


def gradmax(v: np.ndarray, center: np.ndarray, rho: float) -> np.ndarray:
    """argmax of <v, q> over the simplex intersected with the chi-square ball.

    Positive rescaling of v leaves the argmax unchanged. A constant v returns
    the center; rho large enough to contain the best vertex returns that vertex
    (ties toward the smaller index); otherwise the dual variable of the ball
    constraint is bisected to tolerance 1e-10.
    """
    v = np.asarray(v, dtype=np.float64)
    p = np.asarray(center, dtype=np.float64)
    if v.shape != p.shape:
        raise ValueError(f"length mismatch: v has shape {v.shape}, center has shape {p.shape}")
    if np.any(p <= 0) or abs(p.sum() - 1.0) > _SUM_TOL:
        raise ValueError("center must be a strictly positive probability vector")
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    if rho == 0:
        return p.copy()
    if np.ptp(v) <= 1e-14 * max(1.0, float(np.abs(v).max())):
        return p.copy()

    best = int(np.argmax(v))
    vertex = np.zeros_like(p)
    vertex[best] = 1.0
    if chi_square_div(vertex, p) <= rho + 1e-12:
        return vertex

    # tied maxima: the optimum may sit on the max face even when no vertex fits
    tie = v >= v[best] - 1e-12 * max(1.0, abs(float(v[best])))
    if tie.sum() > 1:
        face = np.where(tie, p, 0.0)
        face = face / face.sum()
        if float(((face - p) ** 2 / p).sum()) <= rho + 1e-12:
            return face

    def div_at(lam: float) -> tuple[float, np.ndarray]:
        q = _clamped_stationary(v, p, lam)
        return float(((q - p) ** 2 / p).sum()), q

    hi = max(1.0, float(np.ptp(v)))
    d_hi, q_hi = div_at(hi)
    for _ in range(_MAX_BISECT):
        if d_hi <= rho:
            break
        hi *= 2.0
        d_hi, q_hi = div_at(hi)

    lo = hi / 2.0
    d_lo, q_lo = div_at(lo)
    for _ in range(_MAX_BISECT):
        if d_lo >= rho or lo <= 1e-18:
            break
        lo /= 2.0
        d_lo, q_lo = div_at(lo)
    if d_lo < rho:
        # the max-<v,.> face of the simplex sits inside the ball; q_lo is on it
        return q_lo

    scale = hi
    for _ in range(_MAX_BISECT):
        if hi - lo <= _DUAL_TOL * max(1.0, scale):
            break
        mid = 0.5 * (lo + hi)
        d_mid, q_mid = div_at(mid)
        if d_mid <= rho:
            hi, q_hi = mid, q_mid
        else:
            lo = mid
    return q_hi


def random_feasible_shift(pool_sizes: list[int], budget: UncertaintyBudget,
                          rng: np.random.Generator, spread: float = 0.95) -> HierarchicalShift:
    """Draw a random shift strictly inside both balls (Dirichlet pulled toward uniform)."""
    def pull(m: int, rho: float) -> np.ndarray:
        u = uniform_center(m)
        if m == 1 or rho == 0:
            return np.zeros(m)
        x = rng.dirichlet(np.ones(m))
        div = chi_square_div(x, u)
        if div > 0:
            t = min(1.0, spread * float(np.sqrt(rho / div)))
        else:
            t = 1.0
        q = u + t * (x - u)
        return q - u

    k = len(pool_sizes)
    return HierarchicalShift(
        across=pull(k, budget.rho_xi),
        within=tuple(pull(m, budget.rho_ind) for m in pool_sizes),
    )
