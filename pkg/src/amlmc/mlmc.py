"""Multilevel Monte Carlo drivers for the forward problem.

Implements the antithetic multilevel estimator built on the weak-second-order
quad coupling, a plain (non-antithetic) two-leg multilevel baseline, the
truncated-Milstein antithetic variant, and single-level Monte Carlo.  Level 0
always uses independent single-level paths; level l >= 1 uses independent
coupled simulations, so the telescoping identity holds by construction.

``base_level`` shifts every discretization level by a constant: level l of a
plan integrates with step T / 2**(base_level + l).  Stiff models need a
minimum resolution before the asymptotic variance decay kicks in; the shift
changes constants in the cost formulas, not rates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model_core import DiffusionModel
from .noise import NoiseStream
from .schemes import (
    SchemeKind,
    simulate_antithetic_quad,
    simulate_antithetic_triple_tm,
    simulate_coupled_pair,
    simulate_path,
)

__all__ = [
    "LevelPlan",
    "MlmcReport",
    "allocate_amlmc",
    "allocate_mlpf",
    "allocate_amlpf",
    "run_amlmc",
    "run_plain_mlmc",
    "run_ammlmc",
    "run_single_level",
]


@dataclass(frozen=True)
class LevelPlan:
    """Level count and per-level sample sizes for one multilevel run."""

    L: int
    M: tuple
    epsilon: float
    rule: str = "manual"
    base_level: int = 0

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if len(self.M) != self.L + 1:
            raise ValueError("need exactly L + 1 sample counts")
        if any(m < 2 for m in self.M):
            raise ValueError("every M_l must be >= 2")

    def grid_level(self, ell: int) -> int:
        return self.base_level + ell

    def delta(self, ell: int, T: float) -> float:
        return T / 2 ** self.grid_level(ell)

    def analytic_cost(self, T: float) -> float:
        """sum_l M_l / Delta_l, the cost metric used in rate fits."""
        return float(sum(m / self.delta(ell, T)
                         for ell, m in enumerate(self.M)))


@dataclass
class MlmcReport:
    """Per-level summaries of one multilevel run."""

    estimator: float
    level_means: np.ndarray
    level_vars: np.ndarray
    level_counts: np.ndarray
    level_costs: np.ndarray  # leg-steps actually taken per level
    analytic_cost: float
    wall_time: float
    plan: LevelPlan = field(repr=False, default=None)

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.level_costs))

    @property
    def estimator_variance(self) -> float:
        return float(np.sum(self.level_vars / self.level_counts))


def allocate_amlmc(epsilon: float, c: float = 1.0, T: float = 1.0,
                   base_level: int = 0) -> LevelPlan:
    """Antithetic multilevel allocation: L = ceil(log2(1/eps) / 2),
    M_l = max(2, ceil(c eps^-2 Delta_l^{3/2}))."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if c <= 0:
        raise ValueError("c must be positive")
    L = int(np.ceil(0.5 * np.log2(1.0 / epsilon)))
    deltas = [T / 2 ** (base_level + ell) for ell in range(L + 1)]
    M = tuple(max(2, int(np.ceil(c * epsilon**-2 * d**1.5))) for d in deltas)
    return LevelPlan(L=L, M=M, epsilon=epsilon, rule="AMLMC", base_level=base_level)


def allocate_mlpf(epsilon: float, c: float = 1.0, T: float = 1.0,
                  base_level: int = 0) -> LevelPlan:
    """Plain multilevel particle filter allocation:
    M_l = max(2, ceil(c eps^-2 Delta_l^{3/4} Delta_L^{-1/4}))."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    L = int(np.ceil(0.5 * np.log2(1.0 / epsilon)))
    deltas = [T / 2 ** (base_level + ell) for ell in range(L + 1)]
    dl = deltas[-1]
    M = tuple(max(2, int(np.ceil(c * epsilon**-2 * d**0.75 * dl**-0.25)))
              for d in deltas)
    return LevelPlan(L=L, M=M, epsilon=epsilon, rule="MLPF", base_level=base_level)


def allocate_amlpf(epsilon: float, c: float = 1.0, T: float = 1.0,
                   base_level: int = 0) -> LevelPlan:
    """Antithetic multilevel particle filter allocation:
    M_l = max(2, ceil(c eps^-2 Delta_l (L + 1)))."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    L = int(np.ceil(0.5 * np.log2(1.0 / epsilon)))
    deltas = [T / 2 ** (base_level + ell) for ell in range(L + 1)]
    M = tuple(max(2, int(np.ceil(c * epsilon**-2 * d * (L + 1)))) for d in deltas)
    return LevelPlan(L=L, M=M, epsilon=epsilon, rule="AMLPF", base_level=base_level)


def _check_finite(values: np.ndarray, level: int):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise RuntimeError(
            f"non-finite payoff at level {level}, sample index {int(bad[0])}")


def _assemble(diffs_by_level, costs, plan, T, t0) -> MlmcReport:
    means = np.array([float(np.mean(d)) for d in diffs_by_level])
    variances = np.array([float(np.var(d, ddof=1)) for d in diffs_by_level])
    counts = np.array([len(d) for d in diffs_by_level])
    return MlmcReport(
        estimator=float(np.sum(means)),
        level_means=means,
        level_vars=variances,
        level_counts=counts,
        level_costs=np.asarray(costs, dtype=float),
        analytic_cost=plan.analytic_cost(T),
        wall_time=time.perf_counter() - t0,
        plan=plan,
    )


def _run_multilevel(model, phi, x0, T, plan, seed, scheme, coupled_diff) -> MlmcReport:
    t0 = time.perf_counter()
    root = NoiseStream(seed, ("mlmc",))
    diffs, costs = [], []
    lvl0 = plan.grid_level(0)
    x = simulate_path(model, scheme, x0, lvl0, T, root.substream("lvl", 0),
                      n_samples=plan.M[0])
    p0 = np.asarray(phi(x), dtype=float)
    _check_finite(p0, 0)
    diffs.append(p0)
    costs.append(plan.M[0] * 2 ** lvl0)
    for ell in range(1, plan.L + 1):
        fine = plan.grid_level(ell)
        stream = root.substream("lvl", ell)
        diff, legs = coupled_diff(model, phi, x0, fine, T, stream, plan.M[ell])
        _check_finite(diff, ell)
        diffs.append(diff)
        # legs = fine-leg count + coarse-leg count in fine-step units
        costs.append(plan.M[ell] * legs * 2 ** fine)
    return _assemble(diffs, costs, plan, T, t0)


def _quad_diff(model, phi, x0, fine, T, stream, m):
    quad = simulate_antithetic_quad(model, x0, fine, T, stream, n_samples=m)
    pf = 0.5 * (np.asarray(phi(quad.x_bar_f)) + np.asarray(phi(quad.x_tilde_f)))
    pc = 0.5 * (np.asarray(phi(quad.x_bar_c)) + np.asarray(phi(quad.x_tilde_c)))
    return pf - pc, 3.0  # 2 fine legs + 2 coarse half-cost legs


def _pair_diff(model, phi, x0, fine, T, stream, m):
    pair = simulate_coupled_pair(model, x0, fine, T, stream, n_samples=m)
    return np.asarray(phi(pair.x_f)) - np.asarray(phi(pair.x_c)), 1.5


def _triple_diff(model, phi, x0, fine, T, stream, m):
    trip = simulate_antithetic_triple_tm(model, x0, fine, T, stream, n_samples=m)
    pf = 0.5 * (np.asarray(phi(trip.x_bar_f)) + np.asarray(phi(trip.x_tilde_f)))
    return pf - np.asarray(phi(trip.x_bar_c)), 2.5


def run_amlmc(model: DiffusionModel, phi, x0, T: float, plan: LevelPlan,
              seed: int) -> MlmcReport:
    """Antithetic multilevel estimator on the weak-2 quad coupling."""
    return _run_multilevel(model, phi, x0, T, plan, seed, SchemeKind.WEAK2,
                           _quad_diff)


def run_plain_mlmc(model: DiffusionModel, phi, x0, T: float, plan: LevelPlan,
                   seed: int) -> MlmcReport:
    """Non-antithetic multilevel baseline: fine/coarse weak-2 legs on shared noise."""
    return _run_multilevel(model, phi, x0, T, plan, seed, SchemeKind.WEAK2,
                           _pair_diff)


def run_ammlmc(model: DiffusionModel, phi, x0, T: float, plan: LevelPlan,
               seed: int) -> MlmcReport:
    """Antithetic multilevel estimator on the truncated-Milstein triple."""
    return _run_multilevel(model, phi, x0, T, plan, seed,
                           SchemeKind.TRUNCATED_MILSTEIN, _triple_diff)


def run_single_level(model: DiffusionModel, phi, x0, T: float, level: int,
                     M: int, seed: int,
                     scheme: SchemeKind = SchemeKind.WEAK2) -> MlmcReport:
    """Plain Monte Carlo at one discretization level."""
    if M < 2:
        raise ValueError("M must be >= 2")
    t0 = time.perf_counter()
    stream = NoiseStream(seed, ("single", level))
    x = simulate_path(model, scheme, x0, level, T, stream, n_samples=M)
    p = np.asarray(phi(x), dtype=float)
    _check_finite(p, level)
    plan = LevelPlan(L=0, M=(M,), epsilon=float("nan"), rule="single",
                     base_level=level)
    return _assemble([p], [M * 2 ** level], plan, T, t0)
