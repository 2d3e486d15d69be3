"""Single-step integrators and coupled-path simulators.

Four steppers are provided: Euler-Maruyama, Milstein for commutative noise,
truncated Milstein (Levy area dropped), and a weak-second-order scheme whose
second-order terms are driven by the eta / a-tilde variate tables of
:mod:`amlmc.noise`.

On top of the steppers sit path simulators for a single discretization level,
the antithetic quadruple (two fine legs with swapped half-step noise and
opposite bracket signs, two coarse legs sharing aggregated noise with opposite
bracket signs), the plain coupled fine/coarse pair, and the truncated-Milstein
antithetic triple.  All simulators are vectorised over samples and
deterministic given a stream key.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .model_core import DiffusionModel
from .noise import (
    CoarseStepNoise,
    EtaTable,
    HalfStepNoise,
    NoiseStream,
    build_eta,
    sample_coarse_step,
    sample_half_step,
    swap_fine_halves,
)

__all__ = [
    "SchemeKind",
    "AntitheticQuad",
    "AntitheticTriple",
    "CoupledPair",
    "MAX_LEVEL",
    "euler_step",
    "truncated_milstein_step",
    "milstein_commutative_step",
    "weak2_step",
    "scheme_step",
    "simulate_path",
    "simulate_antithetic_quad",
    "simulate_coupled_pair",
    "simulate_antithetic_triple_tm",
    "write_trajectory_csv",
]

# Hard cap on 2**level steps per unit interval; guards accidental blow-ups.
MAX_LEVEL = 24


class SchemeKind(enum.Enum):
    EULER_MARUYAMA = "euler"
    MILSTEIN_COMMUTATIVE = "milstein-commutative"
    TRUNCATED_MILSTEIN = "truncated-milstein"
    WEAK2 = "weak2"


@dataclass
class AntitheticQuad:
    """Terminal states of the four coupled legs plus their averages."""

    x_bar_f: np.ndarray
    x_tilde_f: np.ndarray
    x_bar_c: np.ndarray
    x_tilde_c: np.ndarray
    max_gap: np.ndarray  # running max over coarse times of ||x_hat_f - x_hat_c||

    @property
    def x_hat_f(self) -> np.ndarray:
        return 0.5 * (self.x_bar_f + self.x_tilde_f)

    @property
    def x_hat_c(self) -> np.ndarray:
        return 0.5 * (self.x_bar_c + self.x_tilde_c)


@dataclass
class AntitheticTriple:
    """Truncated-Milstein coupling: fine leg, swapped-half fine leg, plain coarse leg."""

    x_bar_f: np.ndarray
    x_tilde_f: np.ndarray
    x_bar_c: np.ndarray

    @property
    def x_hat_f(self) -> np.ndarray:
        return 0.5 * (self.x_bar_f + self.x_tilde_f)


@dataclass
class CoupledPair:
    """Plain (non-antithetic) fine/coarse coupling sharing one Brownian path."""

    x_f: np.ndarray
    x_c: np.ndarray


def _check_level(level: int, minimum: int = 0):
    if level < minimum:
        raise ValueError(f"level must be >= {minimum}, got {level}")
    if level > MAX_LEVEL:
        raise ValueError(f"level {level} exceeds the cap {MAX_LEVEL}")


def euler_step(model: DiffusionModel, x: np.ndarray, noise: HalfStepNoise,
               delta: float) -> np.ndarray:
    out = x + delta * model.drift(x)
    for j in range(1, model.brownian_dim + 1):
        out = out + model.sigma(j, x) * noise.db[..., j - 1:j]
    return out


def truncated_milstein_step(model: DiffusionModel, x: np.ndarray, noise: HalfStepNoise,
                            delta: float) -> np.ndarray:
    out = euler_step(model, x, noise, delta)
    db = noise.db
    for j1 in range(1, model.brownian_dim + 1):
        for j2 in range(1, model.brownian_dim + 1):
            if model.lie_is_zero(j1, j2):
                continue
            quad = db[..., j1 - 1] * db[..., j2 - 1]
            if j1 == j2:
                quad = quad - delta
            out = out + 0.5 * model.lie(j1, j2, x) * quad[..., None]
    return out


def milstein_commutative_step(model: DiffusionModel, x: np.ndarray, noise: HalfStepNoise,
                              delta: float) -> np.ndarray:
    # Under the commutative condition the Levy-area contribution cancels
    # identically, so the update coincides with the truncated scheme.
    if not model.commutative:
        raise ValueError(f"model {model.name!r} is not flagged commutative")
    return truncated_milstein_step(model, x, noise, delta)


def weak2_step(model: DiffusionModel, x: np.ndarray, noise: HalfStepNoise,
               eta: EtaTable, delta: float, bracket_sign: float = 1.0) -> np.ndarray:
    """One weak-second-order step.

    Adds to the Euler update every second-order term L_{j1} s_{j2} * eta[j1,j2]
    (indices 0..d, dB^0 = delta convention) and, for bracket_sign = +-1, the
    Levy-area proxy (sign/2) * [s_{j1}, s_{j2}] * a_tilde[j1,j2] over j1 < j2.
    """
    d = model.brownian_dim
    out = euler_step(model, x, noise, delta)
    for j1 in range(d + 1):
        for j2 in range(d + 1):
            if model.lie_is_zero(j1, j2):
                continue
            out = out + model.lie(j1, j2, x) * eta.eta[..., j1, j2, None]
    if d >= 2:
        for j1 in range(1, d + 1):
            for j2 in range(j1 + 1, d + 1):
                if model.lie_is_zero(j1, j2) and model.lie_is_zero(j2, j1):
                    continue
                bracket = model.lie(j1, j2, x) - model.lie(j2, j1, x)
                out = out + (0.5 * bracket_sign) * bracket * eta.a_tilde[..., j1, j2, None]
    return out


def scheme_step(model: DiffusionModel, scheme: SchemeKind, x: np.ndarray,
                noise: HalfStepNoise, delta: float) -> np.ndarray:
    """Dispatch one step of the requested scheme (standard bracket sign)."""
    if scheme is SchemeKind.EULER_MARUYAMA:
        return euler_step(model, x, noise, delta)
    if scheme is SchemeKind.TRUNCATED_MILSTEIN:
        return truncated_milstein_step(model, x, noise, delta)
    if scheme is SchemeKind.MILSTEIN_COMMUTATIVE:
        return milstein_commutative_step(model, x, noise, delta)
    if scheme is SchemeKind.WEAK2:
        hypo = model.dim_smooth > 0
        eta = build_eta(noise, delta, hypo)
        return weak2_step(model, x, noise, eta, delta)
    raise ValueError(f"unknown scheme {scheme!r}")


def _initial_states(x0: np.ndarray, n_samples: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    return np.broadcast_to(x0, (n_samples, x0.shape[-1])).copy()


def simulate_path(model: DiffusionModel, scheme: SchemeKind, x0: np.ndarray,
                  level: int, T: float, stream: NoiseStream, n_samples: int = 1,
                  sample_offset: int = 0, return_trajectory: bool = False):
    """Simulate on the grid {k * T/2**level}; returns terminal states (n_samples, N).

    With return_trajectory=True returns (times, states) with states of shape
    (2**level + 1, n_samples, N).  Each time step draws from the substream
    keyed by its step index, so trajectories are reproducible per sample.
    """
    _check_level(level)
    if T <= 0:
        raise ValueError("T must be positive")
    n_steps = 2 ** level
    delta = T / n_steps
    hypo = model.dim_smooth > 0
    x = _initial_states(x0, n_samples)
    traj = [x.copy()] if return_trajectory else None
    for k in range(n_steps):
        noise = sample_half_step(stream.substream(k), delta, model.brownian_dim,
                                 hypo, n_samples, sample_offset)
        x = scheme_step(model, scheme, x, noise, delta)
        if traj is not None:
            traj.append(x.copy())
    if traj is not None:
        times = np.arange(n_steps + 1) * delta
        return times, np.stack(traj)
    return x


def simulate_antithetic_quad(model: DiffusionModel, x0: np.ndarray, level: int,
                             T: float, stream: NoiseStream, n_samples: int = 1,
                             sample_offset: int = 0) -> AntitheticQuad:
    """Coupled quadruple at fine level ``level`` (coarse partner at level - 1).

    Per coarse step: the standard fine leg takes two weak-2 steps on the fine
    half-noises (bracket +); the antithetic fine leg consumes the same two
    half-steps in reversed order with bracket -; both coarse legs take one
    weak-2 step on the exact aggregate, with bracket + and - respectively.
    """
    _check_level(level, minimum=1)
    if T <= 0:
        raise ValueError("T must be positive")
    n_coarse = 2 ** (level - 1)
    delta_f = T / 2 ** level
    delta_c = 2.0 * delta_f
    d = model.brownian_dim
    hypo = model.dim_smooth > 0

    xf = _initial_states(x0, n_samples)
    xa = xf.copy()
    xc = xf.copy()
    xca = xf.copy()
    max_gap = np.zeros(n_samples)
    for k in range(n_coarse):
        step = sample_coarse_step(stream.substream(k), delta_f, d, hypo,
                                  n_samples, sample_offset)
        swapped = swap_fine_halves(step)
        eta_c = build_eta(step.coarse, delta_c, hypo)
        for half in (step.fine_first, step.fine_second):
            xf = weak2_step(model, xf, half, build_eta(half, delta_f, hypo),
                            delta_f, bracket_sign=1.0)
        for half in (swapped.fine_first, swapped.fine_second):
            xa = weak2_step(model, xa, half, build_eta(half, delta_f, hypo),
                            delta_f, bracket_sign=-1.0)
        xc = weak2_step(model, xc, step.coarse, eta_c, delta_c, bracket_sign=1.0)
        xca = weak2_step(model, xca, step.coarse, eta_c, delta_c, bracket_sign=-1.0)
        gap = 0.5 * (xf + xa) - 0.5 * (xc + xca)
        max_gap = np.maximum(max_gap, np.linalg.norm(gap, axis=-1))
    return AntitheticQuad(x_bar_f=xf, x_tilde_f=xa, x_bar_c=xc, x_tilde_c=xca,
                          max_gap=max_gap)


def simulate_coupled_pair(model: DiffusionModel, x0: np.ndarray, level: int,
                          T: float, stream: NoiseStream, n_samples: int = 1,
                          sample_offset: int = 0) -> CoupledPair:
    """Plain two-leg coupling: fine weak-2 path and coarse weak-2 path on shared noise."""
    _check_level(level, minimum=1)
    if T <= 0:
        raise ValueError("T must be positive")
    n_coarse = 2 ** (level - 1)
    delta_f = T / 2 ** level
    delta_c = 2.0 * delta_f
    d = model.brownian_dim
    hypo = model.dim_smooth > 0

    xf = _initial_states(x0, n_samples)
    xc = xf.copy()
    for k in range(n_coarse):
        step = sample_coarse_step(stream.substream(k), delta_f, d, hypo,
                                  n_samples, sample_offset)
        for half in (step.fine_first, step.fine_second):
            xf = weak2_step(model, xf, half, build_eta(half, delta_f, hypo), delta_f)
        xc = weak2_step(model, xc, step.coarse, build_eta(step.coarse, delta_c, hypo),
                        delta_c)
    return CoupledPair(x_f=xf, x_c=xc)


def simulate_antithetic_triple_tm(model: DiffusionModel, x0: np.ndarray, level: int,
                                  T: float, stream: NoiseStream, n_samples: int = 1,
                                  sample_offset: int = 0) -> AntitheticTriple:
    """Truncated-Milstein antithetic triple at fine level ``level``."""
    _check_level(level, minimum=1)
    if T <= 0:
        raise ValueError("T must be positive")
    n_coarse = 2 ** (level - 1)
    delta_f = T / 2 ** level
    delta_c = 2.0 * delta_f
    d = model.brownian_dim
    hypo = model.dim_smooth > 0

    xf = _initial_states(x0, n_samples)
    xa = xf.copy()
    xc = xf.copy()
    for k in range(n_coarse):
        step = sample_coarse_step(stream.substream(k), delta_f, d, hypo,
                                  n_samples, sample_offset)
        for half in (step.fine_first, step.fine_second):
            xf = truncated_milstein_step(model, xf, half, delta_f)
        for half in (step.fine_second, step.fine_first):
            xa = truncated_milstein_step(model, xa, half, delta_f)
        xc = truncated_milstein_step(model, xc, step.coarse, delta_c)
    return AntitheticTriple(x_bar_f=xf, x_tilde_f=xa, x_bar_c=xc)


def write_trajectory_csv(path, times: np.ndarray, legs: dict) -> None:
    """Dump trajectories as CSV rows (time, leg, component_0..component_{N-1}).

    ``legs`` maps a leg name to an array of shape (len(times), N).
    """
    first = next(iter(legs.values()))
    n_comp = np.asarray(first).shape[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "leg"] + [f"component_{i}" for i in range(n_comp)])
        for name, states in legs.items():
            states = np.asarray(states, dtype=float)
            for t, row in zip(times, states):
                writer.writerow([f"{t:.12g}", name] + [f"{v:.17g}" for v in row])
