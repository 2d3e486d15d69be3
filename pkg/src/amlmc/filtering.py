"""Particle filtering for partially observed diffusions.

A plain particle filter (weak-2 dynamics between observation times), a
two-leg coupled filter with maximally coupled resampling, and a four-leg
antithetic coupled filter, assembled into multilevel drivers (MLPF, AMLPF and
the truncated-Milstein AMMLPF variant).

Conventions: observations arrive every ``obs_interval`` time units; level l
propagates with step obs_interval / 2**l; filter estimates are computed from
the weighted ensemble BEFORE resampling; after resampling weights reset to
uniform.  Resampling is multinomial, triggered either every step or when the
ESS of the designated reference leg (the coarsest) drops below M/2.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .mlmc import LevelPlan, allocate_amlpf, allocate_mlpf
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
    "StateSpaceModel",
    "ParticleEnsemble",
    "CoupledEnsemble",
    "FilterReport",
    "ess",
    "maximal_coupling_sample",
    "four_way_coupling_sample",
    "pf_run",
    "cpf_run",
    "acpf_run",
    "run_mlpf",
    "generate_observations",
    "write_observations_csv",
    "read_observations_csv",
]

# When the residual mass 1 - sum(min) is below this, every pmf is effectively
# identical and the coupled draw routes to the common branch.
_RESIDUAL_EPS = 1e-14


@dataclass
class StateSpaceModel:
    """Diffusion dynamics observed at regular times through a positive density."""

    dynamics: DiffusionModel
    x0: np.ndarray
    obs_log_density: callable  # (states (M, N), y) -> log g per particle
    observations: np.ndarray   # (T_obs, dim_y) or (T_obs,)
    obs_interval: float = 1.0

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.observations = np.asarray(self.observations, dtype=float)
        if self.obs_interval <= 0:
            raise ValueError("obs_interval must be positive")

    @property
    def n_obs(self) -> int:
        return self.observations.shape[0]

    def obs_density(self, x, y):
        return np.exp(self.obs_log_density(x, y))


@dataclass
class ParticleEnsemble:
    particles: np.ndarray  # (M, N)
    weights: np.ndarray    # (M,), normalized

    @property
    def ess(self) -> float:
        return ess(self.weights)

    def estimate(self, phi) -> float:
        return float(np.sum(self.weights * np.asarray(phi(self.particles))))


@dataclass
class CoupledEnsemble:
    """Parallel ensembles sharing slot indices across legs."""

    legs: tuple  # of ParticleEnsemble


@dataclass
class FilterReport:
    """Per-observation-time estimates of one filtering run."""

    estimates: np.ndarray          # (T_obs,)
    level_estimates: np.ndarray    # (L + 1, T_obs): PF_0 row then differences
    plan: LevelPlan = field(repr=False, default=None)
    analytic_cost: float = 0.0
    wall_time: float = 0.0


def ess(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def _check_pmfs(pmfs):
    size = len(pmfs[0])
    for w in pmfs:
        w = np.asarray(w, dtype=float)
        if len(w) != size:
            raise ValueError("pmfs must share support size")
        if np.any(w <= 0):
            raise ValueError("pmfs must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("pmf not normalized within 1e-9")


def _inverse_cdf(pmf: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").clip(0, len(pmf) - 1)


def maximal_coupling_sample(W1, W2, uniforms: np.ndarray):
    """Draw index pairs with marginals W1, W2 and maximal meeting probability.

    ``uniforms`` has shape (n_draws, 3): branch selector, common/first-leg
    draw, second-leg draw.  Returns (i1, i2) of shape (n_draws,).
    """
    _check_pmfs((W1, W2))
    W1 = np.asarray(W1, dtype=float)
    W2 = np.asarray(W2, dtype=float)
    u = np.atleast_2d(np.asarray(uniforms, dtype=float))
    overlap = np.minimum(W1, W2)
    mass = overlap.sum()
    n = u.shape[0]
    i1 = np.empty(n, dtype=np.intp)
    i2 = np.empty(n, dtype=np.intp)
    if 1.0 - mass < _RESIDUAL_EPS:
        i1[:] = _inverse_cdf(W1, u[:, 1])
        i2[:] = i1
        return i1, i2
    common = u[:, 0] < mass
    if np.any(common):
        idx = _inverse_cdf(overlap / mass, u[common, 1])
        i1[common] = idx
        i2[common] = idx
    rest = ~common
    if np.any(rest):
        r = 1.0 - mass
        i1[rest] = _inverse_cdf((W1 - overlap) / r, u[rest, 1])
        i2[rest] = _inverse_cdf((W2 - overlap) / r, u[rest, 2])
    return i1, i2


def four_way_coupling_sample(W1, W2, W3, W4, uniforms: np.ndarray):
    """Draw index quadruples with marginals W1..W4, meeting on the joint overlap.

    ``uniforms`` has shape (n_draws, 5): branch selector plus one draw per leg
    (the first doubles as the common-branch draw).
    """
    pmfs = tuple(np.asarray(w, dtype=float) for w in (W1, W2, W3, W4))
    _check_pmfs(pmfs)
    u = np.atleast_2d(np.asarray(uniforms, dtype=float))
    overlap = np.minimum.reduce(pmfs)
    mass = overlap.sum()
    n = u.shape[0]
    out = [np.empty(n, dtype=np.intp) for _ in range(4)]
    if 1.0 - mass < _RESIDUAL_EPS:
        idx = _inverse_cdf(pmfs[0], u[:, 1])
        for o in out:
            o[:] = idx
        return tuple(out)
    common = u[:, 0] < mass
    if np.any(common):
        idx = _inverse_cdf(overlap / mass, u[common, 1])
        for o in out:
            o[common] = idx
    rest = ~common
    if np.any(rest):
        r = 1.0 - mass
        for j, (o, w) in enumerate(zip(out, pmfs)):
            o[rest] = _inverse_cdf((w - overlap) / r, u[rest, 1 + j])
    return tuple(out)


def _log_normalize(logw: np.ndarray, where: str):
    norm = logsumexp(logw)
    if not np.isfinite(norm):
        raise RuntimeError(f"degenerate likelihood: all weights vanish at {where}")
    return np.exp(logw - norm)


def _should_resample(policy: str, reference_weights: np.ndarray) -> bool:
    if policy == "always":
        return True
    if policy == "ess":
        m = len(reference_weights)
        return ess(reference_weights) < m / 2.0
    raise ValueError(f"unknown resample policy {policy!r}")


def pf_run(ssm: StateSpaceModel, level: int, M: int, phi, seed: int,
           resample_policy: str = "ess") -> np.ndarray:
    """Plain particle filter; returns per-observation-time estimates."""
    if M < 1:
        raise ValueError("M must be >= 1")
    root = NoiseStream(seed, ("pf", level))
    x = np.broadcast_to(ssm.x0, (M, ssm.x0.shape[-1])).copy()
    logw = np.full(M, -np.log(M))
    estimates = np.empty(ssm.n_obs)
    for k, y in enumerate(ssm.observations):
        x = simulate_path(ssm.dynamics, SchemeKind.WEAK2, x, level,
                          ssm.obs_interval, root.substream("step", k),
                          n_samples=M)
        logw = logw + np.asarray(ssm.obs_log_density(x, y), dtype=float)
        w = _log_normalize(logw, f"step {k}")
        estimates[k] = np.sum(w * np.asarray(phi(x)))
        if M > 1 and _should_resample(resample_policy, w):
            u = root.substream("step", k, "res").uniforms(M, 1)[:, 0]
            x = x[_inverse_cdf(w, u)]
            logw = np.full(M, -np.log(M))
        else:
            logw = _log_weights(w)
    return estimates


def cpf_run(ssm: StateSpaceModel, level: int, M: int, phi, seed: int,
            resample_policy: str = "ess") -> np.ndarray:
    """Two-leg coupled filter; returns per-step fine-minus-coarse differences.

    Both legs share the slot-wise Brownian path; resampling indices come from
    a maximal coupling of the two weight vectors, triggered by the coarse
    leg's ESS.
    """
    if level < 1:
        raise ValueError("coupled filter needs level >= 1")
    if M < 2:
        raise ValueError("M must be >= 2")
    root = NoiseStream(seed, ("cpf", level))
    n_dim = ssm.x0.shape[-1]
    xf = np.broadcast_to(ssm.x0, (M, n_dim)).copy()
    xc = xf.copy()
    logwf = np.full(M, -np.log(M))
    logwc = logwf.copy()
    diffs = np.empty(ssm.n_obs)
    phi_arr = lambda x: np.asarray(phi(x), dtype=float)
    for k, y in enumerate(ssm.observations):
        stream = root.substream("step", k)
        # shared noise: propagate both legs jointly over one observation gap
        pair_f, pair_c = _propagate_pair(ssm, xf, xc, level, stream)
        xf, xc = pair_f, pair_c
        logg_f = np.asarray(ssm.obs_log_density(xf, y), dtype=float)
        logg_c = np.asarray(ssm.obs_log_density(xc, y), dtype=float)
        wf = _log_normalize(logwf + logg_f, f"fine leg, step {k}")
        wc = _log_normalize(logwc + logg_c, f"coarse leg, step {k}")
        diffs[k] = np.sum(wf * phi_arr(xf)) - np.sum(wc * phi_arr(xc))
        if _should_resample(resample_policy, wc):
            u = root.substream("step", k, "res").uniforms(M, 3)
            i1, i2 = maximal_coupling_sample(_floor_pmf(wf), _floor_pmf(wc), u)
            xf, xc = xf[i1], xc[i2]
            logwf = np.full(M, -np.log(M))
            logwc = logwf.copy()
        else:
            logwf, logwc = _log_weights(wf), _log_weights(wc)
    return diffs


def _propagate_pair(ssm, xf, xc, level, stream):
    """Advance fine/coarse legs one observation interval on shared noise."""
    n_coarse = 2 ** (level - 1)
    delta_f = ssm.obs_interval / 2 ** level
    from .noise import build_eta, sample_coarse_step
    from .schemes import weak2_step
    model = ssm.dynamics
    hypo = model.dim_smooth > 0
    d = model.brownian_dim
    m = xf.shape[0]
    for k in range(n_coarse):
        step = sample_coarse_step(stream.substream(k), delta_f, d, hypo, m)
        for half in (step.fine_first, step.fine_second):
            xf = weak2_step(model, xf, half, build_eta(half, delta_f, hypo), delta_f)
        xc = weak2_step(model, xc, step.coarse,
                        build_eta(step.coarse, 2 * delta_f, hypo), 2 * delta_f)
    return xf, xc


def _floor_pmf(w: np.ndarray, floor: float = 1e-300) -> np.ndarray:
    """Keep pmfs strictly positive for the coupling samplers."""
    w = np.maximum(np.asarray(w, dtype=float), floor)
    return w / w.sum()


def _log_weights(w: np.ndarray) -> np.ndarray:
    """log of a normalized weight vector; floors exact zeros to stay finite."""
    return np.log(np.maximum(w, 1e-300))


def acpf_run(ssm: StateSpaceModel, level: int, M: int, phi, seed: int,
             resample_policy: str = "ess", scheme: str = "weak2") -> np.ndarray:
    """Antithetic coupled filter; returns per-step half-sum differences.

    ``scheme='weak2'`` runs the four-leg quad coupling; ``scheme='tm'`` runs
    the truncated-Milstein triple (three legs; the coarse pmf is duplicated in
    the four-way resampling, preserving all marginals).
    """
    if level < 1:
        raise ValueError("coupled filter needs level >= 1")
    if M < 2:
        raise ValueError("M must be >= 2")
    if scheme not in ("weak2", "tm"):
        raise ValueError(f"unknown scheme {scheme!r}")
    antithetic_coarse = scheme == "weak2"
    root = NoiseStream(seed, ("acpf", level, scheme))
    n_dim = ssm.x0.shape[-1]
    n_legs = 4 if antithetic_coarse else 3
    states = [np.broadcast_to(ssm.x0, (M, n_dim)).copy() for _ in range(n_legs)]
    logws = [np.full(M, -np.log(M)) for _ in range(n_legs)]
    diffs = np.empty(ssm.n_obs)
    phi_arr = lambda x: np.asarray(phi(x), dtype=float)
    for k, y in enumerate(ssm.observations):
        stream = root.substream("step", k)
        states = _propagate_legs(ssm, states, level, stream, antithetic_coarse)
        ws = []
        for i, x in enumerate(states):
            logg = np.asarray(ssm.obs_log_density(x, y), dtype=float)
            ws.append(_log_normalize(logws[i] + logg, f"leg {i}, step {k}"))
        ests = [np.sum(w * phi_arr(x)) for w, x in zip(ws, states)]
        if antithetic_coarse:
            diffs[k] = 0.5 * (ests[0] + ests[1]) - 0.5 * (ests[2] + ests[3])
            coarse_ref = ws[2]
        else:
            diffs[k] = 0.5 * (ests[0] + ests[1]) - ests[2]
            coarse_ref = ws[2]
        if _should_resample(resample_policy, coarse_ref):
            u = root.substream("step", k, "res").uniforms(M, 5)
            pmfs = [_floor_pmf(w) for w in ws]
            if not antithetic_coarse:
                pmfs.append(pmfs[2])  # duplicate the coarse pmf (W4 = W3)
            idx = four_way_coupling_sample(*pmfs, uniforms=u)
            states = [x[i] for x, i in zip(states, idx[:n_legs])]
            logws = [np.full(M, -np.log(M)) for _ in range(n_legs)]
        else:
            logws = [_log_weights(w) for w in ws]
    return diffs


def _propagate_legs(ssm, states, level, stream, antithetic_coarse):
    """One observation interval of the antithetic coupling, slot-wise."""
    from .noise import build_eta, sample_coarse_step, swap_fine_halves
    from .schemes import truncated_milstein_step, weak2_step
    model = ssm.dynamics
    hypo = model.dim_smooth > 0
    d = model.brownian_dim
    delta_f = ssm.obs_interval / 2 ** level
    delta_c = 2 * delta_f
    m = states[0].shape[0]
    n_coarse = 2 ** (level - 1)
    states = [s.copy() for s in states]
    for k in range(n_coarse):
        step = sample_coarse_step(stream.substream(k), delta_f, d, hypo, m)
        swapped = swap_fine_halves(step)
        if antithetic_coarse:
            xf, xa, xc, xca = states
            eta_c = build_eta(step.coarse, delta_c, hypo)
            for half in (step.fine_first, step.fine_second):
                xf = weak2_step(model, xf, half, build_eta(half, delta_f, hypo),
                                delta_f, bracket_sign=1.0)
            for half in (swapped.fine_first, swapped.fine_second):
                xa = weak2_step(model, xa, half, build_eta(half, delta_f, hypo),
                                delta_f, bracket_sign=-1.0)
            xc = weak2_step(model, xc, step.coarse, eta_c, delta_c, bracket_sign=1.0)
            xca = weak2_step(model, xca, step.coarse, eta_c, delta_c,
                             bracket_sign=-1.0)
            states = [xf, xa, xc, xca]
        else:
            xf, xa, xc = states
            for half in (step.fine_first, step.fine_second):
                xf = truncated_milstein_step(model, xf, half, delta_f)
            for half in (step.fine_second, step.fine_first):
                xa = truncated_milstein_step(model, xa, half, delta_f)
            xc = truncated_milstein_step(model, xc, step.coarse, delta_c)
            states = [xf, xa, xc]
    return states


def run_mlpf(ssm: StateSpaceModel, epsilon: float, phi, seed: int,
             variant: str = "AMLPF", c: float = 1.0, base_level: int = 0,
             resample_policy: str = "ess",
             plan: LevelPlan | None = None) -> FilterReport:
    """Multilevel particle filter drivers.

    variant: 'MLPF' (two-leg couplings), 'AMLPF' (weak-2 antithetic quads) or
    'AMMLPF' (truncated-Milstein triples).  The level-0 filter is keyed
    independently of the variant, so runs with identical seeds and level plans
    share it exactly.  ``plan`` overrides the formula-driven allocation.
    """
    t0 = time.perf_counter()
    if plan is None:
        if variant == "MLPF":
            plan = allocate_mlpf(epsilon, c, ssm.obs_interval, base_level)
        elif variant in ("AMLPF", "AMMLPF"):
            plan = allocate_amlpf(epsilon, c, ssm.obs_interval, base_level)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    elif variant not in ("MLPF", "AMLPF", "AMMLPF"):
        raise ValueError(f"unknown variant {variant!r}")
    rows = np.zeros((plan.L + 1, ssm.n_obs))
    rows[0] = pf_run(ssm, plan.grid_level(0), plan.M[0], phi, seed,
                     resample_policy)
    for ell in range(1, plan.L + 1):
        lvl = plan.grid_level(ell)
        level_seed = int(NoiseStream(seed, ("mlpf-level", ell)
                                     )._key & 0x7FFFFFFFFFFFFFFF)
        if variant == "MLPF":
            rows[ell] = cpf_run(ssm, lvl, plan.M[ell], phi, level_seed,
                                resample_policy)
        elif variant == "AMLPF":
            rows[ell] = acpf_run(ssm, lvl, plan.M[ell], phi, level_seed,
                                 resample_policy, scheme="weak2")
        else:
            rows[ell] = acpf_run(ssm, lvl, plan.M[ell], phi, level_seed,
                                 resample_policy, scheme="tm")
    return FilterReport(
        estimates=rows.sum(axis=0),
        level_estimates=rows,
        plan=plan,
        analytic_cost=plan.analytic_cost(ssm.obs_interval) * ssm.n_obs,
        wall_time=time.perf_counter() - t0,
    )


def generate_observations(model: DiffusionModel, x0, n_obs: int, emit,
                          seed: int, obs_interval: float = 1.0,
                          level: int = 10):
    """Simulate a latent path at high resolution and emit one observation per
    interval.  ``emit(x, stream)`` maps the state and a keyed stream to y.
    Returns (latent states (n_obs, N), observations array)."""
    root = NoiseStream(seed, ("data",))
    x = np.atleast_1d(np.asarray(x0, dtype=float))[None, :]
    latents, obs = [], []
    for k in range(n_obs):
        x = simulate_path(model, SchemeKind.WEAK2, x, level, obs_interval,
                          root.substream("step", k))
        latents.append(x[0].copy())
        obs.append(np.atleast_1d(emit(x[0], root.substream("emit", k))))
    return np.asarray(latents), np.asarray(obs)


def write_observations_csv(path, observations: np.ndarray,
                           latents: np.ndarray | None = None) -> None:
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    if observations.shape[0] == 1 and observations.shape[1] > 1:
        observations = observations.T
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step"] + [f"y_{i}" for i in range(observations.shape[1])]
        if latents is not None:
            header += [f"x_{i}" for i in range(latents.shape[1])]
        writer.writerow(header)
        for k, row in enumerate(observations):
            fields = [k] + [f"{v:.17g}" for v in row]
            if latents is not None:
                fields += [f"{v:.17g}" for v in latents[k]]
            writer.writerow(fields)


def read_observations_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ycols = [i for i, name in enumerate(header) if name.startswith("y_")]
        rows = [[float(line[i]) for i in ycols] for line in reader]
    return np.asarray(rows)
