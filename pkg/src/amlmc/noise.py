"""Counter-based random variates for coupled coarse/fine/antithetic simulation.

Every random variable is addressed by a key (global seed plus a tuple of
integer/string tags, typically level and step index) and a sample offset, so
the same (seed, tags, sample index) always reproduces the same bits no matter
how work is batched or scheduled.

Stream layout: each key owns an independent Philox stream.  A sample occupies
a fixed stride of uint64 outputs (padded to the 4-word Philox block), which
lets a batch for samples [offset, offset + m) be generated by advancing the
counter, with bit-identical results for any batching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

__all__ = [
    "NoiseStream",
    "HalfStepNoise",
    "CoarseStepNoise",
    "EtaTable",
    "sample_half_step",
    "sample_coarse_step",
    "aggregate_coarse",
    "build_eta",
    "swap_fine_halves",
    "half_step_from_normals",
    "normals_per_half_step",
]

_INV_SQRT12 = 1.0 / np.sqrt(12.0)


def _key128(seed: int, tags: tuple) -> int:
    ints = [seed & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            ints.extend(t.encode("utf-8"))
        else:
            ints.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    state = SeedSequence(tuple(ints)).generate_state(2, np.uint64)
    return int(state[0]) | (int(state[1]) << 64)


class NoiseStream:
    """A keyed, counter-addressable stream of standard normals and uniforms.

    Instances are stateless views: every draw is fully determined by
    (seed, tags, sample offset), so a stream object can be shared freely.
    """

    def __init__(self, seed: int, tags: tuple = ()):
        self.seed = int(seed)
        self.tags = tuple(tags)
        self._key = _key128(self.seed, self.tags)

    def substream(self, *tags) -> "NoiseStream":
        return NoiseStream(self.seed, self.tags + tags)

    def _raw(self, n_samples: int, n_vars: int, sample_offset: int) -> np.ndarray:
        # one Philox block = 4 uint64 outputs; pad the per-sample stride
        stride = 4 * ((n_vars + 3) // 4)
        bg = Philox(key=self._key)
        if sample_offset:
            bg.advance(sample_offset * (stride // 4))
        raw = bg.random_raw(n_samples * stride).reshape(n_samples, stride)
        return raw[:, :n_vars]

    def normals(self, n_samples: int, n_vars: int, sample_offset: int = 0) -> np.ndarray:
        """(n_samples, n_vars) i.i.d. N(0,1) via inverse-CDF (fixed consumption)."""
        raw = self._raw(n_samples, n_vars, sample_offset)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
        return ndtri(u)

    def uniforms(self, n_samples: int, n_vars: int, sample_offset: int = 0) -> np.ndarray:
        raw = self._raw(n_samples, n_vars, sample_offset)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


@dataclass(frozen=True)
class HalfStepNoise:
    """All variates of one integrator step of length ``delta``.

    ``db`` has shape (..., d); ``db_tilde`` (..., d-1) holds the auxiliary
    independent Brownian increments (empty when d = 1); ``time_int`` (..., d)
    holds I_j = int (B_s^j - B_start^j) ds and is None in the elliptic regime.
    """

    delta: float
    db: np.ndarray
    db_tilde: np.ndarray
    time_int: np.ndarray | None = None


@dataclass(frozen=True)
class CoarseStepNoise:
    """Two fine half-steps and their exact coarse aggregate."""

    fine_first: HalfStepNoise
    fine_second: HalfStepNoise
    coarse: HalfStepNoise


def normals_per_half_step(d: int, hypo_elliptic: bool) -> int:
    return d + (d - 1) + (d if hypo_elliptic else 0)


def half_step_from_normals(z: np.ndarray, delta: float, d: int,
                           hypo_elliptic: bool) -> HalfStepNoise:
    """Build a HalfStepNoise from (..., n_vars) standard normals.

    time_int is realised as (delta/2) db + delta^{3/2}/sqrt(12) xi with xi
    independent of db, which gives the exact joint covariance
    [[delta, delta^2/2], [delta^2/2, delta^3/3]] per component.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    z = np.asarray(z, dtype=float)
    sd = np.sqrt(delta)
    db = sd * z[..., :d]
    db_tilde = sd * z[..., d:2 * d - 1]
    time_int = None
    if hypo_elliptic:
        xi = z[..., 2 * d - 1:3 * d - 1]
        time_int = 0.5 * delta * db + delta**1.5 * _INV_SQRT12 * xi
    return HalfStepNoise(delta=float(delta), db=db, db_tilde=db_tilde, time_int=time_int)


def sample_half_step(stream: NoiseStream, delta: float, d: int, hypo_elliptic: bool,
                     n_samples: int = 1, sample_offset: int = 0) -> HalfStepNoise:
    """Draw one batch of half-step variates from a keyed stream."""
    nv = normals_per_half_step(d, hypo_elliptic)
    z = stream.normals(n_samples, nv, sample_offset)
    return half_step_from_normals(z, delta, d, hypo_elliptic)


def aggregate_coarse(first: HalfStepNoise, second: HalfStepNoise,
                     delta_fine: float | None = None) -> HalfStepNoise:
    """Exact coarse-step variates implied by two consecutive fine half-steps."""
    if delta_fine is None:
        delta_fine = first.delta
    time_int = None
    if first.time_int is not None:
        time_int = first.time_int + second.time_int + first.db * delta_fine
    return HalfStepNoise(
        delta=2.0 * delta_fine,
        db=first.db + second.db,
        db_tilde=first.db_tilde + second.db_tilde,
        time_int=time_int,
    )


def sample_coarse_step(stream: NoiseStream, delta_fine: float, d: int, hypo_elliptic: bool,
                       n_samples: int = 1, sample_offset: int = 0) -> CoarseStepNoise:
    """Draw the two fine half-steps of one coarse step and aggregate them.

    Both half-steps live in the same keyed stream (first half in the leading
    variate slots of each sample), so per-sample determinism holds for the
    entire coarse step.
    """
    nv = normals_per_half_step(d, hypo_elliptic)
    z = stream.normals(n_samples, 2 * nv, sample_offset)
    first = half_step_from_normals(z[..., :nv], delta_fine, d, hypo_elliptic)
    second = half_step_from_normals(z[..., nv:], delta_fine, d, hypo_elliptic)
    return CoarseStepNoise(fine_first=first, fine_second=second,
                           coarse=aggregate_coarse(first, second, delta_fine))


def swap_fine_halves(step: CoarseStepNoise) -> CoarseStepNoise:
    """Exchange the two fine half-steps (an involution); re-aggregate the coarse view."""
    return CoarseStepNoise(
        fine_first=step.fine_second,
        fine_second=step.fine_first,
        coarse=aggregate_coarse(step.fine_second, step.fine_first),
    )


@dataclass(frozen=True)
class EtaTable:
    """Second-order variates of one step.

    ``eta`` has shape (..., d+1, d+1) indexed by (j1, j2) with the convention
    dB^0 = delta; ``a_tilde`` has the same shape with entries
    dB^{j1} * dBtilde^{j2} stored at 1 <= j1 < j2 <= d and zero elsewhere.
    """

    eta: np.ndarray
    a_tilde: np.ndarray


def build_eta(noise: HalfStepNoise, delta: float | None = None,
              hypo_elliptic: bool | None = None) -> EtaTable:
    """Assemble the eta / a-tilde tables for one step from its variates."""
    if delta is None:
        delta = noise.delta
    if hypo_elliptic is None:
        hypo_elliptic = noise.time_int is not None
    db = np.asarray(noise.db, dtype=float)
    d = db.shape[-1]
    base = db.shape[:-1]
    # extended increments with dB^0 = delta
    dbe = np.concatenate([np.full(base + (1,), delta), db], axis=-1)
    eta = 0.5 * (dbe[..., :, None] * dbe[..., None, :])
    idx = np.arange(1, d + 1)
    eta[..., idx, idx] -= 0.5 * delta
    if hypo_elliptic:
        if noise.time_int is None:
            raise ValueError("hypo-elliptic eta table requires time integrals")
        ti = np.asarray(noise.time_int, dtype=float)
        eta[..., 0, 1:] = delta * db - ti
        eta[..., 1:, 0] = ti
    a_tilde = np.zeros(base + (d + 1, d + 1))
    if d >= 2:
        dbt = np.asarray(noise.db_tilde, dtype=float)
        for j1 in range(1, d):
            for j2 in range(j1 + 1, d + 1):
                a_tilde[..., j1, j2] = db[..., j1 - 1] * dbt[..., j2 - 2]
    return EtaTable(eta=eta, a_tilde=a_tilde)
