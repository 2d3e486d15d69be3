"""SDE model abstraction with a smooth/rough coordinate partition.

Models are systems of the form

    dX_t = b(X_t) dt + sum_j s_j(X_t) dB_t^j,

where the first ``dim_smooth`` coordinates carry no noise (every diffusion
column vanishes there).  All coefficient callables are vectorised: they map
arrays of shape (..., N) to arrays of shape (..., N).

The module also provides the first/second-order directional operators used
by the integrators: ``L_i f = s_i . grad f`` for i >= 1 and

    L_0 f = b . grad f + (1/2) sum_j s_j s_j : grad^2 f,

together with the commutator ``[s_i, s_j] = L_i s_j - L_j s_i``.  Models may
supply analytic tables for these; a central finite-difference fallback is
used otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

VectorField = Callable[[np.ndarray], np.ndarray]

# Central-difference steps. First derivatives use cbrt(eps), second
# derivatives eps**(1/4); both scaled by (1 + |x|).
_H1 = float(np.cbrt(np.finfo(float).eps))
_H2 = float(np.finfo(float).eps ** 0.25)


class Regime(enum.Enum):
    ELLIPTIC = "elliptic"
    HYPO_ELLIPTIC = "hypo-elliptic"


class ModelError(ValueError):
    """Invalid model definition or coefficient query."""


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    return x, squeeze


def directional_derivative(f: VectorField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Central-difference derivative of f at x along the vector field value v."""
    x, squeeze = _as_batch(x)
    v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
    scale = 1.0 + np.max(np.abs(x), axis=-1, keepdims=True)
    vnorm = np.max(np.abs(v), axis=-1, keepdims=True)
    h = _H1 * scale / np.maximum(vnorm, 1e-300)
    out = (f(x + h * v) - f(x - h * v)) / (2.0 * h)
    return out[0] if squeeze else out


def second_directional_derivative(f: VectorField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Central-difference second derivative of f at x along v (f'' contracted with v x v)."""
    x, squeeze = _as_batch(x)
    v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
    scale = 1.0 + np.max(np.abs(x), axis=-1, keepdims=True)
    vnorm = np.max(np.abs(v), axis=-1, keepdims=True)
    h = _H2 * scale / np.maximum(vnorm, 1e-300)
    out = (f(x + h * v) - 2.0 * f(x) + f(x - h * v)) / (h * h)
    return out[0] if squeeze else out


@dataclass
class TestFunction:
    """Deterministic payoff with an evaluation counter for cost accounting."""

    __test__ = False  # not a pytest class, despite the name

    phi: Callable[[np.ndarray], np.ndarray]
    name: str = "phi"
    eval_count: int = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.eval_count += x.shape[0] if x.ndim > 1 else 1
        return self.phi(x)


@dataclass(frozen=True)
class DiffusionModel:
    """Immutable SDE model; coefficient callables must be pure and vectorised.

    ``lie_table`` maps (j1, j2) with 0 <= j1, j2 <= d to the analytic
    L_{j1} s_{j2} (s_0 = drift), or to None when the entry vanishes
    identically.  Missing entries fall back to finite differences.
    """

    name: str
    dim_total: int
    dim_smooth: int
    brownian_dim: int
    drift: VectorField
    diffusion_columns: tuple[VectorField, ...]
    lie_table: Mapping[tuple[int, int], VectorField | None] = field(default_factory=dict)
    commutative: bool = False
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.dim_total <= 0 or self.dim_smooth < 0:
            raise ModelError("dimensions must satisfy N > 0, N_S >= 0")
        if self.dim_smooth >= self.dim_total:
            raise ModelError("rough block must be non-empty (N_R >= 1)")
        if self.brownian_dim <= 0:
            raise ModelError("brownian_dim must be positive")
        if len(self.diffusion_columns) != self.brownian_dim:
            raise ModelError("need exactly d diffusion columns")
        if not 0.0 < self.noise_scale <= 1.0:
            raise ModelError("noise_scale must lie in (0, 1]")

    @property
    def dim_rough(self) -> int:
        return self.dim_total - self.dim_smooth

    @property
    def regime(self) -> Regime:
        return Regime.ELLIPTIC if self.dim_smooth == 0 else Regime.HYPO_ELLIPTIC

    def sigma(self, j: int, x: np.ndarray) -> np.ndarray:
        """Coefficient vector field; j = 0 is the drift, j = 1..d a diffusion column."""
        if j == 0:
            return self.drift(np.asarray(x, dtype=float))
        if not 1 <= j <= self.brownian_dim:
            raise ModelError(f"column index {j} out of range 1..{self.brownian_dim}")
        return self.diffusion_columns[j - 1](np.asarray(x, dtype=float))

    def diffusion_col(self, j: int) -> VectorField:
        if not 1 <= j <= self.brownian_dim:
            raise ModelError(f"column index {j} out of range 1..{self.brownian_dim}")
        return self.diffusion_columns[j - 1]

    # -- directional operators -------------------------------------------------

    def lie_of(self, i: int, target: VectorField, x: np.ndarray) -> np.ndarray:
        """L_i target (x): first-order derivative of target along column i >= 1."""
        if not 1 <= i <= self.brownian_dim:
            raise ModelError(f"lie index {i} out of range 1..{self.brownian_dim}")
        return directional_derivative(target, x, self.sigma(i, x))

    def lie0_of(self, target: VectorField, x: np.ndarray) -> np.ndarray:
        """Generator applied componentwise: drift derivative plus half second-order sum."""
        x = np.asarray(x, dtype=float)
        out = directional_derivative(target, x, self.drift(x))
        for j in range(1, self.brownian_dim + 1):
            out = out + 0.5 * second_directional_derivative(target, x, self.sigma(j, x))
        return out

    def lie(self, j1: int, j2: int, x: np.ndarray) -> np.ndarray:
        """L_{j1} s_{j2}(x), using the analytic table when available."""
        if not (0 <= j1 <= self.brownian_dim and 0 <= j2 <= self.brownian_dim):
            raise ModelError("lie indices out of range")
        entry = self.lie_table.get((j1, j2), _MISSING)
        if entry is None:
            x = np.asarray(x, dtype=float)
            return np.zeros_like(x)
        if entry is not _MISSING:
            return entry(np.asarray(x, dtype=float))
        target = (lambda y: self.drift(y)) if j2 == 0 else self.diffusion_columns[j2 - 1]
        if j1 == 0:
            return self.lie0_of(target, x)
        return self.lie_of(j1, target, x)

    def lie_is_zero(self, j1: int, j2: int) -> bool:
        return self.lie_table.get((j1, j2), _MISSING) is None


_MISSING = object()


def commutator(model: DiffusionModel, j1: int, j2: int, x: np.ndarray) -> np.ndarray:
    """[s_{j1}, s_{j2}](x) = L_{j1} s_{j2}(x) - L_{j2} s_{j1}(x), 1 <= j1, j2 <= d."""
    d = model.brownian_dim
    if not (1 <= j1 <= d and 1 <= j2 <= d):
        raise ModelError("commutator indices must lie in 1..d")
    if not np.all(np.isfinite(x)):
        raise ModelError("commutator requires a finite state")
    if j1 == j2:
        return np.zeros_like(np.asarray(x, dtype=float))
    return model.lie(j1, j2, x) - model.lie(j2, j1, x)


def lie_drift_drift(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    """L_0 s_0(x), the second-order drift correction used by every scheme."""
    if not np.all(np.isfinite(x)):
        raise ModelError("lie_drift_drift requires a finite state")
    return model.lie(0, 0, x)
