"""Bundled diffusion models.

* FitzHugh-Nagumo: hypo-elliptic neuron model, noise only on the recovery
  coordinate (d = 1, N_S = 1).
* Heston: elliptic stochastic-volatility model, non-commutative (d = 2); the
  variance coordinate is fully truncated (max(v, 0) under every square root).
* Linear Ornstein-Uhlenbeck: dX = AX dt + S dB with analytic mean/covariance
  and an exact Gaussian transition sampler, used as a convergence oracle.
* 2-D geometric Brownian motion with diagonal noise: commutative test model.

All models carry analytic Lie-derivative tables so integrators never fall back
to finite differences on the hot path.  ``noise_scale`` multiplies every
diffusion column (the analytic tables are scaled consistently).
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.linalg import cholesky, expm

from .model_core import DiffusionModel, ModelError

__all__ = [
    "FhnParams",
    "HestonParams",
    "OuOracle",
    "ModelSetup",
    "build_fhn",
    "build_heston",
    "build_linear_ou",
    "build_gbm_2d",
    "load_param_file",
    "bundled_params",
    "make_model",
    "MODEL_NAMES",
]

_U_FLOOR = 1e-8  # guards 1/sqrt(v) terms at the truncation boundary


def load_param_file(path_or_text) -> dict:
    """Parse a flat ``key = value`` parameter file into a {str: float} dict."""
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = float(value.strip())
    return out


def bundled_params(name: str) -> dict:
    """Parameters shipped with the package ('fhn' or 'heston')."""
    ref = resources.files("amlmc").joinpath(f"configs/{name}.cfg")
    return load_param_file(ref.open())


@dataclass(frozen=True)
class FhnParams:
    epsilon: float = 0.1
    sigma: float = 0.3
    gamma: float = 1.5
    beta: float = 0.3
    s: float = 0.01
    x0: tuple = (0.0, 0.0)
    T: float = 100.0

    def __post_init__(self):
        if self.epsilon <= 0 or self.sigma <= 0:
            raise ModelError("FHN requires epsilon > 0 and sigma > 0")

    @classmethod
    def from_mapping(cls, m: dict) -> "FhnParams":
        return cls(epsilon=m.get("epsilon", 0.1), sigma=m.get("sigma", 0.3),
                   gamma=m.get("gamma", 1.5), beta=m.get("beta", 0.3),
                   s=m.get("s", 0.01),
                   x0=(m.get("x0_1", 0.0), m.get("x0_2", 0.0)),
                   T=m.get("T", 100.0))


@dataclass(frozen=True)
class HestonParams:
    s0: float = 100.0
    v0: float = 0.09
    r: float = 0.04
    alpha: float = 2.0
    theta: float = 0.09
    mu: float = 0.1
    rho: float = 0.7
    T: float = 1.0

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ModelError("Heston requires |rho| < 1")
        if self.mu <= 0 or self.v0 < 0:
            raise ModelError("Heston requires mu > 0 and v0 >= 0")

    @classmethod
    def from_mapping(cls, m: dict) -> "HestonParams":
        kwargs = {k: m[k] for k in ("s0", "v0", "r", "alpha", "theta", "mu", "rho", "T")
                  if k in m}
        return cls(**kwargs)


def build_fhn(params: FhnParams | None = None, noise_scale: float = 1.0) -> DiffusionModel:
    """Hypo-elliptic FitzHugh-Nagumo: noise enters only the second coordinate."""
    p = params or FhnParams()
    eps, sig, gam, bet, s = p.epsilon, p.sigma, p.gamma, p.beta, p.s
    nu = float(noise_scale)

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([(x1 - x1 * x1 * x1 - x2 - s) / eps,
                         gam * x1 - x2 + bet], axis=-1)

    def col1(x):
        out = np.zeros_like(np.asarray(x, dtype=float))
        out[..., 1] = nu * sig
        return out

    def lie1_drift(x):
        out = np.empty_like(np.asarray(x, dtype=float))
        out[..., 0] = -nu * sig / eps
        out[..., 1] = -nu * sig
        return out

    def lie0_drift(x):
        x1 = x[..., 0]
        b = drift(x)
        return np.stack([
            (b[..., 0] * (1.0 - 3.0 * x1 * x1) - b[..., 1]) / eps,
            gam * b[..., 0] - b[..., 1],
        ], axis=-1)

    lie_table = {
        (0, 0): lie0_drift,
        (1, 0): lie1_drift,
        (0, 1): None,   # constant diffusion column
        (1, 1): None,
    }
    return DiffusionModel(name="fhn", dim_total=2, dim_smooth=1, brownian_dim=1,
                          drift=drift, diffusion_columns=(col1,),
                          lie_table=lie_table, commutative=True, noise_scale=nu)


def build_heston(params: HestonParams | None = None, noise_scale: float = 1.0) -> DiffusionModel:
    """Elliptic Heston model with full truncation of the variance coordinate."""
    p = params or HestonParams()
    r, alpha, theta, mu, rho = p.r, p.alpha, p.theta, p.mu, p.rho
    nu = float(noise_scale)
    pp = mu * rho                        # dB^1 loading of the variance
    cc = mu * np.sqrt(1.0 - rho * rho)   # dB^2 loading of the variance
    mu2 = mu * mu

    def _u(x):
        return np.sqrt(np.maximum(x[..., 1], 0.0))

    def _uinv(x):
        return 1.0 / np.maximum(_u(x), _U_FLOOR)

    def drift(x):
        return np.stack([r * x[..., 0], alpha * (theta - x[..., 1])], axis=-1)

    def col1(x):
        u = _u(x)
        return np.stack([nu * u * x[..., 0], nu * pp * u], axis=-1)

    def col2(x):
        return np.stack([np.zeros_like(x[..., 0]), nu * cc * _u(x)], axis=-1)

    def lie11(x):
        u2 = np.maximum(x[..., 1], 0.0)
        S = x[..., 0]
        return nu * nu * np.stack([u2 * S + 0.5 * pp * S,
                                   np.full_like(S, 0.5 * pp * pp)], axis=-1)

    def lie12(x):
        S = x[..., 0]
        return nu * nu * np.stack([np.zeros_like(S),
                                   np.full_like(S, 0.5 * cc * pp)], axis=-1)

    def lie21(x):
        S = x[..., 0]
        return nu * nu * np.stack([0.5 * cc * S,
                                   np.full_like(S, 0.5 * cc * pp)], axis=-1)

    def lie22(x):
        S = x[..., 0]
        return nu * nu * np.stack([np.zeros_like(S),
                                   np.full_like(S, 0.5 * cc * cc)], axis=-1)

    def lie1_drift(x):
        u = _u(x)
        return nu * np.stack([r * u * x[..., 0], -alpha * pp * u], axis=-1)

    def lie2_drift(x):
        return nu * np.stack([np.zeros_like(x[..., 0]), -alpha * cc * _u(x)], axis=-1)

    def lie0_col1(x):
        S, v = x[..., 0], x[..., 1]
        u, uinv = _u(x), _uinv(x)
        first1 = r * u * S + 0.5 * alpha * (theta - v) * S * uinv
        first2 = 0.5 * alpha * (theta - v) * pp * uinv
        second1 = 0.5 * pp * u * S - 0.125 * mu2 * S * uinv
        second2 = -0.125 * mu2 * pp * uinv
        return np.stack([nu * first1 + nu**3 * second1,
                         nu * first2 + nu**3 * second2], axis=-1)

    def lie0_col2(x):
        v = x[..., 1]
        uinv = _uinv(x)
        first = 0.5 * alpha * (theta - v) * cc * uinv
        second = -0.125 * mu2 * cc * uinv
        return np.stack([np.zeros_like(v), nu * first + nu**3 * second], axis=-1)

    def lie0_drift(x):
        return np.stack([r * r * x[..., 0], -alpha * alpha * (theta - x[..., 1])],
                        axis=-1)

    lie_table = {
        (0, 0): lie0_drift,
        (1, 0): lie1_drift, (2, 0): lie2_drift,
        (0, 1): lie0_col1, (0, 2): lie0_col2,
        (1, 1): lie11, (1, 2): lie12,
        (2, 1): lie21, (2, 2): lie22,
    }
    return DiffusionModel(name="heston", dim_total=2, dim_smooth=0, brownian_dim=2,
                          drift=drift, diffusion_columns=(col1, col2),
                          lie_table=lie_table, commutative=False, noise_scale=nu)


@dataclass(frozen=True)
class OuOracle:
    """Analytic law of dX = AX dt + S dB: means, covariances, exact transitions."""

    A: np.ndarray
    S: np.ndarray

    def mean(self, x0: np.ndarray, T: float) -> np.ndarray:
        return np.asarray(x0, dtype=float) @ expm(self.A * T).T

    def transition_moments(self, delta: float):
        """(F, Q): X_{t+delta} | X_t = x is N(F x, Q), computed by matrix exponential."""
        n = self.A.shape[0]
        block = np.zeros((2 * n, 2 * n))
        block[:n, :n] = -self.A
        block[:n, n:] = self.S @ self.S.T
        block[n:, n:] = self.A.T
        e = expm(block * delta)
        F = e[n:, n:].T
        Q = F @ e[:n, n:]
        return F, 0.5 * (Q + Q.T)

    def covariance(self, T: float) -> np.ndarray:
        return self.transition_moments(T)[1]

    def sample_transition(self, x: np.ndarray, delta: float, z: np.ndarray) -> np.ndarray:
        """Exact one-step transition driven by standard normals z of shape (..., N)."""
        F, Q = self.transition_moments(delta)
        L = cholesky(Q + 1e-15 * np.eye(Q.shape[0]), lower=True)
        return np.asarray(x, dtype=float) @ F.T + np.asarray(z, dtype=float) @ L.T


def build_linear_ou(A: np.ndarray, S: np.ndarray, noise_scale: float = 1.0) -> DiffusionModel:
    """Linear SDE dX = AX dt + S dB with the analytic oracle attached as ``.oracle``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if A.shape[0] != A.shape[1] or S.shape[0] != A.shape[0]:
        raise ModelError("dimension mismatch between A and S")
    nu = float(noise_scale)
    Ssc = nu * S
    n, d = S.shape

    def drift(x):
        return np.asarray(x, dtype=float) @ A.T

    def make_col(j):
        col = Ssc[:, j]

        def colfn(x):
            return np.broadcast_to(col, np.asarray(x).shape).copy()
        return colfn

    def lie0_drift(x):
        return np.asarray(x, dtype=float) @ (A @ A).T

    def make_lie_j_drift(j):
        vec = A @ Ssc[:, j]

        def liefn(x):
            return np.broadcast_to(vec, np.asarray(x).shape).copy()
        return liefn

    lie_table = {(0, 0): lie0_drift}
    for j in range(1, d + 1):
        lie_table[(j, 0)] = make_lie_j_drift(j - 1)
        lie_table[(0, j)] = None
        for j2 in range(1, d + 1):
            lie_table[(j, j2)] = None
    model = DiffusionModel(name="linear-ou", dim_total=n, dim_smooth=0,
                           brownian_dim=d, drift=drift,
                           diffusion_columns=tuple(make_col(j) for j in range(d)),
                           lie_table=lie_table, commutative=True, noise_scale=nu)
    object.__setattr__(model, "oracle", OuOracle(A=A, S=Ssc))
    return model


def build_gbm_2d(r=(0.05, 0.03), m=(0.2, 0.3), noise_scale: float = 1.0) -> DiffusionModel:
    """2-D geometric Brownian motion with diagonal noise (commutative)."""
    r = np.asarray(r, dtype=float)
    m = float(noise_scale) * np.asarray(m, dtype=float)
    if r.shape != (2,) or m.shape != (2,):
        raise ModelError("gbm-2d takes two rates and two volatilities")

    def drift(x):
        return r * np.asarray(x, dtype=float)

    def make_col(j):
        def colfn(x):
            out = np.zeros_like(np.asarray(x, dtype=float))
            out[..., j] = m[j] * x[..., j]
            return out
        return colfn

    def make_diag_entry(j, factor):
        def entry(x):
            out = np.zeros_like(np.asarray(x, dtype=float))
            out[..., j] = factor * x[..., j]
            return out
        return entry

    def lie0_drift(x):
        return r * r * np.asarray(x, dtype=float)

    lie_table = {(0, 0): lie0_drift}
    for j in (1, 2):
        i = j - 1
        lie_table[(j, j)] = make_diag_entry(i, m[i] ** 2)
        lie_table[(j, 0)] = make_diag_entry(i, m[i] * r[i])
        lie_table[(0, j)] = make_diag_entry(i, r[i] * m[i])
        other = 2 if j == 1 else 1
        lie_table[(j, other)] = None
    return DiffusionModel(name="gbm-2d", dim_total=2, dim_smooth=0, brownian_dim=2,
                          drift=drift, diffusion_columns=(make_col(0), make_col(1)),
                          lie_table=lie_table, commutative=True,
                          noise_scale=float(noise_scale))


@dataclass(frozen=True)
class ModelSetup:
    """A registered model together with its default start state and horizon."""

    model: DiffusionModel
    x0: np.ndarray
    T: float


def make_model(name: str, overrides: dict | None = None,
               noise_scale: float = 1.0) -> ModelSetup:
    """Build a registered model ('fhn', 'heston', 'linear-ou', 'gbm-2d')."""
    overrides = dict(overrides or {})
    if name == "fhn":
        params = dict(bundled_params("fhn"))
        params.update(overrides)
        p = FhnParams.from_mapping(params)
        return ModelSetup(build_fhn(p, noise_scale), np.asarray(p.x0), p.T)
    if name == "heston":
        params = dict(bundled_params("heston"))
        params.update(overrides)
        p = HestonParams.from_mapping(params)
        return ModelSetup(build_heston(p, noise_scale), np.array([p.s0, p.v0]), p.T)
    if name == "linear-ou":
        a = overrides.get("a", -1.0)
        s = overrides.get("s", 0.5)
        x0 = overrides.get("x0", 1.0)
        T = overrides.get("T", 1.0)
        model = build_linear_ou([[a]], [[s]], noise_scale)
        return ModelSetup(model, np.atleast_1d(np.asarray(x0, dtype=float)), T)
    if name == "gbm-2d":
        model = build_gbm_2d(noise_scale=noise_scale)
        return ModelSetup(model, np.array([1.0, 1.0]), overrides.get("T", 1.0))
    raise ModelError(f"unknown model {name!r}; choose from {sorted(MODEL_NAMES)}")


MODEL_NAMES = ("fhn", "heston", "linear-ou", "gbm-2d")
