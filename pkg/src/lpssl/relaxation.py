"""Continuous relaxations of discrete labels for fitting the flow.

Class labels are 0-based indices throughout the package.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

# random-search grids; the dataclass defaults are the values actually used
ALPHA_HOT_GRID = (60, 80, 100, 120, 140, 160)
ALPHA_COLD_GRID = (1.1, 1.5, 2.0)
BETA_ALPHA_GRID = (20, 40, 60, 80, 100, 120, 140)
BETA_BETA_GRID = (1.01, 1.1, 1.5)
GAUSSIAN_VAR_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)


@dataclass
class RelaxConfig:
    kind: str = "dirichlet"  # dirichlet | beta | gaussian
    alpha_hot: float = 120.0
    alpha_cold: float = 1.1
    beta_alpha: float = 120.0
    beta_beta: float = 1.1
    gaussian_var: float = 0.005
    jitter: float = 1e-3  # std of isotropic noise added to Dirichlet samples

    def __post_init__(self):
        if self.kind not in ("dirichlet", "beta", "gaussian"):
            raise ValueError(f"unknown relaxation kind {self.kind!r}")
        for name in ("alpha_hot", "alpha_cold", "beta_alpha", "beta_beta", "gaussian_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_gamma(alpha, rng: np.random.Generator) -> np.ndarray:
    """Gamma(alpha, 1) draws by Marsaglia-Tsang squeeze rejection.

    Shapes below 1 are boosted: G(a) = G(a + 1) * U**(1/a).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("gamma shape must be positive")
    flat = alpha.reshape(-1)
    small = flat < 1.0
    a = np.where(small, flat + 1.0, flat)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    pending = np.arange(len(a))
    while len(pending):
        x = rng.standard_normal(len(pending))
        u = rng.random(len(pending))
        dp, cp = d[pending], c[pending]
        v = (1.0 + cp * x) ** 3
        ok = v > 0
        vs = np.where(ok, v, 1.0)
        accept = ok & ((u < 1.0 - 0.0331 * x ** 4)
                       | (np.log(u) < 0.5 * x * x + dp * (1.0 - vs + np.log(vs))))
        out[pending[accept]] = dp[accept] * vs[accept]
        pending = pending[~accept]
    if np.any(small):
        u = rng.random(int(small.sum()))
        out[small] *= u ** (1.0 / flat[small])
    return out.reshape(alpha.shape)


def sample_dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    """Rows of Dir(alpha); ``alpha`` is (N, K) or (K,)."""
    g = sample_gamma(alpha, rng)
    return g / g.sum(axis=-1, keepdims=True)


def sample_beta(a, b, rng: np.random.Generator) -> np.ndarray:
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    ga = sample_gamma(a, rng)
    gb = sample_gamma(b, rng)
    return ga / (ga + gb)


def dirichlet_concentration(labels, k: int, cfg: RelaxConfig) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"class index out of range [0, {k})")
    alpha = np.full((len(labels), k), cfg.alpha_cold)
    alpha[np.arange(len(labels)), labels] = cfg.alpha_hot
    return alpha


def dirichlet_relax(labels, k: int, cfg: RelaxConfig, rng: np.random.Generator,
                    jitter: bool = True) -> np.ndarray:
    """Relax class indices to points near the simplex vertices, shape (N, K)."""
    theta = sample_dirichlet(dirichlet_concentration(labels, k, cfg), rng)
    if jitter and cfg.jitter > 0:
        theta = theta + cfg.jitter * rng.standard_normal(theta.shape)
    return theta


def beta_relax(y, cfg: RelaxConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-bit Beta(a, b) draws for y=1 and Beta(b, a) for y=0."""
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("beta_relax: labels must be binary")
    on = y == 1
    a = np.where(on, cfg.beta_alpha, cfg.beta_beta)
    b = np.where(on, cfg.beta_beta, cfg.beta_alpha)
    return sample_beta(a, b, rng)


def gaussian_relax(y, cfg: RelaxConfig, rng: np.random.Generator) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.sqrt(cfg.gaussian_var) * rng.standard_normal(y.shape)


def relax(y, task: str, n_outputs: int, cfg: RelaxConfig, rng: np.random.Generator) -> np.ndarray:
    """Relax a batch of labels for the given task into flow-space points."""
    if task == "classification":
        if cfg.kind == "dirichlet":
            return dirichlet_relax(y, n_outputs, cfg, rng)
        if cfg.kind == "gaussian":
            return gaussian_relax(np.eye(n_outputs)[np.asarray(y, dtype=int)], cfg, rng)
        raise ValueError("classification labels relax with 'dirichlet' or 'gaussian'")
    if task == "attributes":
        if cfg.kind == "beta":
            return beta_relax(y, cfg, rng)
        if cfg.kind == "gaussian":
            return gaussian_relax(y, cfg, rng)
        raise ValueError("attribute labels relax with 'beta' or 'gaussian'")
    raise ValueError(f"unknown task {task!r}")
