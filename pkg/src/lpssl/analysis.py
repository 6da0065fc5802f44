"""Inspection of a trained flow prior.

Compares the flow's density with the analytic mixture of per-class
Dirichlets along straight segments of the simplex, and probes the latent
space (spherical interpolation, radial scaling, typical-set norms).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .flow import LOG_2PI, FlowModel
from .nn.tensor import no_grad
from .relaxation import RelaxConfig, dirichlet_concentration, sample_dirichlet

SIMPLEX_TOL = 1e-6


def _log_dirichlet(theta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_t = np.log(theta)
    terms = np.where(alpha - 1.0 == 0.0, 0.0, (alpha - 1.0) * log_t)
    return gammaln(alpha.sum(-1)) - gammaln(alpha).sum(-1) + terms.sum(-1)


def _project_simplex(theta: np.ndarray, tol: float) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    excess = theta.sum(axis=1) - 1.0
    if np.any(np.abs(excess) > tol) or np.any(theta < -tol):
        raise ValueError("analytic_mixture_logpdf: point is off the simplex")
    theta = np.clip(theta, 0.0, None)
    return theta / theta.sum(axis=1, keepdims=True)


def analytic_mixture_logpdf(theta, K: int, alpha_hot: float = 120.0,
                            alpha_cold: float = 1.1) -> np.ndarray:
    """log of (1/K) sum_k Dir(theta; alpha^(k)) for simplex points, shape (N,).

    The density is with respect to Lebesgue measure on the first K-1
    coordinates.  Points within ``SIMPLEX_TOL`` of the simplex are projected
    back onto it.
    """
    theta = _project_simplex(theta, SIMPLEX_TOL)
    if theta.shape[1] != K:
        raise ValueError(f"expected {K} coordinates, got {theta.shape[1]}")
    cfg = RelaxConfig(alpha_hot=alpha_hot, alpha_cold=alpha_cold)
    comps = np.stack([_log_dirichlet(theta, dirichlet_concentration([k], K, cfg))
                      for k in range(K)], axis=1)
    return logsumexp(comps, axis=1) - np.log(K)


class DirichletMixture:
    """The analytic label prior lifted to R^K.

    Samples are mixture draws on the simplex plus Gaussian noise of std
    ``jitter`` along the simplex normal, so the density factorises exactly
    into the in-plane mixture density and a 1-d normal density.
    """

    def __init__(self, K: int, alpha_hot: float = 120.0, alpha_cold: float = 1.1,
                 jitter: float = 1e-3):
        self.K, self.dim = K, K
        self.alpha_hot, self.alpha_cold, self.jitter = alpha_hot, alpha_cold, jitter

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cfg = RelaxConfig(alpha_hot=self.alpha_hot, alpha_cold=self.alpha_cold)
        labels = rng.integers(0, self.K, size=n)
        theta = sample_dirichlet(dirichlet_concentration(labels, self.K, cfg), rng)
        s = self.jitter * rng.standard_normal(n)
        return theta + s[:, None] / np.sqrt(self.K)

    def log_prob(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        excess = theta.sum(axis=1) - 1.0
        on_plane = theta - excess[:, None] / self.K
        s = excess / np.sqrt(self.K)
        in_plane = analytic_mixture_logpdf(on_plane, self.K, self.alpha_hot, self.alpha_cold)
        normal = -0.5 * (s / self.jitter) ** 2 - np.log(self.jitter) - 0.5 * LOG_2PI
        return in_plane - 0.5 * np.log(self.K) + normal


def flow_log_prob(flow, theta) -> np.ndarray:
    """Log-density as a plain array for a FlowModel or any object with ``log_prob``."""
    if isinstance(flow, FlowModel):
        with no_grad():
            return flow.log_prob(np.atleast_2d(theta)).data
    return np.asarray(flow.log_prob(theta))


def class_vertex(k: int, K: int, alpha_hot: float = 120.0, alpha_cold: float = 1.1) -> np.ndarray:
    """The mean of class k's Dirichlet: a vertex pulled just inside the simplex.

    Exact vertices have zero analytic density whenever the cold concentration
    exceeds 1, so slices run between these interior points instead.
    """
    v = np.full(K, alpha_cold)
    v[k] = alpha_hot
    return v / v.sum()


@dataclass
class DensitySlice:
    t: np.ndarray
    points: np.ndarray
    logp_flow: np.ndarray
    logp_analytic: np.ndarray
    theta_a: np.ndarray
    theta_b: np.ndarray

    def correlation(self) -> float:
        return float(np.corrcoef(self.logp_flow, self.logp_analytic)[0, 1])

    def to_csv(self, path) -> None:
        _write_rows(path, ("t", "logp_flow", "logp_analytic"),
                    zip(self.t, self.logp_flow, self.logp_analytic))


def slice_density(flow, theta_a, theta_b, n_points: int = 101, alpha_hot: float = 120.0,
                  alpha_cold: float = 1.1) -> DensitySlice:
    """Flow and analytic log-densities at (1-t) theta_a + t theta_b for t in [0, 1]."""
    theta_a = np.asarray(theta_a, dtype=np.float64)
    theta_b = np.asarray(theta_b, dtype=np.float64)
    if n_points < 2:
        raise ValueError("slice needs at least two points")
    t = np.linspace(0.0, 1.0, n_points)
    pts = (1.0 - t)[:, None] * theta_a + t[:, None] * theta_b
    logp_flow = flow_log_prob(flow, pts)
    logp_an = analytic_mixture_logpdf(pts, len(theta_a), alpha_hot, alpha_cold)
    return DensitySlice(t, pts, logp_flow, logp_an, theta_a, theta_b)


@dataclass
class LatentProbe:
    kind: str  # interpolate | scale
    params: np.ndarray  # interpolation t, or scale factors c
    latents: np.ndarray
    samples: np.ndarray
    norm_z: np.ndarray
    logp_base: np.ndarray
    linear_fallback: bool = False
    typical_radius: float = 0.0

    def to_csv(self, path) -> None:
        _write_rows(path, ("c" if self.kind == "scale" else "t", "norm_z", "logp_base"),
                    zip(self.params, self.norm_z, self.logp_base))


def _base_logp(z: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * LOG_2PI


def _encode(flow: FlowModel, theta) -> np.ndarray:
    with no_grad():
        return flow.forward(np.atleast_2d(theta))[0].data[0]


def latent_interpolate(flow: FlowModel, theta1, theta2, n: int = 11) -> LatentProbe:
    """Decode n latents spaced between g(theta1) and g(theta2).

    Directions are slerped and norms interpolated linearly, so every latent
    norm lies between the two endpoint norms.  Zero-norm or (anti)parallel
    anchors fall back to straight-line interpolation, flagged on the probe.
    """
    if n < 2:
        raise ValueError("latent_interpolate: n must be >= 2")
    z1, z2 = _encode(flow, theta1), _encode(flow, theta2)
    t = np.linspace(0.0, 1.0, n)
    r1, r2 = np.linalg.norm(z1), np.linalg.norm(z2)
    fallback = r1 < 1e-12 or r2 < 1e-12
    if not fallback:
        u1, u2 = z1 / r1, z2 / r2
        # half-angle form stays accurate for nearly (anti)parallel directions
        omega = 2.0 * np.arctan2(np.linalg.norm(u1 - u2), np.linalg.norm(u1 + u2))
        fallback = np.sin(omega) < 1e-9
    if fallback:
        zs = (1.0 - t)[:, None] * z1 + t[:, None] * z2
    else:
        dirs = (np.sin((1.0 - t) * omega)[:, None] * u1
                + np.sin(t * omega)[:, None] * u2) / np.sin(omega)
        zs = ((1.0 - t) * r1 + t * r2)[:, None] * dirs
    zs[0], zs[-1] = z1, z2
    samples = flow.inverse(zs)
    return LatentProbe("interpolate", t, zs, samples, np.linalg.norm(zs, axis=1),
                       _base_logp(zs), bool(fallback), float(np.sqrt(flow.dim)))


def latent_scale(flow: FlowModel, theta, c_grid=None) -> LatentProbe:
    """Decode z * c for z = g(theta), moving from the mode out through the typical set."""
    c = np.linspace(0.0, 3.0, 31) if c_grid is None else np.asarray(c_grid, dtype=np.float64)
    if np.any(c < 0) or np.any(c > 3):
        raise ValueError("latent_scale: scale factors must lie in [0, 3]")
    z = _encode(flow, theta)
    zs = c[:, None] * z[None, :]
    return LatentProbe("scale", c, zs, flow.inverse(zs), np.linalg.norm(zs, axis=1),
                       _base_logp(zs), False, float(np.sqrt(flow.dim)))


def kl_divergence(reference, model, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo KL(reference || model) from reference samples."""
    if n_samples < 1000:
        raise ValueError("kl estimate needs n_samples >= 1000")
    x = reference.sample(n_samples, rng)
    return float(np.mean(flow_log_prob(reference, x) - flow_log_prob(model, x)))


def kl_flow_vs_analytic(flow, K: int, alpha_hot: float = 120.0, alpha_cold: float = 1.1,
                        n_samples: int = 10_000, rng: np.random.Generator | None = None,
                        jitter: float = 1e-3) -> float:
    """KL(analytic mixture || flow); pass a DirichletMixture as ``flow`` for a self-test."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return kl_divergence(DirichletMixture(K, alpha_hot, alpha_cold, jitter), flow, n_samples, rng)


@dataclass
class TypicalSetStats:
    dim: int
    mean_norm: float
    std_norm: float
    reference: float  # sqrt(dim)

    def to_csv(self, path) -> None:
        _write_rows(path, ("dim", "mean_norm", "std_norm", "sqrt_dim"),
                    [(self.dim, self.mean_norm, self.std_norm, self.reference)])


def typical_set_stats(flow, n: int, rng: np.random.Generator) -> TypicalSetStats:
    """Norm statistics of n base-distribution latents against sqrt(d)."""
    if n < 1000:
        raise ValueError("typical_set_stats needs n >= 1000")
    d = flow.dim
    norms = np.linalg.norm(rng.standard_normal((n, d)), axis=1)
    return TypicalSetStats(d, float(norms.mean()), float(norms.std(ddof=1)), float(np.sqrt(d)))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v)
                        for v in row])
