"""Rational-quadratic spline coupling flow with a standard-normal base.

Each coupling layer leaves one half of the coordinates untouched and maps the
other half elementwise through a monotone rational-quadratic spline on
[-B, B] (identity outside), whose knots are produced by a small conditioner
network from the untouched half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import tensor as T
from .nn.layers import Sequential
from .nn.tensor import Tensor, no_grad

MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3
# softplus(_DERIV_SHIFT) + MIN_DERIVATIVE == 1, so a zero raw output means slope 1
_DERIV_SHIFT = float(np.log(np.expm1(1.0 - MIN_DERIVATIVE)))
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SplineParams:
    """Normalised knots of one spline.

    ``widths``/``heights`` hold the K bin sizes (each summing to 2B) and
    ``derivatives`` the K-1 interior knot slopes; boundary slopes are 1.
    """

    widths: np.ndarray
    heights: np.ndarray
    derivatives: np.ndarray
    tail_bound: float = 3.0

    def __post_init__(self):
        self.widths = np.asarray(self.widths, dtype=np.float64)
        self.heights = np.asarray(self.heights, dtype=np.float64)
        self.derivatives = np.asarray(self.derivatives, dtype=np.float64)
        k = len(self.widths)
        span = 2.0 * self.tail_bound
        if len(self.heights) != k or len(self.derivatives) != k - 1:
            raise ValueError("spline needs K widths, K heights and K-1 interior derivatives")
        if abs(self.widths.sum() - span) > 1e-9 or abs(self.heights.sum() - span) > 1e-9:
            raise ValueError(f"widths and heights must each sum to {span}")
        if np.any(self.widths <= 0) or np.any(self.heights <= 0) or np.any(self.derivatives <= 0):
            raise ValueError("bin sizes and derivatives must be strictly positive")

    @classmethod
    def uniform(cls, bins: int = 8, tail_bound: float = 3.0) -> "SplineParams":
        w = np.full(bins, 2.0 * tail_bound / bins)
        return cls(w, w.copy(), np.ones(bins - 1), tail_bound)

    @classmethod
    def random(cls, rng: np.random.Generator, bins: int = 8, tail_bound: float = 3.0,
               scale: float = 1.0) -> "SplineParams":
        raw = rng.normal(scale=scale, size=(1, 3 * bins - 1))
        knots = spline_knots(Tensor(raw), bins, tail_bound)
        return cls(knots.widths.data[0], knots.heights.data[0],
                   knots.derivatives.data[0, 1:-1], tail_bound)

    def knots(self) -> "Knots":
        b = self.tail_bound
        cw = np.concatenate([[-b], -b + np.cumsum(self.widths)])
        ch = np.concatenate([[-b], -b + np.cumsum(self.heights)])
        cw[-1] = ch[-1] = b
        d = np.concatenate([[1.0], self.derivatives, [1.0]])
        return Knots(Tensor(cw[None]), Tensor(np.diff(cw)[None]), Tensor(ch[None]),
                     Tensor(np.diff(ch)[None]), Tensor(d[None]), b)


@dataclass
class Knots:
    """Batched knot tensors, one row per spline: (M, K+1) cumulative positions,
    (M, K) bin sizes, (M, K+1) slopes including the unit boundary slopes."""

    cumwidths: Tensor
    widths: Tensor
    cumheights: Tensor
    heights: Tensor
    derivatives: Tensor
    tail_bound: float


def _cumulative(raw: Tensor, min_size: float, tail_bound: float) -> tuple[Tensor, Tensor]:
    m, k = raw.shape
    sizes = T.softmax(raw, axis=-1)
    sizes = min_size + (1.0 - min_size * k) * sizes
    inner = T.cumsum(sizes, axis=-1)[:, :-1]
    cum = T.concat([np.zeros((m, 1)), inner, np.ones((m, 1))], axis=-1)
    cum = 2.0 * tail_bound * cum - tail_bound
    return cum, cum[:, 1:] - cum[:, :-1]


def spline_knots(raw: Tensor, bins: int, tail_bound: float) -> Knots:
    """Map unconstrained conditioner output (M, 3K-1) to valid knots."""
    if raw.shape[-1] != 3 * bins - 1:
        raise T.ShapeError("spline_knots", raw.shape, (raw.shape[0], 3 * bins - 1))
    m = raw.shape[0]
    cw, w = _cumulative(raw[:, :bins], MIN_BIN_WIDTH, tail_bound)
    ch, h = _cumulative(raw[:, bins:2 * bins], MIN_BIN_HEIGHT, tail_bound)
    inner = MIN_DERIVATIVE + T.softplus(raw[:, 2 * bins:] + _DERIV_SHIFT)
    d = T.concat([np.ones((m, 1)), inner, np.ones((m, 1))], axis=-1)
    return Knots(cw, w, ch, h, d, tail_bound)


def _bin_index(cum: np.ndarray, x: np.ndarray) -> np.ndarray:
    edges = cum.copy()
    edges[:, -1] += 1e-6
    idx = np.sum(x[:, None] >= edges, axis=1) - 1
    return np.clip(idx, 0, cum.shape[1] - 2)[:, None]


def rq_forward(x: Tensor, knots: Knots) -> tuple[Tensor, Tensor]:
    """Spline each x[m] with knot row m; returns (y, log dy/dx), both shape (M,)."""
    b = knots.tail_bound
    inside = (x.data >= -b) & (x.data <= b)
    xin = T.where(inside, x, 0.0)
    idx = _bin_index(knots.cumwidths.data, xin.data)

    x_k = T.gather(knots.cumwidths, idx)[:, 0]
    w_k = T.gather(knots.widths, idx)[:, 0]
    y_k = T.gather(knots.cumheights, idx)[:, 0]
    h_k = T.gather(knots.heights, idx)[:, 0]
    d_k = T.gather(knots.derivatives, idx)[:, 0]
    d_k1 = T.gather(knots.derivatives, idx + 1)[:, 0]
    delta = h_k / w_k

    xi = (xin - x_k) / w_k
    xi1 = xi * (1.0 - xi)
    num = h_k * (delta * xi * xi + d_k * xi1)
    den = delta + (d_k + d_k1 - 2.0 * delta) * xi1
    y = y_k + num / den
    dnum = delta * delta * (d_k1 * xi * xi + 2.0 * delta * xi1 + d_k * (1.0 - xi) * (1.0 - xi))
    logdet = T.log(dnum) - 2.0 * T.log(den)

    return T.where(inside, y, x), T.where(inside, logdet, 0.0)


def rq_inverse(y: np.ndarray, knots: Knots) -> tuple[np.ndarray, np.ndarray]:
    """Analytic inverse of :func:`rq_forward`; returns (x, log dx/dy)."""
    b = knots.tail_bound
    y = np.asarray(y, dtype=np.float64)
    inside = (y >= -b) & (y <= b)
    yin = np.where(inside, y, 0.0)
    cw, w = knots.cumwidths.data, knots.widths.data
    ch, h = knots.cumheights.data, knots.heights.data
    d = knots.derivatives.data
    idx = _bin_index(ch, yin)
    take = lambda a, i: np.take_along_axis(a, i, axis=1)[:, 0]  # noqa: E731
    x_k, w_k, y_k, h_k = take(cw, idx), take(w, idx), take(ch, idx), take(h, idx)
    d_k, d_k1 = take(d, idx), take(d, idx + 1)
    delta = h_k / w_k

    dy = yin - y_k
    s = d_k + d_k1 - 2.0 * delta
    a = h_k * (delta - d_k) + dy * s
    bq = h_k * d_k - dy * s
    c = -delta * dy
    disc = np.maximum(bq * bq - 4.0 * a * c, 0.0)
    xi = (2.0 * c) / (-bq - np.sqrt(disc))
    x = xi * w_k + x_k

    xi1 = xi * (1.0 - xi)
    den = delta + s * xi1
    dnum = delta * delta * (d_k1 * xi * xi + 2.0 * delta * xi1 + d_k * (1.0 - xi) ** 2)
    logdet = -(np.log(dnum) - 2.0 * np.log(den))
    return np.where(inside, x, y), np.where(inside, logdet, 0.0)


def rq_spline(x: float, params: SplineParams) -> tuple[float, float]:
    """Evaluate a single spline at scalar x; returns (y, dy/dx)."""
    if not np.isfinite(x):
        raise ValueError(f"rq_spline: non-finite input {x}")
    y, logdet = rq_forward(Tensor([float(x)]), params.knots())
    return float(y.data[0]), float(np.exp(logdet.data[0]))


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite input")


class CouplingLayer:
    """Spline coupling layer; ``transformed`` is the boolean mask of the
    coordinates rewritten by this layer."""

    def __init__(self, transformed: np.ndarray, hidden: int, bins: int, tail_bound: float,
                 rng: np.random.Generator, init_scale: float = 1e-2, depth: int = 1,
                 activation: str = "tanh"):
        transformed = np.asarray(transformed, dtype=bool)
        self.id_idx = np.flatnonzero(~transformed)
        self.tr_idx = np.flatnonzero(transformed)
        if len(self.id_idx) == 0 or len(self.tr_idx) == 0:
            raise ValueError("coupling mask needs at least one identity and one transformed dimension")
        self.mask = transformed
        self.bins = bins
        self.tail_bound = tail_bound
        n_out = len(self.tr_idx) * (3 * bins - 1)
        self.conditioner = Sequential([len(self.id_idx), *[hidden] * depth, n_out], activation,
                                      rng, last_scale=init_scale)
        self._perm_back = np.argsort(np.concatenate([self.id_idx, self.tr_idx]))

    def parameters(self) -> list[Tensor]:
        return self.conditioner.parameters()

    def _knots(self, x_id: Tensor, detach: bool) -> Knots:
        n = x_id.shape[0]
        raw = self.conditioner(x_id, detach=detach)
        return spline_knots(raw.reshape(n * len(self.tr_idx), 3 * self.bins - 1),
                            self.bins, self.tail_bound)

    def forward(self, x: Tensor, detach: bool = False) -> tuple[Tensor, Tensor]:
        n = x.shape[0]
        x_id = x[:, self.id_idx]
        x_tr = x[:, self.tr_idx].reshape(n * len(self.tr_idx))
        y_tr, ld = rq_forward(x_tr, self._knots(x_id, detach))
        y = T.concat([x_id, y_tr.reshape(n, len(self.tr_idx))], axis=1)[:, self._perm_back]
        return y, ld.reshape(n, len(self.tr_idx)).sum(axis=1)

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = y.shape[0]
        with no_grad():
            knots = self._knots(Tensor(y[:, self.id_idx]), detach=True)
        x_tr, ld = rq_inverse(y[:, self.tr_idx].reshape(-1), knots)
        x = y.copy()
        x[:, self.tr_idx] = x_tr.reshape(n, len(self.tr_idx))
        return x, ld.reshape(n, len(self.tr_idx)).sum(axis=1)


class FlowModel:
    """Stack of spline coupling layers over R^dim with a standard-normal base.

    Layer ``i`` rewrites the odd coordinates when ``i`` is even and the even
    coordinates otherwise.  ``n_layers=0`` is allowed and gives the bare base
    distribution.
    """

    def __init__(self, dim: int, n_layers: int = 3, hidden: int = 16, bins: int = 8,
                 tail_bound: float = 3.0, rng: np.random.Generator | None = None,
                 init_scale: float = 1e-2):
        if dim < 1:
            raise ValueError("flow dimension must be positive")
        if n_layers > 0 and dim < 2:
            raise ValueError("coupling layers need dim >= 2")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.config = dict(dim=dim, n_layers=n_layers, hidden=hidden, bins=bins,
                           tail_bound=tail_bound, init_scale=init_scale)
        odd = np.arange(dim) % 2 == 1
        self.layers = [CouplingLayer(odd if i % 2 == 0 else ~odd, hidden, bins, tail_bound,
                                     rng, init_scale)
                       for i in range(n_layers)]

    @classmethod
    def identity(cls, dim: int, n_layers: int = 3, **kwargs) -> "FlowModel":
        kwargs["init_scale"] = 0.0
        return cls(dim, n_layers, **kwargs)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def _as_batch(self, theta, name: str) -> Tensor:
        theta = theta if isinstance(theta, Tensor) else Tensor(theta)
        if theta.ndim == 1:
            theta = theta.reshape(1, theta.shape[0])
        if theta.shape[-1] != self.dim:
            raise T.ShapeError(name, theta.shape, (theta.shape[0], self.dim))
        _check_finite(name, theta.data)
        return theta

    def forward(self, theta, detach: bool = False) -> tuple[Tensor, Tensor]:
        """Map data to latents; returns (z (N, d), log|det dz/dtheta| (N,))."""
        x = self._as_batch(theta, "flow_forward")
        log_det = Tensor(np.zeros(x.shape[0]))
        for layer in self.layers:
            x, ld = layer.forward(x, detach=detach)
            log_det = log_det + ld
        return x, log_det

    def inverse(self, z) -> np.ndarray:
        """Map latents back to data space."""
        return self.inverse_with_logdet(z)[0]

    def inverse_with_logdet(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.atleast_2d(np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64))
        if z.shape[-1] != self.dim:
            raise T.ShapeError("flow_inverse", z.shape, (z.shape[0], self.dim))
        _check_finite("flow_inverse", z)
        x = z.copy()
        log_det = np.zeros(len(z))
        for layer in reversed(self.layers):
            x, ld = layer.inverse(x)
            log_det += ld
        return x, log_det

    def log_prob(self, theta, detach: bool = False) -> Tensor:
        """log p(theta) by change of variables; shape (N,).

        With ``detach=True`` the flow parameters are treated as constants, so
        gradients reach ``theta`` only.
        """
        z, log_det = self.forward(theta, detach=detach)
        base = -0.5 * (z * z).sum(axis=1) - 0.5 * self.dim * LOG_2PI
        return base + log_det

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("sample: n must be >= 1")
        return self.inverse(rng.standard_normal((n, self.dim)))
