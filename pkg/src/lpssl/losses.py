"""Supervised and unlabelled loss terms.

All functions return a :class:`LossValue`: a scalar tensor plus a tag naming
the component.  Logs are natural; probabilities are floored at
``PROB_FLOOR`` before taking logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowModel
from .nn import tensor as T
from .nn.tensor import Tensor

PROB_FLOOR = 1e-12
SUM_FLOOR = 1e-30


@dataclass
class LossValue:
    value: Tensor
    tag: str

    def item(self) -> float:
        return self.value.item()

    def backward(self) -> None:
        self.value.backward()


def _safe_log(t: Tensor) -> Tensor:
    return T.log(T.clamp_min(t, PROB_FLOOR))


def cross_entropy(theta: Tensor, y) -> LossValue:
    """Mean of -log theta[y] over the batch."""
    y = np.asarray(y, dtype=int)
    k = theta.shape[1]
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"cross_entropy: class index out of range [0, {k})")
    if len(y) != theta.shape[0]:
        raise T.ShapeError("cross_entropy", theta.shape, y.shape)
    picked = T.gather(theta, y[:, None], axis=1)
    return LossValue(-_safe_log(picked).mean(), "supervised")


def binary_cross_entropy(theta: Tensor, y) -> LossValue:
    """Mean over batch and dimensions of the Bernoulli negative log-likelihood."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != theta.shape:
        raise T.ShapeError("binary_cross_entropy", theta.shape, y.shape)
    ll = y * _safe_log(theta) + (1.0 - y) * _safe_log(1.0 - theta)
    return LossValue(-ll.mean(), "supervised")


def min_ent(theta: Tensor, head: str = "softmax") -> LossValue:
    """Mean Shannon entropy of predictions.

    For the sigmoid head the per-attribute Bernoulli entropies are summed.
    """
    h = theta * _safe_log(theta)
    if head == "sigmoid":
        h = h + (1.0 - theta) * _safe_log(1.0 - theta)
    elif head != "softmax":
        raise ValueError(f"unknown head {head!r}")
    return LossValue(-h.sum(axis=1).mean(), "minent")


def _valid_set_loss(theta: Tensor, valid: np.ndarray, tag: str) -> LossValue:
    if valid.ndim != 2 or valid.shape[1] != theta.shape[1]:
        raise T.ShapeError(tag, theta.shape, valid.shape)
    # log prod_k theta^y (1-theta)^(1-y) for every valid y, as one matmul
    log_p = _safe_log(theta) @ Tensor(valid.T) + _safe_log(1.0 - theta) @ Tensor(1.0 - valid.T)
    total = T.clamp_min(T.exp(log_p).sum(axis=1), SUM_FLOOR)
    return LossValue(-T.log(total).mean(), tag)


def mut_exc(theta: Tensor) -> LossValue:
    """Mutual-exclusivity loss with the valid set of all one-hot vectors."""
    return _valid_set_loss(theta, np.eye(theta.shape[1]), "mutexc")


def semantic(theta: Tensor, valid_set) -> LossValue:
    """Mutual-exclusivity formula with an arbitrary set of valid binary labels."""
    valid = np.asarray(valid_set, dtype=np.float64)
    if valid.size == 0:
        raise ValueError("semantic: valid_set is empty")
    return _valid_set_loss(theta, np.atleast_2d(valid), "semantic")


def lp_unlabelled(flow: FlowModel, theta: Tensor) -> LossValue:
    """Mean negative flow log-density of predictions; the flow is held fixed."""
    if theta.shape[-1] != flow.dim:
        raise T.ShapeError("lp_unlabelled", theta.shape, (theta.shape[0], flow.dim))
    return LossValue(-flow.log_prob(theta, detach=True).mean(), "lp_u")


def flow_nll(flow: FlowModel, theta_relaxed) -> LossValue:
    """Mean negative flow log-density of relaxed labels; only the flow gets gradients."""
    data = theta_relaxed.data if isinstance(theta_relaxed, Tensor) else theta_relaxed
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[-1] != flow.dim:
        raise T.ShapeError("flow_nll", data.shape, (data.shape[0], flow.dim))
    # constant input: the labels are data, never a path back into the base network
    return LossValue(-flow.log_prob(Tensor(data)).mean(), "flow_nll")


def total_ssl(sup: LossValue, unsup: LossValue | None, lam: float) -> LossValue:
    """sup + lam * unsup."""
    if lam < 0:
        raise ValueError(f"total_ssl: lambda must be >= 0, got {lam}")
    if unsup is None:
        return LossValue(sup.value, "total")
    return LossValue(sup.value + lam * unsup.value, "total")
