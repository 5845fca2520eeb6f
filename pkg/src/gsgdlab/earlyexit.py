"""Linear feed-forward nets with early exits, and a toy SIFT trainer.

A ``LinearNet`` with layers W_1..W_k and head theta predicts
``sigmoid(theta^T W_k ... W_1 x)``; exiting at layer j applies the same head
to ``W_j ... W_1 x``. SIFT scores a batch at the exit layer and back-propagates
only through the top fraction (by early-exit loss or prediction entropy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateConfigurationError, DivergenceError
from .numerics import McEstimate, RngStream, mc_estimate, sigmoid
from .oracle import top_count, top_indices

P_CLAMP = 1e-12


@dataclass
class LinearNet:
    layers: list
    head: np.ndarray

    def __post_init__(self):
        self.layers = [np.array(W, dtype=float) for W in self.layers]
        self.head = np.array(self.head, dtype=float)
        if not self.layers:
            raise ValueError("a LinearNet needs at least one layer")
        d = self.head.shape[0]
        for W in self.layers:
            if W.shape != (d, d):
                raise ValueError(f"layer shape {W.shape} does not match head dimension {d}")
        if not (np.all(np.isfinite(self.head)) and all(np.all(np.isfinite(W)) for W in self.layers)):
            raise ValueError("network parameters must be finite")

    @property
    def dim(self) -> int:
        return self.head.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "LinearNet":
        return LinearNet([W.copy() for W in self.layers], self.head.copy())

    def _check_layer(self, j: int) -> None:
        if not 1 <= j <= self.depth:
            raise ValueError(f"exit layer {j} outside 1..{self.depth}")

    def prefix_matrix(self, j: int) -> np.ndarray:
        """A_j = W_j ... W_1."""
        self._check_layer(j)
        A = np.eye(self.dim)
        for W in self.layers[:j]:
            A = W @ A
        return A

    def suffix_matrix(self, j: int) -> np.ndarray:
        """B_j = W_k ... W_{j+1} (identity when j = k)."""
        self._check_layer(j)
        B = np.eye(self.dim)
        for W in self.layers[j:]:
            B = W @ B
        return B

    def representations(self, x: np.ndarray) -> list:
        """[h_0 = x, h_1, ..., h_k] for a batch x of shape (n, d)."""
        hs = [np.asarray(x, dtype=float)]
        for W in self.layers:
            hs.append(hs[-1] @ W.T)
        return hs

    def prefix_logit(self, j: int, x):
        self._check_layer(j)
        h = np.asarray(x, dtype=float)
        for W in self.layers[:j]:
            h = h @ W.T
        return h @ self.head

    def early_prediction(self, j: int, x):
        return sigmoid(self.prefix_logit(j, x))

    def predict(self, x):
        return self.early_prediction(self.depth, x)


def prefix_logit(net: LinearNet, j: int, x):
    return net.prefix_logit(j, x)


def early_prediction(net: LinearNet, j: int, x):
    return net.early_prediction(j, x)


def cross_entropy(y, p):
    p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def binary_entropy(p):
    p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def centered_label(y):
    return 2.0 * np.asarray(y, dtype=float) - 1.0


# ---------------------------------------------------------------------------
# argmax preservation


def beta_vectors(net: LinearNet, j: int) -> tuple[np.ndarray, np.ndarray]:
    """(A_j^T theta, A_j^T B_j^T theta)."""
    A = net.prefix_matrix(j)
    B = net.suffix_matrix(j)
    return A.T @ net.head, A.T @ (B.T @ net.head)


def beta_j(net: LinearNet, j: int) -> float:
    u, v = beta_vectors(net, j)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateConfigurationError(f"beta_{j} is undefined: a projected head vector is zero")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def sample_assumption61_z(rng: RngStream, d: int, size=None) -> np.ndarray:
    """Difference variable z ~ N(0, 2 I_d); ``size`` adds leading axes."""
    if d < 1:
        raise ValueError("d must be >= 1")
    shape = (d,) if size is None else (*np.atleast_1d(size), d)
    return math.sqrt(2.0) * rng.normal(shape)


def pj_monte_carlo(net: LinearNet, j: int, n: int, rng: RngStream) -> McEstimate:
    """2 * P(theta^T A_j z >= 0 and theta^T B_j A_j z >= 0), z ~ N(0, 2I)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    u, v = beta_vectors(net, j)
    d = net.dim

    def sampler(rng: RngStream, m: int) -> np.ndarray:
        z = sample_assumption61_z(rng, d, m)
        return 2.0 * ((z @ u >= 0) & (z @ v >= 0))

    return mc_estimate(sampler, n, rng, chunk_size=max(1, (1 << 21) // d))


# ---------------------------------------------------------------------------
# constructed nets


def random_linear_net(d: int, k: int, rng: RngStream, scale: float = 1.0) -> LinearNet:
    layers = [scale * rng.normal((d, d)) / math.sqrt(d) for _ in range(k)]
    return LinearNet(layers, rng.normal(d) / math.sqrt(d))


def identity_init_net(d: int, k: int, rng: RngStream, jitter: float = 0.1, head_scale: float = 0.1) -> LinearNet:
    layers = [np.eye(d) + jitter * rng.normal((d, d)) / math.sqrt(d) for _ in range(k)]
    return LinearNet(layers, head_scale * rng.normal(d) / math.sqrt(d))


def linear_net_with_beta(beta: float, d: int, rng: RngStream, k: int = 2) -> LinearNet:
    """Random k-layer net whose beta_1 equals ``beta``.

    W_1 and W_3..W_k are random; W_2 gets a rank-one correction so that
    B_1^T theta hits a direction at the requested angle to A_1^T theta.
    """
    if k < 2:
        raise ValueError("need k >= 2 to set beta_1 freely")
    if not -1 <= beta <= 1 or d < 2:
        raise ValueError("beta must lie in [-1, 1] and d >= 2")
    theta = rng.normal(d)
    W1 = rng.normal((d, d)) / math.sqrt(d) + np.eye(d)
    upper = [rng.normal((d, d)) / math.sqrt(d) + np.eye(d) for _ in range(k - 2)]
    u = W1.T @ theta
    u_hat = u / np.linalg.norm(u)
    e = rng.normal(d)
    e -= (e @ u_hat) * u_hat
    e /= np.linalg.norm(e)
    target = beta * u_hat + math.sqrt(max(0.0, 1.0 - beta * beta)) * e
    # want W2^T theta' = g, with theta' = (W_k ... W_3)^T theta
    g = np.linalg.solve(W1.T, target)
    theta_p = theta.copy()
    for W in reversed(upper):
        theta_p = W.T @ theta_p
    M = rng.normal((d, d)) / math.sqrt(d)
    W2 = M + np.outer(theta_p, g - M.T @ theta_p) / (theta_p @ theta_p)
    return LinearNet([W1, W2, *upper], theta)


def orthogonal_beta_zero_net() -> LinearNet:
    """d = 2, k = 2 net with beta_1 = 0 (W_2 is a quarter turn)."""
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    return LinearNet([np.eye(2), rot], np.array([1.0, 0.0]))


# ---------------------------------------------------------------------------
# SIFT


@dataclass(frozen=True)
class SiftConfig:
    batch_size: int = 64
    keep_fraction: float = 0.5
    criterion: str = "early-loss"
    exit_layer: int = 1
    warmup_steps: Optional[int] = None  # None -> 5% of total_steps
    step_size: float = 0.1
    total_steps: int = 200

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be >= 1")
        top_count(self.keep_fraction, self.batch_size)
        if self.criterion not in ("early-loss", "early-entropy"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")

    @property
    def warmup(self) -> int:
        if self.warmup_steps is None:
            return math.ceil(0.05 * self.total_steps)
        return self.warmup_steps

    @property
    def keep_count(self) -> int:
        return top_count(self.keep_fraction, self.batch_size)


class PlantedTask:
    """Gaussian features, labels 1[<v, x> >= 0] for a planted unit vector v."""

    def __init__(self, d: int, rng: RngStream, n_eval: int = 2000):
        v = rng.normal(d)
        self.d = d
        self.v = v / np.linalg.norm(v)
        self.eval_x, self.eval_y = self._draw(rng, n_eval)

    def _draw(self, rng: RngStream, n: int):
        x = rng.normal((n, self.d))
        return x, (x @ self.v >= 0).astype(float)

    def sample(self, rng: RngStream, n: int):
        return self._draw(rng, n)


@dataclass
class TrainLog:
    steps: np.ndarray
    eval_loss: np.ndarray
    backprop_samples: np.ndarray
    scored_samples: np.ndarray
    net: Optional[LinearNet] = field(default=None, repr=False)

    def rows(self):
        for s, l, b, c in zip(self.steps, self.eval_loss, self.backprop_samples, self.scored_samples):
            yield int(s), float(l), int(b), int(c)

    def backprop_to_reach(self, target: float) -> float:
        """Cumulative backprop samples at the first step with eval loss <= target."""
        hit = np.nonzero(self.eval_loss <= target)[0]
        return float(self.backprop_samples[hit[0]]) if hit.size else math.inf


def model_loss(net: LinearNet, x, y) -> float:
    return float(np.mean(cross_entropy(y, net.predict(x))))


def score_batch(net: LinearNet, cfg: SiftConfig, x, y) -> np.ndarray:
    p = net.early_prediction(cfg.exit_layer, x)
    if cfg.criterion == "early-loss":
        return cross_entropy(y, p)
    return binary_entropy(p)


def select_batch(net: LinearNet, cfg: SiftConfig, x, y) -> np.ndarray:
    """Indices kept for back-propagation, in ascending order."""
    return np.sort(top_indices(score_batch(net, cfg, x, y), cfg.keep_count))


def cross_entropy_grads(net: LinearNet, x, y):
    """Batch-mean gradients of the full-model cross-entropy (layers, head)."""
    hs = net.representations(x)
    g = sigmoid(hs[-1] @ net.head) - y
    n = len(y)
    head_grad = g @ hs[-1] / n
    layer_grads = [None] * net.depth
    back = net.head.copy()  # (W_k ... W_{i+1})^T theta
    for i in range(net.depth - 1, -1, -1):
        layer_grads[i] = np.outer(back, g @ hs[i] / n)
        back = net.layers[i].T @ back
    return layer_grads, head_grad


def sift_train(data, model: LinearNet, cfg: SiftConfig, rng: RngStream) -> TrainLog:
    """Train with early-exit filtering after ``cfg.warmup`` full-batch steps."""
    if not 1 <= cfg.exit_layer <= model.depth:
        raise ValueError(f"exit layer {cfg.exit_layer} outside 1..{model.depth}")
    net = model.copy()
    T = cfg.total_steps
    eval_loss = np.empty(T)
    backprop = np.empty(T, dtype=np.int64)
    scored = np.empty(T, dtype=np.int64)
    n_back = n_scored = 0
    scale0 = 1.0 + math.sqrt(sum(float(np.sum(W * W)) for W in net.layers) + float(net.head @ net.head))
    for t in range(T):
        x, y = data.sample(rng, cfg.batch_size)
        if t >= cfg.warmup:
            idx = select_batch(net, cfg, x, y)
            x, y = x[idx], y[idx]
        n_scored += cfg.batch_size
        n_back += len(y)
        layer_grads, head_grad = cross_entropy_grads(net, x, y)
        for W, G in zip(net.layers, layer_grads):
            W -= cfg.step_size * G
        net.head -= cfg.step_size * head_grad
        size = math.sqrt(sum(float(np.sum(W * W)) for W in net.layers) + float(net.head @ net.head))
        if not size <= 1e6 * scale0:
            raise DivergenceError(t + 1, size)
        eval_loss[t] = model_loss(net, data.eval_x, data.eval_y)
        backprop[t] = n_back
        scored[t] = n_scored
    return TrainLog(np.arange(1, T + 1), eval_loss, backprop, scored, net)


def baseline_train(data, model: LinearNet, cfg: SiftConfig, rng: RngStream) -> TrainLog:
    """Full-batch training: SIFT with the warm-up covering every step."""
    return sift_train(data, model, replace(cfg, warmup_steps=cfg.total_steps), rng)
