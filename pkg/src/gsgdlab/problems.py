"""Synthetic per-sample loss families.

Three kinds are supported:

* ``noisy-least-squares``: features uniform on a sphere of radius ``r``,
  labels ``y = <w*, a> + sigma_y * xi``, loss ``(<w, a> - y)^2``.
* ``realizable-least-squares``: the same with ``sigma_y = 0``.
* ``gaussian-error-model``: the prediction error at ``w`` is drawn directly
  as ``eps(w) + delta(w) * u`` with ``u ~ N(0, 1)``; loss is its square.

All sample-level functions broadcast over leading axes, so a batch of
``(n, R)`` samples is evaluated in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NotAvailableError
from .numerics import RngStream

KINDS = ("noisy-least-squares", "realizable-least-squares", "gaussian-error-model")
LEAST_SQUARES = ("noisy-least-squares", "realizable-least-squares")


@dataclass(frozen=True)
class Samples:
    """A sample or a batch of samples.

    Least-squares kinds fill ``features`` (shape ``(..., d)``) and ``labels``
    (shape ``(...)``); the gaussian-error kind fills ``latent`` only.
    """

    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    latent: Optional[np.ndarray] = None

    def __getitem__(self, idx) -> "Samples":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Samples(pick(self.features), pick(self.labels), pick(self.latent))

    @property
    def shape(self) -> tuple:
        if self.latent is not None:
            return np.shape(self.latent)
        return np.shape(self.labels)


def as_weights(w, dim: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[-1:] != (dim,):
        raise ValueError(f"weight vector has trailing dimension {w.shape[-1:]}, expected ({dim},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector has non-finite entries")
    return w


@dataclass(frozen=True)
class ProblemInstance:
    kind: str
    dim: int
    w_star: np.ndarray
    feature_radius: float = 1.0
    label_noise_std: float = 0.0
    eps_fn: Optional[Callable[[np.ndarray], float]] = None
    delta_fn: Optional[Callable[[np.ndarray], float]] = None
    eps_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    delta_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # when set, the data distribution is a point mass on this single sample
    fixed_sample: Optional[Samples] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        w_star = np.array(self.w_star, dtype=float)
        w_star.setflags(write=False)
        object.__setattr__(self, "w_star", as_weights(w_star, self.dim))
        if self.kind in LEAST_SQUARES and not self.feature_radius > 0:
            raise ValueError("feature_radius must be positive")
        if self.label_noise_std < 0:
            raise ValueError("label_noise_std must be non-negative")
        if self.kind == "realizable-least-squares" and self.label_noise_std != 0:
            raise ValueError("realizable-least-squares requires label_noise_std == 0")
        if self.kind == "gaussian-error-model" and (self.eps_fn is None or self.delta_fn is None):
            raise ValueError("gaussian-error-model needs eps_fn and delta_fn")

    @property
    def L(self) -> float:
        """Uniform per-sample smoothness constant.

        Infinite for the gaussian-error kind: its per-sample curvature grows
        with the unbounded latent draw.
        """
        if self.kind in LEAST_SQUARES:
            if self.fixed_sample is not None:
                a = np.asarray(self.fixed_sample.features)
                return 2.0 * float(a @ a)
            return 2.0 * self.feature_radius**2
        return math.inf

    def _check(self, w) -> np.ndarray:
        return as_weights(w, self.dim)

    # -- sampling ---------------------------------------------------------
    def draw(self, rng: RngStream, size=None) -> Samples:
        shape = () if size is None else tuple(np.atleast_1d(size))
        if self.kind == "gaussian-error-model":
            return Samples(latent=rng.normal(shape) if shape else float(rng.normal()))
        if self.fixed_sample is not None:
            a = np.broadcast_to(self.fixed_sample.features, (*shape, self.dim)).copy()
            y = np.broadcast_to(self.fixed_sample.labels, shape).copy()
            return Samples(a, y)
        g = rng.normal((*shape, self.dim))
        a = self.feature_radius * g / np.linalg.norm(g, axis=-1, keepdims=True)
        y = a @ self.w_star
        if self.label_noise_std > 0:
            y = y + self.label_noise_std * rng.normal(shape)
        return Samples(a, np.asarray(y))

    # -- per-sample quantities -------------------------------------------
    def prediction_error(self, w, x: Samples):
        """Signed residual; its square is the per-sample loss."""
        w = self._check(w)
        if self.kind == "gaussian-error-model":
            if w.ndim != 1:
                raise ValueError("gaussian-error-model evaluates one weight vector at a time")
            return self.eps_fn(w) + self.delta_fn(w) * np.asarray(x.latent)
        if x.features.shape[-1] != self.dim:
            raise ValueError(f"sample dimension {x.features.shape[-1]} does not match problem dim {self.dim}")
        return np.sum(x.features * w, axis=-1) - x.labels

    def loss(self, w, x: Samples):
        return np.square(self.prediction_error(w, x))

    def grad(self, w, x: Samples) -> np.ndarray:
        e = self.prediction_error(w, x)
        if self.kind == "gaussian-error-model":
            if self.eps_grad is None or self.delta_grad is None:
                raise NotAvailableError("gradient needs eps_grad and delta_grad")
            u = np.asarray(x.latent)[..., None]
            return 2.0 * np.asarray(e)[..., None] * (self.eps_grad(w) + u * self.delta_grad(w))
        return 2.0 * np.asarray(e)[..., None] * x.features

    # -- population quantities ------------------------------------------
    def population_loss(self, w):
        """F(w). Accepts a batch of weights with shape (..., d)."""
        w = self._check(w)
        if self.kind == "gaussian-error-model":
            return self.eps_fn(w) ** 2 + self.delta_fn(w) ** 2
        if self.fixed_sample is not None:
            return self.loss(w, self.fixed_sample)
        diff = w - self.w_star
        return (self.feature_radius**2 / self.dim) * np.sum(diff * diff, axis=-1) + self.label_noise_std**2

    def minimum_value(self) -> float:
        if self.fixed_sample is not None:
            return 0.0
        if self.kind == "gaussian-error-model":
            return 0.0
        return self.label_noise_std**2

    def minimizer(self) -> np.ndarray:
        if self.fixed_sample is not None:
            raise NotAvailableError("a single fixed sample has a non-singleton solution set")
        return self.w_star.copy()

    def distance_to_solution(self, w) -> float:
        return float(np.linalg.norm(self._check(w) - self.minimizer()))


def noisy_least_squares(dim: int = 10, feature_radius: float = 1.0, label_noise_std: float = 1.0, w_star=None) -> ProblemInstance:
    """Default race instance: d=10, unit sphere features, sigma_y=1 (so F* = 1)."""
    if w_star is None:
        w_star = np.ones(dim) / math.sqrt(dim)
    kind = "noisy-least-squares" if label_noise_std > 0 else "realizable-least-squares"
    return ProblemInstance(kind, dim, np.asarray(w_star, float), feature_radius, label_noise_std)


def realizable_least_squares(dim: int = 10, feature_radius: float = 1.0, w_star=None) -> ProblemInstance:
    return noisy_least_squares(dim, feature_radius, 0.0, w_star)


def fixed_sample_problem(features, label: float) -> ProblemInstance:
    a = np.asarray(features, dtype=float)
    return ProblemInstance(
        "realizable-least-squares",
        a.size,
        np.zeros(a.size),
        feature_radius=float(np.linalg.norm(a)),
        fixed_sample=Samples(a, np.asarray(float(label))),
    )


def gaussian_error_model(dim: int = 1, w_star=None, eps_direction=None, delta_scale: float = 1.0) -> ProblemInstance:
    """Linear error model: eps(w) = <c, w - w*>, delta(w) = s * |w - w*|."""
    w_star = np.zeros(dim) if w_star is None else np.asarray(w_star, float)
    c = np.zeros(dim) if eps_direction is None else np.asarray(eps_direction, float)
    s = float(delta_scale)
    if s < 0:
        raise ValueError("delta_scale must be non-negative")

    def eps_fn(w):
        return np.sum((w - w_star) * c, axis=-1)

    def delta_fn(w):
        return s * np.linalg.norm(w - w_star, axis=-1)

    def eps_grad(w):
        return c.copy()

    def delta_grad(w):
        diff = w - w_star
        norm = np.linalg.norm(diff)
        return s * diff / norm if norm > 0 else np.zeros_like(diff)

    return ProblemInstance(
        "gaussian-error-model", dim, w_star,
        eps_fn=eps_fn, delta_fn=delta_fn, eps_grad=eps_grad, delta_grad=delta_grad,
    )


def draw_sample(problem: ProblemInstance, rng: RngStream, size=None) -> Samples:
    return problem.draw(rng, size)


def loss(problem: ProblemInstance, w, x: Samples):
    return problem.loss(w, x)


def grad(problem: ProblemInstance, w, x: Samples) -> np.ndarray:
    return problem.grad(w, x)


def population_loss(problem: ProblemInstance, w):
    return problem.population_loss(w)


def minimum_value(problem: ProblemInstance) -> float:
    return problem.minimum_value()


def minimizer(problem: ProblemInstance) -> np.ndarray:
    return problem.minimizer()
