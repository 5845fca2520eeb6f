"""The generous first-order oracle and the selection rules built on it.

A query draws R samples and exposes their (approximate) losses; a selection
rule picks one index; ``finalize`` then spends the query's single gradient
evaluation on the chosen sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .numerics import RngStream
from .problems import ProblemInstance, Samples

ZETA_DISTS = ("standard-gaussian", "rademacher")
MuFn = Callable[[np.ndarray], np.ndarray]


def constant_mu(value: float) -> MuFn:
    return lambda w: np.full(np.shape(w)[:-1], float(value))


def norm_mu(scale: float) -> MuFn:
    """mu(w) = scale * |w|; only used to exercise mu-invariance."""
    return lambda w: float(scale) * np.linalg.norm(w, axis=-1)


@dataclass(frozen=True)
class NoiseModel:
    """How approximate losses are produced from exact ones.

    ``exact``: f~ = f.  ``log-multiplicative``: f~ = f * exp(mu(w) + sigma*zeta)
    with zeta i.i.d. mean 0 / variance 1, drawn fresh per (query, sample).
    """

    mode: str = "exact"
    sigma: float = 0.0
    zeta: str = "standard-gaussian"
    mu: Union[MuFn, float] = 0.0

    def __post_init__(self):
        if self.mode not in ("exact", "log-multiplicative"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        if self.zeta not in ZETA_DISTS:
            raise ValueError(f"unknown zeta distribution {self.zeta!r}; expected one of {ZETA_DISTS}")

    @property
    def mu_fn(self) -> MuFn:
        return self.mu if callable(self.mu) else constant_mu(self.mu)

    def draw_zeta(self, rng: RngStream, shape) -> np.ndarray:
        if self.zeta == "rademacher":
            return rng.rademacher(shape)
        return rng.normal(shape)

    def apply(self, w: np.ndarray, exact_losses: np.ndarray, rng: RngStream) -> np.ndarray:
        """Approximate losses for ``exact_losses`` evaluated at ``w``.

        ``w`` may carry leading batch axes matching all but the last axis of
        ``exact_losses`` (the R axis); mu(w) is shared along that axis.
        """
        if self.mode == "exact":
            return exact_losses.copy()
        zeta = self.draw_zeta(rng, np.shape(exact_losses))
        mu = np.asarray(self.mu_fn(np.asarray(w, float)))[..., None]
        return exact_losses * np.exp(mu + self.sigma * zeta)


EXACT = NoiseModel()


class GradientCounter:
    """Counts gradient evaluations spent through ``finalize``."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1) -> None:
        self.count += n


@dataclass
class OracleDraw:
    samples: Samples
    exact_losses: np.ndarray
    approx_losses: np.ndarray
    selected_index: Optional[int] = None
    gradient: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def R(self) -> int:
        return int(self.exact_losses.shape[-1])


def query(problem: ProblemInstance, w, R: int, noise: NoiseModel, rng: RngStream) -> OracleDraw:
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    w = np.asarray(w, dtype=float)
    samples = problem.draw(rng, R)
    exact = np.asarray(problem.loss(w, samples), dtype=float)
    approx = noise.apply(w, exact, rng)
    return OracleDraw(samples, exact, approx)


def select_greedy(draw: OracleDraw) -> int:
    # np.argmax returns the first maximiser, i.e. ties go to the lowest index
    return int(np.argmax(draw.approx_losses))


def select_uniform(draw: OracleDraw, rng: RngStream) -> int:
    return int(rng.integers(draw.R))


def top_count(keep_fraction: float, R: int) -> int:
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    # rounding first stops 0.3 * 10 = 3.0000000000000004 from becoming 4
    return max(1, math.ceil(round(keep_fraction * R, 9)))


def top_indices(losses: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, by descending value then index."""
    order = np.argsort(-np.asarray(losses), kind="stable")
    return order[:k]


def select_top_fraction(draw: OracleDraw, keep_fraction: float) -> list[int]:
    k = top_count(keep_fraction, draw.R)
    return [int(i) for i in top_indices(draw.approx_losses, k)]


def finalize(
    problem: ProblemInstance, w, draw: OracleDraw, index: int, counter: Optional[GradientCounter] = None
) -> np.ndarray:
    if not 0 <= index < draw.R:
        raise ValueError(f"index {index} out of range for a draw of {draw.R} samples")
    g = problem.grad(w, draw.samples[index])
    draw.selected_index = int(index)
    draw.gradient = g
    if counter is not None:
        counter.add()
    return g
