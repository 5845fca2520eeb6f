"""Shared numeric substrate: special functions, seeded streams, quadrature, MC."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "RngStream",
    "McEstimate",
    "QuadratureError",
    "erf",
    "erfc",
    "sigmoid",
    "integrate_semi_infinite",
    "mc_estimate",
    "sample_gaussian",
    "sample_gaussian_vector",
]

_U64 = (1 << 64) - 1


def _stable_u64(*parts: object) -> int:
    text = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class RngStream:
    """A keyed Philox4x64-10 stream.

    The 128-bit Philox key is ``(seed, stream_id)``, so a given pair always
    produces the same sequence of 64-bit words regardless of platform, and
    different ``stream_id`` values address disjoint keyed streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed <= _U64 and 0 <= stream_id <= _U64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def substream(self, name: object) -> "RngStream":
        """Fresh stream derived from this one by a stable hash of ``name``.

        Derivation does not consume draws from the parent, so adding a new
        named substream never perturbs existing ones.
        """
        return RngStream(self.seed, _stable_u64(self.stream_id, name))

    def substreams(self, count: int, prefix: str = "replicate") -> list["RngStream"]:
        return [self.substream(f"{prefix}/{i}") for i in range(count)]

    # thin conveniences over the numpy Generator
    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self.generator.integers(0, high, size=size)

    def rademacher(self, size=None) -> np.ndarray:
        return 2.0 * self.generator.integers(0, 2, size=size) - 1.0

    def raw_u64(self, size: int) -> np.ndarray:
        return self.generator.bit_generator.random_raw(size)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("a Monte-Carlo estimate needs at least two samples")
        if not self.std_error >= 0:
            raise ValueError("std_error must be non-negative")

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "McEstimate":
        values = np.asarray(values, dtype=float).ravel()
        n = values.size
        if n < 2:
            raise ValueError("a Monte-Carlo estimate needs at least two samples")
        return cls(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n)

    def __str__(self) -> str:
        return f"{self.mean:.6g} ± {self.std_error:.2g} (n={self.n_samples})"


class _Moments:
    """Running (count, mean, M2) with Chan's pairwise merge."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, chunk: np.ndarray) -> None:
        chunk = np.asarray(chunk, dtype=float).ravel()
        nb = chunk.size
        if nb == 0:
            return
        mb = float(chunk.mean())
        m2b = float(np.sum((chunk - mb) ** 2))
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, mb, m2b
            return
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    def estimate(self) -> McEstimate:
        var = self.m2 / (self.n - 1)
        return McEstimate(self.mean, math.sqrt(max(var, 0.0) / self.n), self.n)


Sampler = Callable[[RngStream, int], np.ndarray]


def mc_estimate(sampler: Sampler, n: int, rng: RngStream, chunk_size: int = 1 << 17) -> McEstimate:
    """Mean and standard error of ``n`` i.i.d. draws of ``sampler``.

    ``sampler(rng, m)`` must return ``m`` draws. Draws are taken in fixed-size
    chunks so memory stays bounded; the chunking is part of the determinism
    contract (same rng, n and chunk_size give the same estimate bitwise).
    """
    if n < 2:
        raise ValueError(f"mc_estimate needs n >= 2, got {n}")
    acc = _Moments()
    done = 0
    while done < n:
        m = min(chunk_size, n - done)
        acc.add(sampler(rng, m))
        done += m
    return acc.estimate()


def combine_estimates(parts: Iterable[McEstimate]) -> McEstimate:
    """Pool estimates from independent substreams (fixed iteration order)."""
    acc = _Moments()
    for p in parts:
        other = _Moments()
        other.n = p.n_samples
        other.mean = p.mean
        other.m2 = (p.std_error**2) * p.n_samples * (p.n_samples - 1)
        if acc.n == 0:
            acc = other
            continue
        n = acc.n + other.n
        delta = other.mean - acc.mean
        acc.mean += delta * other.n / n
        acc.m2 += other.m2 + delta * delta * acc.n * other.n / n
        acc.n = n
    return acc.estimate()


def erf(t):
    return special.erf(t)


def erfc(t):
    # direct erfc keeps relative accuracy in the far tail
    return special.erfc(t)


def sigmoid(z):
    """Increasing logistic 1 / (1 + exp(-z)), overflow-free for large |z|."""
    return special.expit(z)


class QuadratureError(RuntimeError):
    def __init__(self, estimate: float, achieved_tol: float, message: str = ""):
        self.estimate = estimate
        self.achieved_tol = achieved_tol
        super().__init__(
            message or f"quadrature did not converge: best estimate {estimate!r}, "
            f"achieved tolerance {achieved_tol:.3g}"
        )


def integrate_semi_infinite(
    f: Callable[[float], float], abs_tol: float = 1e-12, max_panels: int = 500
) -> float:
    """Integral of ``f`` over [0, inf).

    Uses QUADPACK's QAGI (the half-line is mapped onto (0, 1] and integrated
    with adaptive 15-point Gauss-Kronrod panels). Raises ``QuadratureError``
    carrying the best estimate if the panel budget is exhausted before the
    error estimate drops below ``abs_tol``.
    """
    if not abs_tol > 0:
        raise ValueError("abs_tol must be positive")
    res = integrate.quad(f, 0.0, np.inf, epsabs=abs_tol, epsrel=0.0, limit=max_panels, full_output=1)
    value, err = res[0], res[1]
    if len(res) > 3:
        # QUADPACK flagged a problem (ier > 0); the fourth entry is its message
        raise QuadratureError(value, err, f"quadrature did not converge ({res[3].splitlines()[0]}): "
                              f"best estimate {value!r}, achieved tolerance {err:.3g}")
    if err > abs_tol:
        raise QuadratureError(value, err)
    return value


def sample_gaussian(rng: RngStream, mean: float = 0.0, std: float = 1.0, size=None):
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0:
        return np.full(size, float(mean)) if size is not None else float(mean)
    return mean + std * rng.normal(size)


def sample_gaussian_vector(rng: RngStream, d: int, cov_scale: float = 1.0, size: int | Sequence[int] | None = None):
    """Draws from N(0, cov_scale * I_d); ``size`` adds leading batch axes."""
    if cov_scale < 0:
        raise ValueError("cov_scale must be non-negative")
    shape = (d,) if size is None else (*np.atleast_1d(size), d)
    return math.sqrt(cov_scale) * rng.normal(shape)
