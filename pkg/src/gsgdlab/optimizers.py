"""SGD and greedy SGD loops with trajectory recording and paired races.

Every replicate owns one ``RngStream``. Randomness is pre-drawn in blocks of
``BLOCK`` steps in a fixed order (sample features, label noise, zeta, uniform
pick), whatever the method, so SGD and GSGD runs on the same stream see the
same samples at every step and differ only in which one they pick.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError
from .numerics import RngStream
from .oracle import EXACT, NoiseModel
from .problems import LEAST_SQUARES, ProblemInstance, as_weights

METHODS = ("sgd", "gsgd")
BLOCK = 128
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class StepSchedule:
    eta: float
    kind: str = "constant"

    def __post_init__(self):
        if self.kind != "constant":
            raise ValueError(f"only constant step sizes are supported, got {self.kind!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def validate(self, L: float) -> None:
        if not self.eta * L < 1:
            raise ValueError(
                f"eta = {self.eta!r} violates the convergence-theorem precondition eta < 1/L (L = {L!r})"
            )


@dataclass
class Trajectory:
    steps: np.ndarray
    iterates: np.ndarray
    population_losses: np.ndarray
    averaged_losses: np.ndarray
    averaged_iterates: np.ndarray
    gradient_evals: int
    samples_inspected: int
    seed: int
    method: str
    R: int
    # per-step exact loss of the picked sample and the mean over the draw
    selected_losses: Optional[np.ndarray] = field(default=None, repr=False)
    draw_mean_losses: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return int(self.steps[-1])

    def rows(self):
        for i, k in enumerate(self.steps):
            yield (int(k), float(self.population_losses[i]), float(self.averaged_losses[i]),
                   int(k), int(k) * self.R)


def default_record_every(K: int) -> int:
    return max(1, math.ceil(K / 1000))


def record_steps(K: int, record_every: int) -> np.ndarray:
    steps = np.arange(0, K + 1, record_every)
    if steps[-1] != K:
        steps = np.append(steps, K)
    return steps


@dataclass
class _BatchResult:
    steps: np.ndarray
    iterates: np.ndarray  # (B, n_rec, d)
    avg_iterates: np.ndarray  # (B, n_rec, d)
    selected: Optional[np.ndarray]
    draw_mean: Optional[np.ndarray]


def _run_batch(
    problem: ProblemInstance,
    method: str,
    R: int,
    noise: NoiseModel,
    eta: float,
    K: int,
    w0: np.ndarray,
    streams: Sequence[RngStream],
    record_every: int,
    record_selection: bool = False,
) -> _BatchResult:
    B, d = len(streams), problem.dim
    w = np.tile(w0, (B, 1))
    wsum = np.zeros((B, d))
    steps = record_steps(K, record_every)
    n_rec = len(steps)
    iterates = np.empty((B, n_rec, d))
    avg_iterates = np.empty((B, n_rec, d))
    selected = np.empty((B, K)) if record_selection else None
    draw_mean = np.empty((B, K)) if record_selection else None
    limit = DIVERGENCE_FACTOR * (1.0 + np.linalg.norm(w0))
    rows = np.arange(B)
    greedy = method == "gsgd"
    noisy = noise.mode == "log-multiplicative"
    mu_fn = noise.mu_fn

    rec = 0
    for start in range(0, K, BLOCK):
        C = min(BLOCK, K - start)
        feats = np.empty((B, C, R, d))
        labels = np.empty((B, C, R))
        zeta = np.empty((B, C, R)) if noisy else None
        picks = np.empty((B, C), dtype=np.int64)
        for b, rng in enumerate(streams):
            s = problem.draw(rng, (C, R))
            feats[b], labels[b] = s.features, s.labels
            if noisy:
                zeta[b] = noise.draw_zeta(rng, (C, R))
            picks[b] = rng.integers(R, C)

        for c in range(C):
            k = start + c
            if k == steps[rec]:
                iterates[:, rec] = w
                avg_iterates[:, rec] = wsum / k if k > 0 else w
                rec += 1
            a = feats[:, c]
            resid = np.einsum("brd,bd->br", a, w) - labels[:, c]
            exact = resid * resid
            if greedy:
                approx = exact
                if noisy:
                    approx = exact * np.exp(np.asarray(mu_fn(w))[:, None] + noise.sigma * zeta[:, c])
                idx = np.argmax(approx, axis=1)
            else:
                idx = picks[:, c]
            if record_selection:
                selected[:, k] = exact[rows, idx]
                draw_mean[:, k] = exact.mean(axis=1)
            g = (2.0 * resid[rows, idx])[:, None] * a[rows, idx]
            wsum += w
            w = w - eta * g
            norms = np.linalg.norm(w, axis=1)
            if not np.all(norms <= limit):
                bad = int(np.argmax(~(norms <= limit)))
                raise DivergenceError(k + 1, float(norms[bad]))

    iterates[:, rec] = w
    avg_iterates[:, rec] = wsum / K
    return _BatchResult(steps, iterates, avg_iterates, selected, draw_mean)


def _check_run_args(problem: ProblemInstance, method: str, R: int, schedule: StepSchedule, K: int, w0):
    if problem.kind not in LEAST_SQUARES:
        raise ValueError("optimizer runs need a least-squares problem (finite smoothness constant)")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if R < 1:
        raise ValueError("R must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    schedule.validate(problem.L)
    return as_weights(w0, problem.dim)


def run(
    problem: ProblemInstance,
    method: str,
    R: int,
    noise: NoiseModel,
    schedule: StepSchedule,
    K: int,
    w0,
    rng: RngStream,
    record_every: Optional[int] = None,
    record_selection: bool = False,
) -> Trajectory:
    """K steps of SGD (uniform pick) or GSGD (largest approximate loss)."""
    w0 = _check_run_args(problem, method, R, schedule, K, w0)
    record_every = record_every or default_record_every(K)
    res = _run_batch(problem, method, R, noise, schedule.eta, K, w0, [rng], record_every, record_selection)
    return Trajectory(
        steps=res.steps,
        iterates=res.iterates[0],
        population_losses=problem.population_loss(res.iterates[0]),
        averaged_losses=problem.population_loss(res.avg_iterates[0]),
        averaged_iterates=res.avg_iterates[0],
        gradient_evals=K,
        samples_inspected=K * R,
        seed=rng.seed,
        method=method,
        R=R,
        selected_losses=None if res.selected is None else res.selected[0],
        draw_mean_losses=None if res.draw_mean is None else res.draw_mean[0],
    )


def averaged_iterate(trajectory: Trajectory, k: int) -> np.ndarray:
    """(1/k) * sum_{i<k} w_i, computed from the recorded iterates.

    Needs every iterate up to k, i.e. a run recorded with ``record_every=1``;
    for strided runs use ``trajectory.averaged_iterates`` at a recorded step.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > trajectory.K:
        raise ValueError(f"k = {k} exceeds the {trajectory.K} recorded steps")
    steps = trajectory.steps
    if not np.array_equal(steps[: k + 1], np.arange(k + 1)):
        pos = np.searchsorted(steps, k)
        if pos < len(steps) and steps[pos] == k:
            return trajectory.averaged_iterates[pos].copy()
        raise ValueError("trajectory was recorded with a stride; k must be a recorded step")
    return trajectory.iterates[:k].mean(axis=0)


@dataclass
class RaceSummary:
    methods: tuple
    steps: np.ndarray
    losses: dict  # method slot -> (n_seeds, n_rec) averaged-iterate losses
    mean: dict
    se: dict
    gap: np.ndarray  # first minus second, per recorded step
    gap_se: np.ndarray
    n_seeds: int
    # last-iterate losses F(w_k), the quantity that plateaus under a constant step
    iterate_losses: dict = field(default_factory=dict)
    iterate_mean: dict = field(default_factory=dict)
    iterate_se: dict = field(default_factory=dict)

    def column_names(self) -> list[str]:
        a, b = self.slot_names()
        return ["k", f"mean_{a}", f"se_{a}", f"mean_{b}", f"se_{b}", "gap", "se_gap"]

    def slot_names(self) -> tuple[str, str]:
        a, b = self.methods
        return (a, b) if a != b else (a, f"{b}_2")

    def rows(self):
        a, b = self.slot_names()
        for i, k in enumerate(self.steps):
            yield (int(k), float(self.mean[a][i]), float(self.se[a][i]),
                   float(self.mean[b][i]), float(self.se[b][i]),
                   float(self.gap[i]), float(self.gap_se[i]))

    def at(self, k: int) -> int:
        pos = int(np.searchsorted(self.steps, k))
        if pos >= len(self.steps) or self.steps[pos] != k:
            raise KeyError(f"step {k} was not recorded")
        return pos


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(n)


def race(
    problem: ProblemInstance,
    R: int,
    noise: NoiseModel,
    schedule: StepSchedule,
    K: int,
    w0,
    n_seeds: int,
    rng: RngStream,
    methods: tuple = ("sgd", "gsgd"),
    record_every: Optional[int] = None,
    workers: int = 1,
) -> RaceSummary:
    """Paired comparison of averaged-iterate loss across ``n_seeds`` replicates.

    Replicate i of every method uses substream ``replicate/i`` of ``rng``
    (common random numbers). ``gap`` is first method minus second.
    ``workers`` > 1 splits replicates across threads; results do not change.
    """
    if n_seeds < 2:
        raise ValueError("a race needs n_seeds >= 2")
    if len(methods) != 2:
        raise ValueError("a race compares exactly two methods")
    for m in methods:
        w0 = _check_run_args(problem, m, R, schedule, K, w0)
    record_every = record_every or default_record_every(K)
    losses, it_losses = {}, {}
    cache = {}
    slots = methods if methods[0] != methods[1] else (methods[0], f"{methods[1]}_2")
    for slot, m in zip(slots, methods):
        if m not in cache:
            chunks = [c for c in np.array_split(np.arange(n_seeds), max(1, workers)) if c.size]
            streams = rng.substreams(n_seeds)

            def job(idx, m=m):
                return _run_batch(problem, m, R, noise, schedule.eta, K, w0, [streams[i] for i in idx], record_every)

            if len(chunks) == 1:
                parts = [job(chunks[0])]
            else:
                with ThreadPoolExecutor(len(chunks)) as pool:
                    parts = list(pool.map(job, chunks))
            avg = np.concatenate([p.avg_iterates for p in parts])
            its = np.concatenate([p.iterates for p in parts])
            cache[m] = (problem.population_loss(avg), problem.population_loss(its))
        losses[slot], it_losses[slot] = cache[m]
    mean, se, it_mean, it_se = {}, {}, {}, {}
    for slot in slots:
        mean[slot], se[slot] = _mean_se(losses[slot])
        it_mean[slot], it_se[slot] = _mean_se(it_losses[slot])
    diff = losses[slots[0]] - losses[slots[1]]
    gap, gap_se = _mean_se(diff)
    return RaceSummary(
        tuple(methods), record_steps(K, record_every), losses, mean, se, gap, gap_se, n_seeds,
        it_losses, it_mean, it_se,
    )
