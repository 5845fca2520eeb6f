"""Command implementations behind the CLI: run checks, write CSV/JSON reports.

Every command derives its randomness from ``RngStream(seed)`` through named
substreams, so outputs depend only on (config, seed). Timestamps appear only
in ``manifest.json``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import (
    TauRatioCheck, CrossoverCheck, Delta2Check, ExperimentConfig, HMaxCheck, NoiseBoundCheck, PjCheck,
    PjConfig, RaceConfig, RhoGaussianCheck, SandwichCheck, SiftRunConfig, VerifyConfig, start_point,
)
from .earlyexit import (
    PlantedTask, baseline_train, beta_j, identity_init_net, linear_net_with_beta, pj_monte_carlo,
    random_linear_net, sift_train,
)
from .errors import OutOfScopeError
from .numerics import RngStream
from .optimizers import StepSchedule, race, run
from .theory import (
    CheckReport, HypothesisWarning, bound_sandwich, cor63_check, crossover_sweep, delta_closed_form_check,
    lemma_c1_check, pj_exact, pj_lower_bound, pj_orthant, verify_noise_bound, verify_rho_gaussian,
)

THREADS_ENV = "GSGD_LAB_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------------------
# serialisation


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    return value


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


CHECK_HEADER = ("index", "check", "params", "value", "bound", "std_error", "status", "detail")


def check_rows(reports: Sequence[CheckReport]):
    for i, r in enumerate(reports):
        detail = json.dumps(_jsonable(r.detail), sort_keys=True, separators=(",", ":"))
        yield (i, r.check, r.params_text(), r.value, r.bound, r.std_error, r.status, detail)


@dataclass
class CommandResult:
    reports: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def exit_code(self, strict: bool = False) -> int:
        bad = {"FAIL", "WARN"} if strict else {"FAIL"}
        return 1 if any(r.status in bad for r in self.reports) else 0


def _finish(cfg: ExperimentConfig, out: Path, result: CommandResult, strict: bool) -> CommandResult:
    result.outputs.append(write_csv(out / "checks.csv", CHECK_HEADER, check_rows(result.reports)))
    counts = {s: sum(r.status == s for r in result.reports) for s in ("PASS", "WARN", "FAIL")}
    summary = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "counts": counts,
        "checks": [
            {"check": r.check, "params": r.params, "value": r.value, "bound": r.bound,
             "std_error": r.std_error, "status": r.status, "detail": r.detail}
            for r in result.reports
        ],
    }
    result.outputs.append(write_json(out / "summary.json", summary))
    manifest = {
        "artifact_version": __version__,
        "command": cfg.command,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "config": cfg.to_json(),
        "strict": strict,
        "exit_status": result.exit_code(strict),
        "checks": [{"check": r.check, "params": r.params_text(), "status": r.status} for r in result.reports],
        "outputs": sorted(str(p.relative_to(out)) for p in result.outputs),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(out / "manifest.json", manifest)
    return result


# ---------------------------------------------------------------------------
# race


def race_checks(summary, cfg: RaceConfig) -> list[CheckReport]:
    """Early GSGD advantage and the late plateau caveat; only for an sgd/gsgd pair."""
    if tuple(cfg.methods) != ("sgd", "gsgd"):
        return []
    early = [i for i, k in enumerate(summary.steps) if 1 <= k <= cfg.early_K_max]
    z = [summary.gap[i] / summary.gap_se[i] if summary.gap_se[i] > 0 else 0.0 for i in early]
    best = early[int(np.argmax(z))]
    k_best = int(summary.steps[best])
    reports = [CheckReport(
        "early-advantage", dict(K_max=cfg.early_K_max, R=cfg.R, n_seeds=cfg.n_seeds),
        float(summary.gap[best]), cfg.k_se * float(summary.gap_se[best]), float(summary.gap_se[best]),
        "PASS" if max(z) > cfg.k_se else "FAIL",
        dict(k=k_best, sgd=float(summary.mean["sgd"][best]), gsgd=float(summary.mean["gsgd"][best])),
    )]
    last = len(summary.steps) - 1
    diff = summary.iterate_losses["gsgd"][:, last] - summary.iterate_losses["sgd"][:, last]
    se = float(diff.std(ddof=1) / math.sqrt(len(diff)))
    gap = float(diff.mean())
    reports.append(CheckReport(
        "plateau", dict(K=cfg.K, R=cfg.R, n_seeds=cfg.n_seeds), gap, -cfg.k_se * se, se,
        "PASS" if gap >= -cfg.k_se * se else "FAIL",
        dict(sgd=float(summary.iterate_mean["sgd"][last]), gsgd=float(summary.iterate_mean["gsgd"][last])),
    ))
    return reports


def cmd_race(cfg: ExperimentConfig, out: Path, strict: bool = False) -> CommandResult:
    rc: RaceConfig = cfg.body
    problem = rc.problem.build()
    noise = rc.noise.build()
    schedule = StepSchedule(rc.step_size())
    w0 = start_point(problem, rc.w0, rc.start_distance)
    rng = RngStream(cfg.seed).substream("race")
    summary = race(
        problem, rc.R, noise, schedule, rc.K, w0, rc.n_seeds, rng,
        methods=tuple(rc.methods), record_every=rc.record_every, workers=thread_count(),
    )
    result = CommandResult()
    result.outputs.append(write_csv(out / "race.csv", summary.column_names(), summary.rows()))
    a, b = summary.slot_names()
    last_rows = (
        (int(k), summary.iterate_mean[a][i], summary.iterate_se[a][i], summary.iterate_mean[b][i], summary.iterate_se[b][i])
        for i, k in enumerate(summary.steps)
    )
    result.outputs.append(write_csv(
        out / "race_last_iterate.csv", ("k", f"mean_{a}", f"se_{a}", f"mean_{b}", f"se_{b}"), last_rows
    ))
    # replicate 0 of each method, recomputed on the same substream as in the race
    for slot, method in zip((a, b), rc.methods):
        traj = run(problem, method, rc.R, noise, schedule, rc.K, w0, rng.substreams(1)[0], rc.record_every)
        header = ("step", "F_iterate", "F_averaged", "gradient_evals", "samples_inspected")
        result.outputs.append(write_csv(out / f"run_{slot}_replicate0.csv", header, traj.rows()))
    result.reports = race_checks(summary, rc)
    return _finish(cfg, out, result, strict)


# ---------------------------------------------------------------------------
# verify


def _probe_points(problem, distances):
    u = np.ones(problem.dim) / math.sqrt(problem.dim)
    return [problem.w_star + r * u for r in distances]


def pj_triangle(beta: float, n_mc: int, d: int, rng: RngStream, tol: float = 1e-6, k_se: float = 3.0) -> CheckReport:
    """Quadrature, orthant closed form and MC on a constructed net agree; the lower bound sits below."""
    quad = pj_exact(beta)
    orth = pj_orthant(beta)
    lb = pj_lower_bound(beta)
    net = linear_net_with_beta(beta, d, rng.substream("net"))
    mc = pj_monte_carlo(net, 1, n_mc, rng.substream("mc"))
    mc_tol = max(tol, k_se * mc.std_error)
    ok = abs(quad - orth) <= tol and abs(quad - mc.mean) <= mc_tol and abs(orth - mc.mean) <= mc_tol and lb <= quad
    detail = dict(orthant=orth, mc=mc.mean, net_beta=beta_j(net, 1), lower_bound=lb, quad_minus_orthant=quad - orth)
    return CheckReport("pj-triangle", dict(beta=beta, n_mc=n_mc, d=d), quad, lb, mc.std_error,
                       "PASS" if ok else "FAIL", detail)


def run_check(kind: str, check, rng: RngStream, workers: int = 1) -> list[CheckReport]:
    if isinstance(check, HMaxCheck):
        return [lemma_c1_check(s) for s in check.sigmas]
    if isinstance(check, NoiseBoundCheck):
        problem = check.problem.build()
        reports = []
        for wi, w in enumerate(_probe_points(problem, check.probe_distances)):
            for sigma in check.sigmas:
                for zeta in check.zetas:
                    sub = rng.substream(f"w{wi}/sigma={sigma!r}/zeta={zeta}")
                    rep = verify_noise_bound(problem, w, sigma, zeta, check.n, sub, check.k_se)
                    rep.params["probe"] = wi
                    reports.append(rep)
        return reports
    if isinstance(check, RhoGaussianCheck):
        return [
            verify_rho_gaussian(eps, delta, R, check.n, rng.substream(f"R={R}/eps={eps!r}/delta={delta!r}"), check.k_se)
            for R in check.Rs for eps, delta in check.cases
        ]
    if isinstance(check, Delta2Check):
        return [delta_closed_form_check(check.problem.build(), check.n, rng, check.k_se)]
    if isinstance(check, TauRatioCheck):
        return cor63_check(check.taus)
    if isinstance(check, PjCheck):
        return [pj_triangle(b, check.n_mc, check.d, rng.substream(f"beta={b!r}"), check.tol, check.k_se)
                for b in check.betas]
    if isinstance(check, CrossoverCheck):
        return crossover_sweep(check.n_points, rng)
    if isinstance(check, SandwichCheck):
        problem = check.problem.build()
        w0 = start_point(problem, None, check.start_distance)
        res = bound_sandwich(
            problem, check.R, check.step_size(), check.K_values, w0, check.n_seeds, rng,
            n_mc=check.n_mc, k_se=check.k_se, workers=workers,
        )
        return res.reports
    raise ValueError(f"unknown check {kind!r}")


def cmd_verify(cfg: ExperimentConfig, out: Path, strict: bool = False) -> CommandResult:
    vc: VerifyConfig = cfg.body
    root = RngStream(cfg.seed).substream("verify")
    workers = thread_count()
    result = CommandResult()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HypothesisWarning)
        for i, (kind, check) in enumerate(vc.checks):
            result.reports.extend(run_check(kind, check, root.substream(f"{i}/{kind}"), workers))
    return _finish(cfg, out, result, strict)


# ---------------------------------------------------------------------------
# pj


PJ_HEADER = ("j", "beta_target", "beta_j", "pj_mc", "pj_se", "pj_quadrature", "pj_orthant", "pj_lower_bound")


def cmd_pj(cfg: ExperimentConfig, out: Path, strict: bool = False) -> CommandResult:
    pc: PjConfig = cfg.body
    root = RngStream(cfg.seed).substream("pj")
    rows, reports = [], []
    if pc.mode == "beta-grid":
        for b in pc.betas:
            rep = pj_triangle(b, pc.n_mc, pc.d, root.substream(f"beta={b!r}"), pc.tol, pc.k_se)
            reports.append(rep)
            rows.append((1, b, rep.detail["net_beta"], rep.detail["mc"], rep.std_error, rep.value,
                         rep.detail["orthant"], rep.bound))
        order = np.argsort(pc.betas, kind="stable")
        quads = np.array([r[5] for r in rows])[order]
        mono = bool(np.all(np.diff(quads) >= 0))
        reports.append(CheckReport("pj-monotone", dict(n=len(rows)), float(np.min(np.diff(quads))) if len(rows) > 1 else 0.0,
                                   0.0, 0.0, "PASS" if mono else "FAIL"))
    else:
        net = random_linear_net(pc.d, pc.depth, root.substream("net"))
        for j in range(1, pc.depth + 1):
            b = beta_j(net, j)
            mc = pj_monte_carlo(net, j, pc.n_mc, root.substream(f"mc/{j}"))
            try:
                quad, orth, lb = pj_exact(b), pj_orthant(b), pj_lower_bound(b)
            except OutOfScopeError:
                rows.append((j, math.nan, b, mc.mean, mc.std_error, math.nan, math.nan, math.nan))
                reports.append(CheckReport("pj-net", dict(j=j, beta=b), mc.mean, math.nan, mc.std_error, "WARN",
                                           dict(reason="beta_j < 0 is outside the theorem's scope")))
                continue
            rows.append((j, math.nan, b, mc.mean, mc.std_error, quad, orth, lb))
            ok = abs(mc.mean - quad) <= max(pc.tol, pc.k_se * mc.std_error) and abs(quad - orth) <= pc.tol and lb <= quad
            reports.append(CheckReport("pj-net", dict(j=j, beta=b), mc.mean, quad, mc.std_error,
                                       "PASS" if ok else "FAIL", dict(orthant=orth, lower_bound=lb)))
    result = CommandResult(reports)
    result.outputs.append(write_csv(out / "pj.csv", PJ_HEADER, rows))
    return _finish(cfg, out, result, strict)


# ---------------------------------------------------------------------------
# sift


TRAINLOG_HEADER = ("step", "eval_loss", "backprop_samples", "scored_samples")


def sift_seed_setup(sc: SiftRunConfig, root: RngStream, i: int):
    s = root.substream(f"seed/{i}")
    task = PlantedTask(sc.d, s.substream("task"), sc.n_eval)
    net = identity_init_net(sc.d, sc.depth, s.substream("init"), sc.init_jitter, sc.init_head_scale)
    # a fresh copy of the training stream per run, so every run sees the same batches
    return task, net, lambda: s.substream("train")


def _same_log(a, b) -> bool:
    return (np.array_equal(a.eval_loss, b.eval_loss) and np.array_equal(a.backprop_samples, b.backprop_samples)
            and all(np.array_equal(x, y) for x, y in zip(a.net.layers, b.net.layers))
            and np.array_equal(a.net.head, b.net.head))


def cmd_sift(cfg: ExperimentConfig, out: Path, strict: bool = False) -> CommandResult:
    from dataclasses import replace

    sc: SiftRunConfig = cfg.body
    scfg = sc.sift_config()
    root = RngStream(cfg.seed).substream("sift")
    result = CommandResult()
    costs = []
    for i in range(sc.n_seeds):
        task, net, train = sift_seed_setup(sc, root, i)
        logs = {"sift": sift_train(task, net, scfg, train()), "baseline": baseline_train(task, net, scfg, train())}
        for name, log in logs.items():
            result.outputs.append(write_csv(out / "trainlogs" / f"seed{i:03d}_{name}.csv", TRAINLOG_HEADER, log.rows()))
        costs.append((i, logs["sift"].backprop_to_reach(sc.target_loss), logs["baseline"].backprop_to_reach(sc.target_loss)))
        if i == 0:
            keep1 = sift_train(task, net, replace(scfg, keep_fraction=1.0), train())
            full_warm = sift_train(task, net, replace(scfg, warmup_steps=scfg.total_steps), train())
            for name, log in (("keep1-identity", keep1), ("warmup-identity", full_warm)):
                same = _same_log(log, logs["baseline"])
                result.reports.append(CheckReport(name, dict(seed_index=0), float(same), 1.0, 0.0,
                                                  "PASS" if same else "FAIL"))
    rows = [(i, a, b, b - a) for i, a, b in costs]
    result.outputs.append(write_csv(out / "sift_summary.csv",
                                    ("seed_index", "sift_backprop", "baseline_backprop", "saving"), rows))
    saving = np.array([r[3] for r in rows], dtype=float)
    finite = bool(np.all(np.isfinite(saving)))
    mean = float(saving.mean()) if finite else math.nan
    se = float(saving.std(ddof=1) / math.sqrt(len(saving))) if finite else math.nan
    ok = finite and mean > sc.k_se * se
    result.reports.insert(0, CheckReport(
        "sift-advantage", dict(target_loss=sc.target_loss, n_seeds=sc.n_seeds, keep_fraction=sc.keep_fraction),
        mean, sc.k_se * se if finite else math.nan, se, "PASS" if ok else "FAIL",
        dict(all_reached_target=finite,
             sift_mean=float(np.mean([r[1] for r in rows])), baseline_mean=float(np.mean([r[2] for r in rows]))),
    ))
    return _finish(cfg, out, result, strict)


COMMANDS = {"race": cmd_race, "verify": cmd_verify, "pj": cmd_pj, "sift": cmd_sift}


def run_command(cfg: ExperimentConfig, out: Path, strict: bool = False) -> CommandResult:
    return COMMANDS[cfg.command](cfg, Path(out), strict)
