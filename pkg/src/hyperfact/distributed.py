"""Worker-per-mode alternating optimization.

Each mode's factor matrix has exactly one writer. A Gauss-Seidel sweep
updates modes in ascending order against the latest values of the others,
so backtracking makes the objective non-increasing round over round. A
Jacobi sweep hands every worker the same round-start snapshot and swaps
all results in at the round barrier; it may transiently raise the
objective but its mode updates run concurrently. Factor snapshots are the
only state crossing the barrier.
"""

import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, DivergenceError
from .factors import FactorSet
from .objective import grad_mode, mode_loss, total_loss

logger = logging.getLogger(__name__)

GAUSS_SEIDEL = "gauss_seidel"
JACOBI = "jacobi"

BACKTRACK_SHRINK = 0.5
BACKTRACK_C1 = 1e-4
BACKTRACK_MAX_HALVINGS = 30
# warm-started line search may grow the accepted step back up between calls
STEP_GROWTH = 2.0


@dataclass(frozen=True)
class TrainPlan:
    """Hyperparameters of one training run."""

    rank: int
    lam: float = 1.0
    sweep: str = GAUSS_SEIDEL
    inner_steps: int = 5
    step_size: float = 0.1
    backtracking: bool = True
    max_rounds: int = 100
    rel_tol: float = 1e-6
    seed: int = 0
    reg_weights: tuple = None
    frozen_modes: tuple = ()
    jacobi_damping: float = 0.5
    workers: str = "process"  # jacobi executor: process | serial

    def __post_init__(self):
        if self.rank < 1:
            raise DataFormatError("rank must be >= 1")
        if self.sweep not in (GAUSS_SEIDEL, JACOBI):
            raise DataFormatError(f"unknown sweep {self.sweep!r}")
        if self.inner_steps < 1:
            raise DataFormatError("inner_steps must be >= 1")
        if self.step_size <= 0:
            raise DataFormatError("step size must be positive")
        if self.rel_tol <= 0:
            raise DataFormatError("rel_tol must be positive")
        if self.max_rounds < 1:
            raise DataFormatError("max_rounds must be >= 1")
        if self.lam < 0:
            raise DataFormatError("lambda must be non-negative")
        if not 0.0 < self.jacobi_damping <= 1.0:
            raise DataFormatError("jacobi_damping must be in (0, 1]")
        if self.workers not in ("process", "serial"):
            raise DataFormatError(f"unknown worker kind {self.workers!r}")


@dataclass(frozen=True)
class RoundLog:
    """What one synchronization round did."""

    round_index: int
    loss: object  # LossBreakdown
    grad_norms: tuple
    mode_times_ms: tuple
    round_time_ms: float
    stalled_modes: tuple = ()


def _mode_inner_steps(x, fs, graphs, plan, mode, step0):
    """Take plan.inner_steps (backtracking) gradient steps on one mode.

    Mutates fs.factors[mode]; other factors stay fixed. Returns the first
    step's gradient norm, the warm step for the next call, and whether the
    line search exhausted its halvings.
    """
    a = fs.factors[mode]
    step = step0
    grad_norm0 = 0.0
    stalled = False
    for s in range(plan.inner_steps):
        g = grad_mode(x, fs, graphs, plan.lam, mode, plan.reg_weights)
        gnorm2 = float(np.sum(g * g))
        if s == 0:
            grad_norm0 = float(np.sqrt(gnorm2))
        if gnorm2 == 0.0:
            break
        if not plan.backtracking:
            a = a - plan.step_size * g
            fs.factors[mode] = a
            continue
        f0 = mode_loss(x, fs, graphs, plan.lam, mode, plan.reg_weights)
        step = min(step * STEP_GROWTH, 1e6)
        accepted = False
        for _ in range(BACKTRACK_MAX_HALVINGS + 1):
            trial = a - step * g
            fs.factors[mode] = trial
            f1 = mode_loss(x, fs, graphs, plan.lam, mode, plan.reg_weights)
            if np.isfinite(f1) and f1 <= f0 - BACKTRACK_C1 * step * gnorm2:
                a = trial
                accepted = True
                break
            step *= BACKTRACK_SHRINK
        if not accepted:
            fs.factors[mode] = a  # leave the factor unchanged
            stalled = True
            break
    return grad_norm0, step, stalled


# --- jacobi worker plumbing -------------------------------------------------

_WORKER_CTX = None


def _init_worker(x, graphs, plan):
    global _WORKER_CTX
    _WORKER_CTX = (x, graphs, plan)


def _jacobi_task(args):
    mode, snapshot, step0 = args
    x, graphs, plan = _WORKER_CTX
    t0 = time.perf_counter()
    fs = FactorSet([a.copy() if m == mode else a for m, a in enumerate(snapshot)])
    grad_norm0, step, stalled = _mode_inner_steps(x, fs, graphs, plan, mode, step0)
    ms = (time.perf_counter() - t0) * 1e3
    return mode, fs.factors[mode], grad_norm0, step, stalled, ms


class _SweepState:
    """Carries the warm line-search steps and the jacobi pool across rounds."""

    def __init__(self, x, graphs, plan):
        self.steps = [plan.step_size / STEP_GROWTH] * x.order
        self.pool = None
        if plan.sweep == JACOBI and plan.workers == "process":
            method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
            self.pool = ProcessPoolExecutor(
                max_workers=max(1, min(x.order, (os.cpu_count() or 1) * 2)),
                mp_context=mp.get_context(method),
                initializer=_init_worker,
                initargs=(x, graphs, plan),
            )
        else:
            _init_worker(x, graphs, plan)

    def run_tasks(self, tasks):
        if self.pool is None:
            return [_jacobi_task(t) for t in tasks]
        return list(self.pool.map(_jacobi_task, tasks))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_round(x, fs, graphs, plan, round_index=0, state=None):
    """One synchronization round over all modes.

    Returns (updated FactorSet, RoundLog). Pass the state returned by
    _SweepState (as run_training does) to keep warm steps and the worker
    pool alive across rounds.
    """
    own_state = state is None
    if own_state:
        state = _SweepState(x, graphs, plan)
    k = x.order
    grad_norms = [0.0] * k
    mode_ms = [0.0] * k
    stalled = []
    t_round = time.perf_counter()
    try:
        if plan.sweep == GAUSS_SEIDEL:
            work = fs.copy()
            for mode in range(k):
                if mode in plan.frozen_modes:
                    continue
                t0 = time.perf_counter()
                gn, step, st = _mode_inner_steps(x, work, graphs, plan, mode, state.steps[mode])
                mode_ms[mode] = (time.perf_counter() - t0) * 1e3
                grad_norms[mode] = gn
                state.steps[mode] = step
                if st:
                    stalled.append(mode)
        else:
            snapshot = [a.copy() for a in fs.factors]
            tasks = [(m, snapshot, state.steps[m]) for m in range(k)
                     if m not in plan.frozen_modes]
            work = fs.copy()
            # barrier: swap in every worker's damped result at once; the
            # under-relaxation keeps simultaneous per-mode moves from
            # oscillating around a joint optimum
            alpha = plan.jacobi_damping
            for mode, a_new, gn, step, st, ms in state.run_tasks(tasks):
                work.factors[mode] = snapshot[mode] + alpha * (a_new - snapshot[mode])
                grad_norms[mode] = gn
                state.steps[mode] = step
                mode_ms[mode] = ms
                if st:
                    stalled.append(mode)
    finally:
        if own_state:
            state.close()
    loss = total_loss(x, work, graphs, plan.lam, plan.reg_weights)
    round_ms = (time.perf_counter() - t_round) * 1e3
    if stalled:
        logger.warning("round %d: line search stalled on modes %s", round_index, stalled)
    return work, RoundLog(
        round_index=round_index,
        loss=loss,
        grad_norms=tuple(grad_norms),
        mode_times_ms=tuple(mode_ms),
        round_time_ms=round_ms,
        stalled_modes=tuple(stalled),
    )


def run_training(x, fs, graphs, plan):
    """Round loop with relative-change stopping.

    Stops when |loss_t - loss_{t-1}| / loss_{t-1} < plan.rel_tol or after
    plan.max_rounds rounds. Returns the final factors and all round logs.
    """
    logs = []
    prev = total_loss(x, fs, graphs, plan.lam, plan.reg_weights).total
    with _SweepState(x, graphs, plan) as state:
        for r in range(plan.max_rounds):
            fs, log = run_round(x, fs, graphs, plan, round_index=r, state=state)
            logs.append(log)
            logger.info("round %d: loss %.6e", r, log.loss.total)
            cur = log.loss.total
            if abs(prev - cur) / max(abs(prev), 1e-300) < plan.rel_tol:
                break
            prev = cur
    return fs, logs


def convergence_header(k):
    cols = ["round", "total_loss", "recon"]
    cols += [f"reg_{m}" for m in range(k)]
    cols += [f"grad_norm_{m}" for m in range(k)]
    cols += [f"time_ms_mode_{m}" for m in range(k)]
    cols.append("time_ms_round")
    return ",".join(cols)


def convergence_rows(logs):
    rows = []
    for log in logs:
        vals = [str(log.round_index), repr(log.loss.total), repr(log.loss.recon)]
        vals += [repr(t) for t in log.loss.reg_terms]
        vals += [repr(g) for g in log.grad_norms]
        vals += [f"{t:.3f}" for t in log.mode_times_ms]
        vals.append(f"{log.round_time_ms:.3f}")
        rows.append(",".join(vals))
    return rows


def write_convergence_csv(logs, k, path):
    with open(path, "w") as fh:
        fh.write(convergence_header(k) + "\n")
        for row in convergence_rows(logs):
            fh.write(row + "\n")


def benchmark_sweeps(x, fs0, graphs, plan, sweeps, repeats):
    """Per-round wall times for each sweep kind, from identical starts.

    Returns a list of (sweep, repeat, RoundLog) tuples; every repeat restarts
    from a copy of fs0 and runs plan.max_rounds rounds (no early stop).
    """
    rows = []
    for sweep in sweeps:
        rplan = TrainPlan(**{**_plan_asdict(plan), "sweep": sweep})
        for rep in range(repeats):
            fs = fs0.copy()
            with _SweepState(x, graphs, rplan) as state:
                for r in range(rplan.max_rounds):
                    fs, log = run_round(x, fs, graphs, rplan, round_index=r, state=state)
                    rows.append((sweep, rep, log))
    return rows


def _plan_asdict(plan):
    return {f: getattr(plan, f) for f in plan.__dataclass_fields__}
