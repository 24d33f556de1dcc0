"""The stochastic harmonic measure flow: steps, trajectories, ensembles.

Each trajectory owns an independent counter-based uniform stream: trajectory
i of an ensemble is seeded with base_seed XOR splitmix64(i) and draws from
numpy's Philox generator, so runs are reproducible bit-for-bit regardless of
execution order or worker count. Attachment angles come from the measure's
inverse CDF; the state recursion runs in a jitted kernel over chunks, and
snapshots, martingale sums, sup-errors against a reference path, and first
exits from an interval are extracted per chunk.

The martingale split tracks S_n = sum of (one-step displacement minus the
exact one-step drift) and the drift sum separately, so the decomposition
identity X_n = x + S_n + drift_sum holds to accumulated roundoff and is a
real check, not an algebraic tautology.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ._kernels import advance_history
from .field import DriftField
from .measure import AttachmentMeasure
from .particle import SlitParticle, gamma_tilde

__all__ = [
    "FlowTrajectory",
    "FlowEnsemble",
    "EnsembleConfig",
    "flow_step",
    "run_flow",
    "run_ensemble",
    "decompose_martingale",
    "trajectory_seed",
    "splitmix64",
    "uniform_stream",
    "attachment_angles",
]

_MASK64 = (1 << 64) - 1
DEFAULT_CHUNK = 1 << 16


def splitmix64(n: int) -> int:
    """SplitMix64 finalizer; decorrelates consecutive integers into seeds."""
    z = (n + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def trajectory_seed(base_seed: int, index: int) -> int:
    """Stream-split seed for trajectory `index` of an ensemble."""
    return (int(base_seed) & _MASK64) ^ splitmix64(int(index))


def uniform_stream(seed: int) -> np.random.Generator:
    """Counter-based uniform stream; identical draws on every platform."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))


def attachment_angles(m: AttachmentMeasure, seed: int, n: int) -> np.ndarray:
    """The first n attachment angles a flow run with this seed consumes."""
    return m.fast_ppf(uniform_stream(seed).random(n))


def flow_step(p: SlitParticle, x_prev: float, theta: float) -> float:
    """One step of the flow: x + gamma_tilde(x - theta)."""
    return float(x_prev) + gamma_tilde(p, float(x_prev) - float(theta))


@dataclass(frozen=True)
class FlowTrajectory:
    """One seeded realisation with whatever probes were requested."""

    start: float
    capacity: float
    seed: int
    snaps_n: np.ndarray
    snaps_x: np.ndarray
    final_n: int
    final_x: float
    track_martingale: bool
    snaps_s: Optional[np.ndarray] = None
    snaps_drift: Optional[np.ndarray] = None
    sup_error: Optional[float] = None
    s_sup: Optional[float] = None
    exit_interval: Optional[tuple[float, float]] = None
    exit_n: Optional[int] = None
    exit_x: Optional[float] = None
    exit_side: Optional[int] = None

    @property
    def snapshots(self) -> list[tuple[int, float]]:
        return list(zip(self.snaps_n.tolist(), self.snaps_x.tolist()))

    @property
    def martingale_snapshots(self) -> Optional[list[tuple[int, float]]]:
        if self.snaps_s is None:
            return None
        return list(zip(self.snaps_n.tolist(), self.snaps_s.tolist()))

    def value_at(self, n: int) -> float:
        idx = np.searchsorted(self.snaps_n, n)
        if idx >= len(self.snaps_n) or self.snaps_n[idx] != n:
            raise KeyError(f"no snapshot recorded at step {n}")
        return float(self.snaps_x[idx])


def run_flow(
    p: SlitParticle,
    m: AttachmentMeasure,
    x0: float,
    n_steps: int,
    seed: int,
    snapshot_schedule: Optional[Sequence[int]] = None,
    track_martingale: bool = False,
    drift_field: Optional[DriftField] = None,
    reference_fn: Optional[Callable[[int, int], np.ndarray]] = None,
    exit_interval: Optional[tuple[float, float]] = None,
    stop_on_exit: bool = False,
    track_s_sup: bool = False,
    chunk: int = DEFAULT_CHUNK,
) -> FlowTrajectory:
    """Run one seeded trajectory for n_steps.

    snapshot_schedule lists step indices to record (0 and n_steps are always
    included). With track_martingale the exact one-step drift is taken from
    `drift_field` (interpolated on a verified grid). reference_fn(n0, n1)
    supplies reference values for steps [n0, n1) and activates sup-error
    tracking. exit_interval (lo, hi) records the first step outside it.
    """
    n_steps = int(n_steps)
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if snapshot_schedule is None:
        schedule = np.unique(np.array([0, n_steps], dtype=np.int64))
    else:
        schedule = np.asarray(list(snapshot_schedule), dtype=np.int64)
        schedule = np.union1d(schedule, [0, n_steps])
    if schedule[0] < 0 or schedule[-1] > n_steps:
        raise ValueError("snapshot schedule must lie within [0, n_steps]")

    beta_of = None
    if track_martingale:
        if drift_field is None:
            raise ValueError("track_martingale needs a drift_field for the one-step drift")
        beta_of = drift_field.beta_nu_table(p)

    ec = 1.0 + p.beta
    y0 = gamma_tilde(p, 0.0)
    stream = uniform_stream(seed)

    snaps_x = np.empty(schedule.shape, dtype=float)
    snaps_s = np.empty(schedule.shape, dtype=float) if track_martingale else None
    snaps_drift = np.empty(schedule.shape, dtype=float) if track_martingale else None
    ptr = 0
    while ptr < len(schedule) and schedule[ptr] == 0:
        snaps_x[ptr] = x0
        if track_martingale:
            snaps_s[ptr] = 0.0
            snaps_drift[ptr] = 0.0
        ptr += 1

    x = float(x0)
    s_total = 0.0
    drift_total = 0.0
    s_sup = 0.0
    sup_error = 0.0 if reference_fn is not None else None
    exit_n = exit_x = exit_side = None
    lo, hi = exit_interval if exit_interval is not None else (-np.inf, np.inf)

    hist = np.empty(min(chunk, max(n_steps, 1)), dtype=float)
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        thetas = m.fast_ppf(stream.random(k))
        x_prev_first = x
        x = advance_history(x, thetas, ec, p.beta, y0, hist[:k])
        block = hist[:k]

        if track_martingale or track_s_sup:
            prevs = np.empty(k)
            prevs[0] = x_prev_first
            prevs[1:] = block[:-1]
            beta_vals = beta_of(prevs)
            s_block = s_total + np.cumsum(block - prevs - beta_vals)
            drift_block = drift_total + np.cumsum(beta_vals)
            if track_s_sup:
                s_sup = max(s_sup, float(np.max(np.abs(s_block))))
            s_total = float(s_block[-1])
            drift_total = float(drift_block[-1])
        else:
            s_block = drift_block = None

        if reference_fn is not None:
            ref = reference_fn(done + 1, done + 1 + k)
            sup_error = max(sup_error, float(np.max(np.abs(block - ref))))

        if exit_interval is not None and exit_n is None:
            outside = (block < lo) | (block > hi)
            if np.any(outside):
                j = int(np.argmax(outside))
                exit_n = done + 1 + j
                exit_x = float(block[j])
                exit_side = 1 if block[j] > hi else -1
                if stop_on_exit:
                    while ptr < len(schedule):
                        at = schedule[ptr]  # truncate schedule at the exit
                        if at <= exit_n:
                            snaps_x[ptr] = block[min(at - done - 1, j)]
                            if track_martingale:
                                snaps_s[ptr] = s_block[min(at - done - 1, j)]
                                snaps_drift[ptr] = drift_block[min(at - done - 1, j)]
                            ptr += 1
                        else:
                            break
                    snaps_x = snaps_x[:ptr]
                    schedule = schedule[:ptr]
                    if track_martingale:
                        snaps_s = snaps_s[:ptr]
                        snaps_drift = snaps_drift[:ptr]
                    x = exit_x
                    done = exit_n
                    break

        hi_n = done + k
        while ptr < len(schedule) and schedule[ptr] <= hi_n:
            at = int(schedule[ptr]) - done - 1
            snaps_x[ptr] = block[at]
            if track_martingale:
                snaps_s[ptr] = s_block[at]
                snaps_drift[ptr] = drift_block[at]
            ptr += 1
        done = hi_n

    return FlowTrajectory(
        start=float(x0),
        capacity=p.capacity,
        seed=int(seed),
        snaps_n=schedule[: len(snaps_x)].copy(),
        snaps_x=snaps_x,
        final_n=done,
        final_x=x,
        track_martingale=track_martingale,
        snaps_s=snaps_s,
        snaps_drift=snaps_drift,
        sup_error=sup_error,
        s_sup=s_sup if track_s_sup else None,
        exit_interval=exit_interval,
        exit_n=exit_n,
        exit_x=exit_x,
        exit_side=exit_side,
    )


@dataclass(frozen=True)
class EnsembleConfig:
    """Parameters for a batch of independent trajectories."""

    capacity: float
    measure: AttachmentMeasure
    x0: float
    t_max: float
    n_runs: int
    base_seed: int
    snapshot_times: Optional[Sequence[float]] = None
    track_martingale: bool = False
    exit_interval: Optional[tuple[float, float]] = None
    stop_on_exit: bool = False
    track_s_sup: bool = False
    workers: int = 1

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_max / self.capacity))

    def snapshot_steps(self) -> Optional[np.ndarray]:
        if self.snapshot_times is None:
            return None
        ts = np.asarray(list(self.snapshot_times), dtype=float)
        return np.unique(np.floor(ts / self.capacity).astype(np.int64))


@dataclass(frozen=True)
class FlowEnsemble:
    config: EnsembleConfig
    trajectories: list[FlowTrajectory]
    base_seed: int

    def snapshot_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(steps, values) with values shaped (runs, snapshots)."""
        ns = self.trajectories[0].snaps_n
        vals = np.stack([t.snaps_x for t in self.trajectories])
        return ns, vals

    def value_at_time(self, t: float) -> np.ndarray:
        n = int(math.floor(t / self.config.capacity))
        return np.array([traj.value_at(n) for traj in self.trajectories])


def run_ensemble(
    cfg: EnsembleConfig,
    drift_field: Optional[DriftField] = None,
    reference_fn: Optional[Callable[[int, int], np.ndarray]] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> FlowEnsemble:
    """Run cfg.n_runs independent trajectories; deterministic in any order."""
    p = SlitParticle.from_capacity(cfg.capacity)
    schedule = cfg.snapshot_steps()
    if cfg.track_martingale and drift_field is None:
        drift_field = DriftField(cfg.measure)
    if cfg.track_martingale:
        drift_field.beta_nu_table(p)  # build once; threads then share it

    def one(i: int) -> FlowTrajectory:
        traj = run_flow(
            p,
            cfg.measure,
            cfg.x0,
            cfg.n_steps,
            seed=trajectory_seed(cfg.base_seed, i),
            snapshot_schedule=schedule,
            track_martingale=cfg.track_martingale,
            drift_field=drift_field,
            reference_fn=reference_fn,
            exit_interval=cfg.exit_interval,
            stop_on_exit=cfg.stop_on_exit,
            track_s_sup=cfg.track_s_sup,
        )
        if progress is not None:
            progress(i, cfg.n_runs)
        return traj

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            trajectories = list(pool.map(one, range(cfg.n_runs)))
    else:
        trajectories = [one(i) for i in range(cfg.n_runs)]
    return FlowEnsemble(config=cfg, trajectories=trajectories, base_seed=cfg.base_seed)


def export_snapshots_csv(ensemble: FlowEnsemble, path) -> None:
    """Write all snapshot tables: run_id, n, t = n*c, X and optional S.

    Floats are rendered with shortest round-trip repr, so identical runs
    produce byte-identical files.
    """
    c = ensemble.config.capacity
    with open(path, "w", newline="") as fh:
        has_s = ensemble.config.track_martingale
        fh.write("run_id,n,t,X,S\n" if has_s else "run_id,n,t,X\n")
        for run_id, traj in enumerate(ensemble.trajectories):
            for i, n in enumerate(traj.snaps_n.tolist()):
                row = f"{run_id},{n},{n * c!r},{float(traj.snaps_x[i])!r}"
                if has_s:
                    row += f",{float(traj.snaps_s[i])!r}"
                fh.write(row + "\n")


def decompose_martingale(traj: FlowTrajectory) -> list[tuple[int, float, float]]:
    """Aligned (n, S_n, drift_sum_n) triples for a martingale-tracked run."""
    if not traj.track_martingale or traj.snaps_s is None:
        raise ValueError("martingale tracking was off for this trajectory")
    return list(
        zip(traj.snaps_n.tolist(), traj.snaps_s.tolist(), traj.snaps_drift.tolist())
    )
