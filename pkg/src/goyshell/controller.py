"""Experiment orchestration: reference spin-up, zero-dissipation
ablation, and the online training loop, with run records and
checkpoint/resume.

The train loop repeats: integrate one segment under the current theta,
push snapshots into the sliding window, score the window-mean spectrum,
solve the adjoint for dL/dtheta over the segment, and apply one Adam
update (optionally guarded).  Everything is deterministic: repeated
runs, and interrupted-then-resumed runs, produce bit-identical record
streams.  Segment boundaries and snapshot times are anchored to the
grid t_anchor + n * dt rather than accumulated, so resuming never
drifts off the original schedule.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .adjoint import AdjointProblem, solve_adjoint
from .diagnostics import (
    FluxProfile,
    LossConfig,
    SnapshotWindow,
    Spectrum,
    loss,
    loss_grad_state,
    window_mean_spectrum,
)
from .integrator import (
    IntegratorConfig,
    SolveError,
    integrate_segment,
    modified_field,
    reference_field,
)
from .model import GoyParams, ShellState, initial_condition, wavenumbers
from .optimizer import AdamState, GuardPolicy, adam_step, apply_guard

__all__ = [
    "RunConfig",
    "TrainRecord",
    "TrainResult",
    "ReferenceResult",
    "AblationResult",
    "Checkpoint",
    "CheckpointError",
    "config_digest",
    "run_reference",
    "spin_up",
    "run_ablation",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "measure_tau0",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    """Settings for one experiment run (any mode)."""

    mode: str = "reference"
    t_end: float = 1500.0
    spin_up_t: float = 500.0
    snapshot_dt: float = 0.1
    window: int = 1000
    update_interval: float = 0.1
    theta0: float = 0.0
    alpha: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    guard: GuardPolicy = GuardPolicy()
    integrator: IntegratorConfig = IntegratorConfig()
    loss: LossConfig = LossConfig()
    failure_policy: str = "abort"
    max_rollbacks: int = 10
    checkpoint_every: int = 0
    discard_tau0: float = 10.0

    def __post_init__(self):
        if self.mode not in ("reference", "ablation", "train"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.failure_policy not in ("abort", "rollback"):
            raise ValueError(f"unknown failure policy {self.failure_policy!r}")
        if not self.snapshot_dt > 0:
            raise ValueError("snapshot_dt must be positive")
        if self.window < 1:
            raise ValueError("window capacity must be >= 1")
        if self.spin_up_t < 0 or self.t_end < 0:
            raise ValueError("times must be non-negative")
        self.snapshots_per_update()  # validates the multiple

    def snapshots_per_update(self) -> int:
        m = round(self.update_interval / self.snapshot_dt)
        if m < 1 or abs(m * self.snapshot_dt - self.update_interval) > 1e-9 * max(
            self.update_interval, 1.0
        ):
            raise ValueError(
                "update_interval must be an integer multiple of snapshot_dt "
                f"(got {self.update_interval} vs {self.snapshot_dt})"
            )
        return m

    def adam_state(self) -> AdamState:
        return AdamState(
            alpha=self.alpha, beta1=self.beta1, beta2=self.beta2, eps=self.eps_adam
        )


def config_digest(params: GoyParams, cfg: RunConfig) -> str:
    """Digest of everything that shapes the trajectory, so a resumed run
    can refuse mismatched physics or numerics.  Horizon and output
    settings are deliberately excluded: extending t_end is a legitimate
    continuation."""
    payload = {
        "params": _params_payload(params),
        "snapshot_dt": cfg.snapshot_dt,
        "window": cfg.window,
        "update_interval": cfg.update_interval,
        "alpha": cfg.alpha,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "eps_adam": cfg.eps_adam,
        "guard": [cfg.guard.mode.value, cfg.guard.theta_min, cfg.guard.theta_max],
        "integrator": [
            cfg.integrator.rtol,
            cfg.integrator.atol,
            cfg.integrator.dt_init,
            cfg.integrator.dt_min,
            cfg.integrator.max_steps,
            cfg.integrator.safety,
        ],
        "loss": [cfg.loss.target, cfg.loss.i_lo, cfg.loss.i_hi],
        "failure_policy": cfg.failure_policy,
    }
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def _canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _params_payload(p: GoyParams) -> dict:
    return {
        "epsilon": p.epsilon,
        "lam": p.lam,
        "nu": p.nu,
        "k0": p.k0,
        "n_shells": p.n_shells,
        "forcing_re": p.forcing.real,
        "forcing_im": p.forcing.imag,
        "forcing_shell": p.forcing_shell,
    }


def _params_from_payload(d: dict) -> GoyParams:
    return GoyParams(
        epsilon=d["epsilon"],
        lam=d["lam"],
        nu=d["nu"],
        k0=d["k0"],
        n_shells=d["n_shells"],
        forcing=complex(d["forcing_re"], d["forcing_im"]),
        forcing_shell=d["forcing_shell"],
    )


def _snapshot_targets(t_begin: float, t_final: float, dt: float) -> np.ndarray:
    n = int(math.floor((t_final - t_begin) / dt + 1e-9))
    return t_begin + dt * np.arange(1, n + 1)


def measure_tau0(
    times: np.ndarray, u1: np.ndarray, k1: float, discard_tau0: float
) -> tuple[float, float]:
    """Turnover time with a transient discard expressed in turnover units.

    The discard needs tau0 itself, so it is measured twice: once over
    the full trace to size the transient, then again on what remains.
    Returns (tau0, discard_time); nan when no samples survive.
    """
    times = np.asarray(times)
    u1 = np.asarray(u1)
    if times.size == 0:
        return math.nan, 0.0
    mean_full = float(np.mean(k1 * np.abs(u1)))
    if mean_full == 0.0:
        return math.inf, 0.0
    tau_full = 1.0 / mean_full
    discard_t = times[0] + discard_tau0 * tau_full
    keep = times > discard_t
    if not np.any(keep):
        return tau_full, 0.0
    mean_kept = float(np.mean(k1 * np.abs(u1[keep])))
    if mean_kept == 0.0:
        return math.inf, discard_t
    return 1.0 / mean_kept, discard_t


def _flux_rows(states: np.ndarray, p: GoyParams) -> np.ndarray:
    """Vectorized energy flux for an (n_snapshots, N) state matrix."""
    n_rows, n = states.shape
    k = wavenumbers(p)
    k_prev = k / p.lam
    up = np.zeros((n_rows, n + 4), dtype=np.complex128)
    up[:, 2:-2] = states
    inner = k * up[:, 4:] + (1.0 - p.epsilon) * k_prev * up[:, 1:-3]
    return -np.imag(up[:, 2:-2] * up[:, 3:-1] * inner)


@dataclass(frozen=True, eq=False)
class ReferenceResult:
    """Reference-run trajectory with its stationary-state diagnostics."""

    params: GoyParams
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    injection: np.ndarray
    tau0: float
    discard_t: float
    mean_spectrum: Spectrum | None
    mean_flux: FluxProfile | None
    final_state: ShellState
    window: SnapshotWindow


def run_reference(
    params: GoyParams, cfg: RunConfig, t_end: float | None = None
) -> ReferenceResult:
    """Integrate the reference system from the standard seed state,
    recording snapshots every cfg.snapshot_dt."""
    t_final = cfg.t_end if t_end is None else t_end
    state = initial_condition(params)
    fld = reference_field(params)
    targets = _snapshot_targets(state.t, t_final, cfg.snapshot_dt)
    rows = np.empty((targets.size, params.n_shells), dtype=np.complex128)
    for i, t_target in enumerate(targets):
        seg = integrate_segment(
            state, fld, cfg.integrator, t_target - state.t, dense=False
        )
        state = seg.final_state
        rows[i] = state.u
    return _reference_diagnostics(params, cfg, targets, rows, state)


def _reference_diagnostics(params, cfg, times, states, final_state):
    k = wavenumbers(params)
    abs2 = states.real ** 2 + states.imag ** 2
    energy = 0.5 * abs2.sum(axis=1)
    dissipation = params.nu * abs2 @ (k * k)
    injection = (np.conj(states[:, params.forcing_shell - 1]) * params.forcing).real
    tau0, discard_t = measure_tau0(times, states[:, 0], k[0], cfg.discard_tau0)
    keep = times > discard_t
    if np.any(keep):
        mean_spectrum = Spectrum(k=k, values=0.5 * abs2[keep].mean(axis=0) / k)
        mean_flux = FluxProfile(k=k, values=_flux_rows(states[keep], params).mean(axis=0))
    else:
        mean_spectrum = None
        mean_flux = None
    window = SnapshotWindow.from_snapshots(times, states, cfg.window, cfg.snapshot_dt)
    return ReferenceResult(
        params=params,
        times=times,
        states=states,
        energy=energy,
        dissipation=dissipation,
        injection=injection,
        tau0=tau0,
        discard_t=discard_t,
        mean_spectrum=mean_spectrum,
        mean_flux=mean_flux,
        final_state=final_state,
        window=window,
    )


def spin_up(params: GoyParams, cfg: RunConfig) -> tuple[ShellState, SnapshotWindow]:
    """Reference integration to t = spin_up_t; returns the end state and
    the trailing snapshot window that seeds training."""
    res = run_reference(params, cfg, t_end=cfg.spin_up_t)
    return res.final_state, res.window


@dataclass(frozen=True, eq=False)
class AblationResult:
    """Zero-dissipation run: trajectory plus accumulation diagnostics."""

    params: GoyParams
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    energy_slope: float
    mean_spectrum: Spectrum | None
    mean_flux: FluxProfile | None
    final_state: ShellState


def run_ablation(
    params: GoyParams, cfg: RunConfig, start: ShellState
) -> AblationResult:
    """Integrate with the dissipation model removed (theta = 0).

    Solver failures propagate: with no sink the energy grows without
    bound, so long horizons are expected to die eventually.
    """
    fld = modified_field(params, 0.0)
    state = start
    targets = _snapshot_targets(state.t, cfg.t_end, cfg.snapshot_dt)
    rows = np.empty((targets.size, params.n_shells), dtype=np.complex128)
    for i, t_target in enumerate(targets):
        seg = integrate_segment(
            state, fld, cfg.integrator, t_target - state.t, dense=False
        )
        state = seg.final_state
        rows[i] = state.u
    k = wavenumbers(params)
    abs2 = rows.real ** 2 + rows.imag ** 2
    energy = 0.5 * abs2.sum(axis=1)
    if targets.size >= 2:
        energy_slope = float(np.polyfit(targets, energy, 1)[0])
    else:
        energy_slope = math.nan
    if targets.size:
        mean_spectrum = Spectrum(k=k, values=0.5 * abs2.mean(axis=0) / k)
        mean_flux = FluxProfile(k=k, values=_flux_rows(rows, params).mean(axis=0))
    else:
        mean_spectrum = None
        mean_flux = None
    return AblationResult(
        params=params,
        times=targets,
        states=rows,
        energy=energy,
        energy_slope=energy_slope,
        mean_spectrum=mean_spectrum,
        mean_flux=mean_flux,
        final_state=state,
    )


@dataclass(frozen=True)
class TrainRecord:
    """One attempted parameter update."""

    update: int
    t: float
    theta_before: float
    theta_after: float
    loss: float | None
    dl_dtheta: float | None
    fwd_accepted: int
    fwd_rejected: int
    bwd_accepted: int
    bwd_rejected: int
    guard_flagged: bool
    error: str | None = None

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "update": self.update,
                "t": self.t,
                "theta_before": self.theta_before,
                "theta_after": self.theta_after,
                "loss": self.loss,
                "dl_dtheta": self.dl_dtheta,
                "fwd_accepted": self.fwd_accepted,
                "fwd_rejected": self.fwd_rejected,
                "bwd_accepted": self.bwd_accepted,
                "bwd_rejected": self.bwd_rejected,
                "guard_flagged": self.guard_flagged,
                "error": self.error,
            },
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class TrainFailure:
    kind: str
    t_fail: float
    update: int


@dataclass(frozen=True, eq=False)
class TrainResult:
    records: list[TrainRecord]
    checkpoint: "Checkpoint"
    failure: TrainFailure | None
    rollbacks: int

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta_after for r in self.records if r.error is None])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records if r.error is None])


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Complete resumable training state (or a plain simulation state)."""

    version: int
    params: GoyParams
    state: ShellState
    window_times: np.ndarray
    window_states: np.ndarray
    window_capacity: int
    window_spacing: float
    adam: AdamState
    theta: float
    update_index: int
    t_anchor: float
    digest: str

    def window(self) -> SnapshotWindow:
        return SnapshotWindow.from_snapshots(
            self.window_times,
            self.window_states,
            self.window_capacity,
            self.window_spacing,
        )


class CheckpointError(ValueError):
    """Checkpoint file is corrupted, incompatible, or mismatched."""


def make_checkpoint(
    params: GoyParams,
    cfg: RunConfig,
    state: ShellState,
    window: SnapshotWindow,
    adam: AdamState,
    theta: float,
    update_index: int,
    t_anchor: float,
) -> Checkpoint:
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        params=params,
        state=state,
        window_times=window.times,
        window_states=window.states,
        window_capacity=window.capacity,
        window_spacing=window.spacing,
        adam=adam,
        theta=theta,
        update_index=update_index,
        t_anchor=t_anchor,
        digest=config_digest(params, cfg),
    )


def _complex_rows_payload(rows: np.ndarray) -> list:
    return [[[z.real, z.imag] for z in row] for row in np.atleast_2d(rows)]


def _checkpoint_payload(cp: Checkpoint) -> dict:
    n_rows = cp.window_times.shape[0]
    return {
        "params": _params_payload(cp.params),
        "state": {
            "t": cp.state.t,
            "u": [[z.real, z.imag] for z in cp.state.u],
        },
        "window": {
            "capacity": cp.window_capacity,
            "spacing": cp.window_spacing,
            "times": [float(t) for t in cp.window_times],
            "states": _complex_rows_payload(cp.window_states) if n_rows else [],
        },
        "adam": {
            "alpha": cp.adam.alpha,
            "beta1": cp.adam.beta1,
            "beta2": cp.adam.beta2,
            "eps": cp.adam.eps,
            "m": cp.adam.m,
            "v": cp.adam.v,
            "step_count": cp.adam.step_count,
        },
        "theta": cp.theta,
        "update_index": cp.update_index,
        "t_anchor": cp.t_anchor,
        "digest": cp.digest,
    }


def save_checkpoint(cp: Checkpoint, path) -> None:
    payload = _checkpoint_payload(cp)
    body = _canonical_json(payload)
    doc = {
        "version": cp.version,
        "checksum": hashlib.sha256(body.encode()).hexdigest(),
        "payload": payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"unparseable checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or "payload" not in doc:
        raise CheckpointError("checkpoint missing payload")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    payload = doc["payload"]
    body = _canonical_json(payload)
    checksum = hashlib.sha256(body.encode()).hexdigest()
    if checksum != doc.get("checksum"):
        raise CheckpointError("checkpoint checksum mismatch (corrupted payload)")
    params = _params_from_payload(payload["params"])
    u = np.array([complex(re, im) for re, im in payload["state"]["u"]])
    state = ShellState(u=u, t=payload["state"]["t"])
    wtimes = np.array(payload["window"]["times"], dtype=np.float64)
    wstates = np.array(
        [[complex(re, im) for re, im in row] for row in payload["window"]["states"]],
        dtype=np.complex128,
    )
    if wstates.size == 0:
        wstates = np.empty((0, params.n_shells), dtype=np.complex128)
    a = payload["adam"]
    adam = AdamState(
        alpha=a["alpha"],
        beta1=a["beta1"],
        beta2=a["beta2"],
        eps=a["eps"],
        m=a["m"],
        v=a["v"],
        step_count=a["step_count"],
    )
    return Checkpoint(
        version=doc["version"],
        params=params,
        state=state,
        window_times=wtimes,
        window_states=wstates,
        window_capacity=payload["window"]["capacity"],
        window_spacing=payload["window"]["spacing"],
        adam=adam,
        theta=payload["theta"],
        update_index=payload["update_index"],
        t_anchor=payload["t_anchor"],
        digest=payload["digest"],
    )


@dataclass
class _LoopState:
    state: ShellState
    window: SnapshotWindow
    theta: float
    adam: AdamState
    update_index: int

    def snapshot(self) -> "_LoopState":
        return _LoopState(
            state=self.state,
            window=self.window.copy(),
            theta=self.theta,
            adam=self.adam,
            update_index=self.update_index,
        )


def train(
    params: GoyParams,
    cfg: RunConfig,
    *,
    state: ShellState | None = None,
    window: SnapshotWindow | None = None,
    checkpoint: Checkpoint | None = None,
    snapshot_hook: Callable[[float, np.ndarray], None] | None = None,
    record_hook: Callable[[TrainRecord], None] | None = None,
    checkpoint_path=None,
) -> TrainResult:
    """Online learning loop over [start, cfg.t_end].

    Start either from a seed (state, window) pair, typically the
    spin-up output, or from a checkpoint; a checkpointed run resumed
    mid-way produces records bit-identical to the uninterrupted one.
    On a solver failure the default policy records the error and
    aborts; the rollback policy rewinds one full update, halves the
    Adam learning rate, and retries, up to cfg.max_rollbacks times.
    """
    digest = config_digest(params, cfg)
    if checkpoint is not None:
        if state is not None or window is not None:
            raise ValueError("pass either a checkpoint or a seed, not both")
        if checkpoint.digest != digest:
            raise CheckpointError(
                "checkpoint was produced under a different configuration"
            )
        cur = _LoopState(
            state=checkpoint.state,
            window=checkpoint.window(),
            theta=checkpoint.theta,
            adam=checkpoint.adam,
            update_index=checkpoint.update_index,
        )
        t_anchor = checkpoint.t_anchor
    else:
        if state is None or window is None:
            raise ValueError("training needs a seed (state, window) or a checkpoint")
        cur = _LoopState(
            state=state,
            window=window.copy(),
            theta=cfg.theta0,
            adam=cfg.adam_state(),
            update_index=0,
        )
        t_anchor = state.t

    n_total = int(math.floor((cfg.t_end - t_anchor) / cfg.update_interval + 1e-9))
    m = cfg.snapshots_per_update()
    records: list[TrainRecord] = []
    failure: TrainFailure | None = None
    rollbacks = 0
    prev1: _LoopState | None = None  # before the most recent update
    prev2: _LoopState | None = None  # one update earlier

    def emit(rec: TrainRecord):
        records.append(rec)
        if record_hook is not None:
            record_hook(rec)

    while cur.update_index < n_total:
        n = cur.update_index
        if cfg.failure_policy == "rollback":
            prev2 = prev1
            prev1 = cur.snapshot()
        t_seg_end = t_anchor + (n + 1) * cfg.update_interval
        fld = modified_field(params, cur.theta)
        phase = "forward"
        try:
            seg = integrate_segment(
                cur.state, fld, cfg.integrator, t_seg_end - cur.state.t, dense=True
            )
            for j in range(1, m + 1):
                if j == m:
                    t_push, u_push = seg.t1, seg.final_state.u
                else:
                    t_push = t_anchor + (n * m + j) * cfg.snapshot_dt
                    u_push = seg.interpolate(t_push).u
                cur.window.push(t_push, u_push)
                if snapshot_hook is not None:
                    snapshot_hook(t_push, u_push)
            loss_value = loss(window_mean_spectrum(cur.window, params), cfg.loss)
            terminal = loss_grad_state(cur.window, params, cfg.loss)
            phase = "backward"
            grad_res = solve_adjoint(
                AdjointProblem(
                    segment=seg,
                    theta=cur.theta,
                    terminal=terminal,
                    params=params,
                    config=cfg.integrator,
                )
            )
        except SolveError as exc:
            fwd = (exc.steps_taken, 0) if phase == "forward" else (0, 0)
            bwd = (exc.steps_taken, 0) if phase == "backward" else (0, 0)
            emit(
                TrainRecord(
                    update=n,
                    t=exc.t_fail,
                    theta_before=cur.theta,
                    theta_after=cur.theta,
                    loss=None,
                    dl_dtheta=None,
                    fwd_accepted=fwd[0],
                    fwd_rejected=fwd[1],
                    bwd_accepted=bwd[0],
                    bwd_rejected=bwd[1],
                    guard_flagged=False,
                    error=exc.kind.value,
                )
            )
            if (
                cfg.failure_policy == "rollback"
                and prev2 is not None
                and rollbacks < cfg.max_rollbacks
            ):
                # rewind past the theta update that produced the failing
                # segment and retry it with a halved learning rate
                rollbacks += 1
                cur = prev2.snapshot()
                cur.adam = replace(cur.adam, alpha=cur.adam.alpha / 2.0)
                prev1 = None
                prev2 = None
                continue
            failure = TrainFailure(kind=exc.kind.value, t_fail=exc.t_fail, update=n)
            break

        adam_next, theta_prop = adam_step(cur.adam, cur.theta, grad_res.dl_dtheta)
        theta_next, flagged = apply_guard(cfg.guard, theta_prop, cur.theta)
        emit(
            TrainRecord(
                update=n,
                t=seg.t1,
                theta_before=cur.theta,
                theta_after=theta_next,
                loss=loss_value,
                dl_dtheta=grad_res.dl_dtheta,
                fwd_accepted=seg.stats.accepted,
                fwd_rejected=seg.stats.rejected,
                bwd_accepted=grad_res.stats.accepted,
                bwd_rejected=grad_res.stats.rejected,
                guard_flagged=flagged,
                error=None,
            )
        )
        cur.state = seg.final_state
        cur.theta = theta_next
        cur.adam = adam_next
        cur.update_index = n + 1
        if (
            checkpoint_path is not None
            and cfg.checkpoint_every > 0
            and cur.update_index % cfg.checkpoint_every == 0
        ):
            save_checkpoint(
                make_checkpoint(
                    params,
                    cfg,
                    cur.state,
                    cur.window,
                    cur.adam,
                    cur.theta,
                    cur.update_index,
                    t_anchor,
                ),
                checkpoint_path,
            )

    final_cp = make_checkpoint(
        params,
        cfg,
        cur.state,
        cur.window,
        cur.adam,
        cur.theta,
        cur.update_index,
        t_anchor,
    )
    if checkpoint_path is not None:
        save_checkpoint(final_cp, checkpoint_path)
    return TrainResult(
        records=records, checkpoint=final_cp, failure=failure, rollbacks=rollbacks
    )
