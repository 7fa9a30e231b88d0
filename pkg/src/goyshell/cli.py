"""Command-line entry point: simulate | ablate | train | gradcheck.

Configuration is a flat key=value text file whose keys mirror the run
configuration fields; explicit flags and repeated --set KEY=VALUE
overrides win over file values.  Every run echoes its effective
configuration into the output directory, and all emitted files are
byte-identical across repeated runs with the same configuration.

Exit codes: 0 success, 2 configuration/usage error, 3 solver failure,
4 gradient-check tolerance breach.  Failures print a single JSON
object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .adjoint import finite_diff_grad, training_gradient
from .controller import (
    CheckpointError,
    RunConfig,
    load_checkpoint,
    make_checkpoint,
    run_ablation,
    run_reference,
    save_checkpoint,
    spin_up,
    train,
)
from .diagnostics import LossConfig, SnapshotWindow, profile_to_csv
from .integrator import IntegratorConfig, SolveError, integrate_segment, reference_field
from .model import GoyParams, wavenumbers
from .optimizer import GuardPolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TOLERANCE = 4


class ConfigError(Exception):
    pass


_INT_KEYS = {
    "n_shells",
    "forcing_shell",
    "window",
    "max_steps",
    "loss_i_lo",
    "loss_i_hi",
    "max_rollbacks",
    "checkpoint_every",
    "gradcheck_states",
}
_STR_KEYS = {"guard", "failure_policy", "gradcheck_thetas"}

_DEFAULTS = {
    # physical parameters
    "epsilon": 0.5,
    "lam": 2.0,
    "nu": 1e-8,
    "k0": 2.0 ** -4,
    "n_shells": 22,
    "forcing_re": 5e-3,
    "forcing_im": 5e-3,
    "forcing_shell": 4,
    # run schedule
    "t_end": None,  # per-mode default, see _resolve
    "spin_up_t": 500.0,
    "snapshot_dt": 0.1,
    "window": 1000,
    "update_interval": 0.1,
    "theta0": 0.0,
    "discard_tau0": 10.0,
    # optimizer
    "alpha": 1e-9,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps_adam": 1e-8,
    "guard": "none",
    "theta_min": 0.0,
    "theta_max": 1e-6,
    # integrator
    "rtol": 1e-6,
    "atol": 1e-12,
    "dt_init": 1e-4,
    "dt_min": 1e-12,
    "max_steps": 100_000,
    "safety": 0.9,
    # loss
    "loss_target": -5.0 / 3.0,
    "loss_i_lo": 1,
    "loss_i_hi": None,
    # failure handling
    "failure_policy": "abort",
    "max_rollbacks": 10,
    "checkpoint_every": 0,
    # gradcheck
    "gradcheck_states": 20,
    "gradcheck_thetas": "0,1e-9,1e-8,1e-7",
    "gradcheck_threshold": 1e-3,
    "gradcheck_fd_step": 1e-11,
    "gradcheck_gap": 2.0,
}


def _coerce(key: str, raw):
    if key not in _DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key == "loss_i_hi" and text.lower() in ("none", ""):
        return None
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _STR_KEYS:
            return text
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _parse_config_file(path: Path) -> dict:
    values = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = _coerce(key.strip(), value)
    return values


_FLAG_TO_KEY = {
    "t_end": "t_end",
    "lr": "alpha",
    "update_interval": "update_interval",
    "window": "window",
    "snapshot_dt": "snapshot_dt",
    "theta0": "theta0",
    "guard": "guard",
}


def _resolve(args, mode: str) -> tuple[GoyParams, RunConfig, dict]:
    flat = dict(_DEFAULTS)
    if args.config is not None:
        flat.update(_parse_config_file(Path(args.config)))
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            flat[key] = _coerce(key, value) if isinstance(value, str) else value
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        flat[key.strip()] = _coerce(key.strip(), value)

    try:
        params = GoyParams(
            epsilon=flat["epsilon"],
            lam=flat["lam"],
            nu=flat["nu"],
            k0=flat["k0"],
            n_shells=flat["n_shells"],
            forcing=complex(flat["forcing_re"], flat["forcing_im"]),
            forcing_shell=flat["forcing_shell"],
        )
        cfg = RunConfig(
            mode=mode,
            t_end=0.0 if flat["t_end"] is None else flat["t_end"],
            spin_up_t=flat["spin_up_t"],
            snapshot_dt=flat["snapshot_dt"],
            window=flat["window"],
            update_interval=flat["update_interval"],
            theta0=flat["theta0"],
            alpha=flat["alpha"],
            beta1=flat["beta1"],
            beta2=flat["beta2"],
            eps_adam=flat["eps_adam"],
            guard=GuardPolicy(
                mode=flat["guard"],
                theta_min=flat["theta_min"],
                theta_max=flat["theta_max"],
            ),
            integrator=IntegratorConfig(
                rtol=flat["rtol"],
                atol=flat["atol"],
                dt_init=flat["dt_init"],
                dt_min=flat["dt_min"],
                max_steps=flat["max_steps"],
                safety=flat["safety"],
            ),
            loss=LossConfig(
                target=flat["loss_target"],
                i_lo=flat["loss_i_lo"],
                i_hi=flat["loss_i_hi"],
            ),
            failure_policy=flat["failure_policy"],
            max_rollbacks=flat["max_rollbacks"],
            checkpoint_every=flat["checkpoint_every"],
            discard_tau0=flat["discard_tau0"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return params, cfg, flat


def _echo_config(out_dir: Path, flat: dict, resolved_t_end: float) -> None:
    flat = dict(flat)
    flat["t_end"] = resolved_t_end
    lines = []
    for key in sorted(flat):
        value = flat[key]
        if value is None:
            rendered = "none"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{key}={rendered}")
    (out_dir / "config_effective.txt").write_text("\n".join(lines) + "\n", "utf-8")


def _series_csv(path: Path, header: str, columns) -> None:
    lines = [header]
    for row in zip(*columns):
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", "utf-8")


def _profile_csv(path: Path, profile) -> None:
    if profile is None:
        path.write_text("shell_index,k,value\n", "utf-8")
    else:
        path.write_text(profile_to_csv(profile), "utf-8")


def _fail(code: int, kind: str, **details) -> int:
    doc = {"error": kind}
    doc.update(details)
    print(json.dumps(doc), file=sys.stderr)
    return code


def _solver_fail(exc: SolveError) -> int:
    return _fail(
        EXIT_SOLVER,
        exc.kind.value,
        t_fail=exc.t_fail,
        steps_taken=exc.steps_taken,
    )


def _prepare_out(args) -> Path:
    out = Path(args.out) if args.out else Path(f"out_{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    params, cfg, flat = _resolve(args, "reference")
    t_end = flat["t_end"] if flat["t_end"] is not None else 1500.0
    out = _prepare_out(args)
    try:
        res = run_reference(params, cfg, t_end=t_end)
    except SolveError as exc:
        return _solver_fail(exc)
    _echo_config(out, flat, t_end)
    _series_csv(out / "energy.csv", "time,energy", (res.times, res.energy))
    _series_csv(
        out / "dissipation.csv", "time,dissipation", (res.times, res.dissipation)
    )
    _profile_csv(out / "spectrum.csv", res.mean_spectrum)
    _profile_csv(out / "flux.csv", res.mean_flux)
    (out / "tau0.txt").write_text(f"{res.tau0!r}\n", "utf-8")
    save_checkpoint(
        make_checkpoint(
            params,
            cfg,
            res.final_state,
            res.window,
            cfg.adam_state(),
            cfg.theta0,
            0,
            res.final_state.t,
        ),
        out / "checkpoint.json",
    )
    return EXIT_OK


def _seed_from_args(args, params, cfg):
    """Starting (state, window) for ablate/train/gradcheck: an explicit
    seed trajectory, a resume checkpoint's state, or a fresh spin-up."""
    path = getattr(args, "seed_trajectory", None)
    if path:
        cp = load_checkpoint(path)
        if cp.params != params:
            raise ConfigError("seed trajectory was produced with different parameters")
        return cp.state, cp.window()
    return spin_up(params, cfg)


def cmd_ablate(args) -> int:
    params, cfg, flat = _resolve(args, "ablation")
    try:
        if args.resume:
            cp = load_checkpoint(args.resume)
            if cp.params != params:
                raise ConfigError("checkpoint was produced with different parameters")
            state = cp.state
        else:
            state, _ = _seed_from_args(args, params, cfg)
        t_end = flat["t_end"] if flat["t_end"] is not None else state.t + 100.0
        cfg = _with_t_end(cfg, t_end)
        out = _prepare_out(args)
        res = run_ablation(params, cfg, state)
    except SolveError as exc:
        return _solver_fail(exc)
    _echo_config(out, flat, t_end)
    _series_csv(out / "energy.csv", "time,energy", (res.times, res.energy))
    _profile_csv(out / "spectrum.csv", res.mean_spectrum)
    _profile_csv(out / "flux.csv", res.mean_flux)
    window = SnapshotWindow.from_snapshots(
        res.times, res.states, cfg.window, cfg.snapshot_dt
    )
    save_checkpoint(
        make_checkpoint(
            params,
            cfg,
            res.final_state,
            window,
            cfg.adam_state(),
            0.0,
            0,
            res.final_state.t,
        ),
        out / "checkpoint.json",
    )
    return EXIT_OK


def _with_t_end(cfg: RunConfig, t_end: float) -> RunConfig:
    from dataclasses import replace

    return replace(cfg, t_end=t_end)


def cmd_train(args) -> int:
    params, cfg, flat = _resolve(args, "train")
    try:
        checkpoint = None
        state = window = None
        if args.resume:
            checkpoint = load_checkpoint(args.resume)
            t_anchor = checkpoint.t_anchor
        else:
            state, window = _seed_from_args(args, params, cfg)
            t_anchor = state.t
            if len(window) == 0:
                raise ConfigError(
                    "training needs a pre-filled window: spin_up_t > 0 "
                    "or --seed-trajectory"
                )
        t_end = flat["t_end"] if flat["t_end"] is not None else t_anchor + 1000.0
        cfg = _with_t_end(cfg, t_end)
    except SolveError as exc:
        return _solver_fail(exc)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    out = _prepare_out(args)
    _echo_config(out, flat, t_end)

    snap_times: list[float] = []
    snap_states: list[np.ndarray] = []

    def snapshot_hook(t, u):
        snap_times.append(t)
        snap_states.append(u.copy())

    with open(out / "train.jsonl", "w", encoding="utf-8") as jsonl:

        def record_hook(rec):
            jsonl.write(rec.to_json_line() + "\n")

        result = train(
            params,
            cfg,
            state=state,
            window=window,
            checkpoint=checkpoint,
            snapshot_hook=snapshot_hook,
            record_hook=record_hook,
            checkpoint_path=out / "checkpoint.json",
        )

    _write_train_diagnostics(out, params, snap_times, snap_states)
    if result.failure is not None:
        return _fail(
            EXIT_SOLVER,
            result.failure.kind,
            t_fail=result.failure.t_fail,
            update=result.failure.update,
        )
    return EXIT_OK


def _write_train_diagnostics(out, params, snap_times, snap_states) -> None:
    from .diagnostics import FluxProfile, Spectrum
    from .controller import _flux_rows

    times = np.array(snap_times)
    if times.size == 0:
        _series_csv(out / "energy.csv", "time,energy", ((), ()))
        _profile_csv(out / "spectrum.csv", None)
        _profile_csv(out / "flux.csv", None)
        return
    states = np.array(snap_states)
    abs2 = states.real ** 2 + states.imag ** 2
    energy = 0.5 * abs2.sum(axis=1)
    _series_csv(out / "energy.csv", "time,energy", (times, energy))
    # stationary diagnostics over the final third of the run
    start = (2 * times.size) // 3
    k = wavenumbers(params)
    spectrum = Spectrum(k=k, values=0.5 * abs2[start:].mean(axis=0) / k)
    flux = FluxProfile(k=k, values=_flux_rows(states[start:], params).mean(axis=0))
    _profile_csv(out / "spectrum.csv", spectrum)
    _profile_csv(out / "flux.csv", flux)


def cmd_gradcheck(args) -> int:
    params, cfg, flat = _resolve(args, "reference")
    n_states = flat["gradcheck_states"]
    thetas = [float(v) for v in str(flat["gradcheck_thetas"]).split(",") if v.strip()]
    threshold = flat["gradcheck_threshold"]
    fd_step = flat["gradcheck_fd_step"]
    gap = flat["gradcheck_gap"]
    duration = cfg.update_interval
    try:
        state, window = _seed_from_args(args, params, cfg)
        if len(window) == 0:
            raise ConfigError("gradient check needs a developed state; spin_up_t > 0")
        fld = reference_field(params)
        rows = []
        worst = 0.0
        for idx in range(n_states):
            if idx > 0:
                # decorrelate samples: advance the reference system by
                # `gap`, keeping the window cadence honest
                for _ in range(max(1, round(gap / cfg.snapshot_dt))):
                    seg = integrate_segment(
                        state, fld, cfg.integrator, cfg.snapshot_dt, dense=False
                    )
                    state = seg.final_state
                    window.push(state.t, state.u)
            for theta in thetas:
                adj = training_gradient(
                    state, theta, window, params, duration, cfg.integrator, cfg.loss
                )
                fd = finite_diff_grad(
                    state,
                    theta,
                    window,
                    params,
                    duration,
                    cfg.integrator,
                    cfg.loss,
                    h=fd_step,
                )
                denom = max(abs(adj), abs(fd), 1e-300)
                rel = abs(adj - fd) / denom
                worst = max(worst, rel)
                rows.append((idx, state.t, theta, adj, fd, rel))
    except SolveError as exc:
        return _solver_fail(exc)
    out = _prepare_out(args)
    _echo_config(out, flat, cfg.t_end)
    lines = ["state,t,theta,adjoint,finite_diff,rel_discrepancy"]
    print(
        f"{'state':>5} {'t':>12} {'theta':>10} {'adjoint':>15} "
        f"{'finite_diff':>15} {'rel_disc':>10}"
    )
    for idx, t, theta, adj, fd, rel in rows:
        lines.append(f"{idx},{t!r},{theta!r},{adj!r},{fd!r},{rel!r}")
        print(f"{idx:>5} {t:>12.4f} {theta:>10.2e} {adj:>15.6e} {fd:>15.6e} {rel:>10.2e}")
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n", "utf-8")
    verdict = "PASS" if worst <= threshold else "FAIL"
    print(f"gradcheck: {verdict} (max relative discrepancy {worst:.3e}, "
          f"threshold {threshold:.3e})")
    if worst > threshold:
        return _fail(EXIT_TOLERANCE, "GradientMismatch", max_rel=worst, threshold=threshold)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goyshell",
        description="Shell-model turbulence runs with online dissipation learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "simulate": (cmd_simulate, "reference simulation with viscous dissipation"),
        "ablate": (cmd_ablate, "run with the dissipation term removed"),
        "train": (cmd_train, "learn the dissipation coefficient online"),
        "gradcheck": (cmd_gradcheck, "compare adjoint and finite-difference gradients"),
    }
    for name, (func, help_text) in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--out", help="output directory (default out_<command>)")
        sp.add_argument("--resume", help="checkpoint to continue from")
        sp.add_argument(
            "--seed-trajectory",
            dest="seed_trajectory",
            help="checkpoint supplying the starting state and window",
        )
        sp.add_argument("--t-end", dest="t_end", type=float, default=None)
        sp.add_argument("--lr", dest="lr", type=float, default=None)
        sp.add_argument(
            "--update-interval", dest="update_interval", type=float, default=None
        )
        sp.add_argument("--window", dest="window", type=int, default=None)
        sp.add_argument("--snapshot-dt", dest="snapshot_dt", type=float, default=None)
        sp.add_argument("--theta0", dest="theta0", type=float, default=None)
        sp.add_argument(
            "--guard", dest="guard", choices=["none", "clamp", "reject"], default=None
        )
        sp.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override any configuration key (repeatable)",
        )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", message=str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_CONFIG, "CheckpointError", message=str(exc))
    except SolveError as exc:  # pragma: no cover - commands catch their own
        return _solver_fail(exc)


if __name__ == "__main__":
    sys.exit(main())
