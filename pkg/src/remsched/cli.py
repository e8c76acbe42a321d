"""Command-line front end.

Settings are resolved in three layers: built-in defaults, then an optional
YAML file (``--config``), then command-line flags.  Every CSV starts with a
``#`` comment line holding the resolved settings as JSON; all files are
written through a temporary file and renamed into place.

Exit status: 0 when every computed quantity passed its residual check,
1 when a check failed, 2 for invalid settings.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .codec import NOISE_FAMILIES, ChannelSpec
from .dp import (
    HorizonSpec,
    generic_opportunity_threshold,
    laplace_minimal_error,
    opportunity_threshold,
    solve_dp,
)
from .oracles import verify_suite
from .sim import EpisodeConfig, monte_carlo, run_episode, soft_config
from .sources import Laplace, make_source
from .stage import StageProblem, solve_threshold

OUT_DIR_ENV = "REMSCHED_OUT_DIR"
RESIDUAL_TOL = 1e-10
DEFAULT_SNRS = (0.1, 1.0, 10.0)

DEFAULTS = {
    "source": "laplace",
    "lambda": None,
    "sigma": None,
    "halfwidth": None,
    "gamma": None,
    "power": None,
    "noise_var": None,
    "noise": "gaussian",
    "horizon": 100,
    "budget": None,
    "cost": None,
    "snr": None,
    "episodes": 10000,
    "seed": 0,
    "out": None,
    "workers": None,
}
SCALE_KEY = {"laplace": "lambda", "gaussian": "sigma", "uniform": "halfwidth"}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment settings."""


def _load_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping of settings")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    # nested blocks are accepted for readability: {source: {family, lambda}, channel: {...}}
    if isinstance(data.get("source"), dict):
        src = data.pop("source")
        data["source"] = src.get("family", DEFAULTS["source"])
        data.update({k: v for k, v in src.items() if k != "family"})
    if isinstance(data.get("channel"), dict):
        data.update(data.pop("channel"))
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; allowed: {sorted(DEFAULTS)}")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) and validate the result."""
    cfg = dict(DEFAULTS)
    cfg.update(_load_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return _validate(cfg, args.command)


def _validate(cfg: dict, command: str) -> dict:
    fam = str(cfg["source"]).lower()
    if fam not in SCALE_KEY:
        raise ConfigError(f"source must be one of {sorted(SCALE_KEY)}, got {fam!r}")
    cfg["source"] = fam
    for other in set(SCALE_KEY.values()) - {SCALE_KEY[fam]}:
        if cfg[other] is not None:
            raise ConfigError(f"--{other.replace('_', '-')} does not apply to a {fam} source")
    scale = cfg[SCALE_KEY[fam]]
    cfg[SCALE_KEY[fam]] = 1.0 if scale is None else float(scale)
    if not cfg[SCALE_KEY[fam]] > 0:
        raise ConfigError(f"source scale must be positive, got {cfg[SCALE_KEY[fam]]}")

    g, p, nv = cfg["gamma"], cfg["power"], cfg["noise_var"]
    if (p is None) != (nv is None):
        raise ConfigError("give --power and --noise-var together (or --gamma alone)")
    if p is not None:
        if not (p > 0 and nv > 0):
            raise ConfigError("--power and --noise-var must be positive")
        derived = p / nv
        if g is not None and not math.isclose(g, derived, rel_tol=1e-12):
            raise ConfigError(f"--gamma {g} contradicts --power/--noise-var ratio {derived}")
        g = derived
    elif g is None and command != "verify":
        if command in ("sweep-budget", "frontier"):
            g = None
        else:
            raise ConfigError("set the SNR with --gamma or with --power and --noise-var")
    if g is not None:
        if not g >= 0:
            raise ConfigError(f"gamma must be >= 0, got {g}")
        cfg["gamma"] = float(g)
        if p is None:
            cfg["power"] = 1.0
            cfg["noise_var"] = None if g == 0 else 1.0 / g
    if cfg["noise"] not in NOISE_FAMILIES:
        raise ConfigError(f"noise must be one of {NOISE_FAMILIES}, got {cfg['noise']!r}")

    T = int(cfg["horizon"])
    if T < 1:
        raise ConfigError(f"horizon must be >= 1, got {T}")
    cfg["horizon"] = T
    if cfg["cost"] is not None and not cfg["cost"] >= 0:
        raise ConfigError(f"communication cost must be >= 0, got {cfg['cost']}")
    if cfg["budget"] is not None and not 0 <= int(cfg["budget"]) <= T:
        raise ConfigError(f"budget must lie in 0..{T}, got {cfg['budget']}")

    if command == "solve-soft":
        if cfg["budget"] is not None:
            raise ConfigError("solve-soft takes --cost, not --budget")
        cfg["cost"] = 0.0 if cfg["cost"] is None else float(cfg["cost"])
    elif command in ("solve-hard", "trace"):
        if cfg["cost"] is not None:
            raise ConfigError(f"{command} takes --budget, not --cost")
        cfg["budget"] = T if cfg["budget"] is None else int(cfg["budget"])
    elif command == "simulate":
        if (cfg["budget"] is None) == (cfg["cost"] is None):
            raise ConfigError("simulate needs exactly one of --budget (hard) or --cost (soft)")
    if command in ("simulate", "trace") and cfg["gamma"] == 0:
        raise ConfigError("simulation needs a positive SNR")
    if command in ("sweep-budget", "frontier"):
        snrs = cfg["snr"]
        if snrs is None:
            snrs = [cfg["gamma"]] if cfg["gamma"] is not None else list(DEFAULT_SNRS)
        snrs = [float(s) for s in (snrs if isinstance(snrs, (list, tuple)) else [snrs])]
        if any(not s >= 0 for s in snrs):
            raise ConfigError(f"SNR values must be >= 0, got {snrs}")
        cfg["snr"] = snrs
    if int(cfg["episodes"]) < 1:
        raise ConfigError(f"episodes must be >= 1, got {cfg['episodes']}")
    cfg["episodes"] = int(cfg["episodes"])
    seed = int(cfg["seed"])
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    cfg["seed"] = seed
    cfg["workers"] = int(cfg["workers"]) if cfg["workers"] is not None else (os.cpu_count() or 1)
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _provenance(cfg: dict, command: str) -> str:
    shown = {k: v for k, v in cfg.items() if k not in ("out", "workers")}
    return json.dumps({"command": command, **shown}, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _out_path(cfg: dict, command: str, ext: str) -> Path:
    if cfg["out"]:
        return Path(cfg["out"])
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / f"{command.replace('-', '_')}.{ext}"


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a sibling temporary file and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _csv_text(cfg, command, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {_provenance(cfg, command)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def _source(cfg):
    return make_source(cfg["source"], cfg[SCALE_KEY[cfg["source"]]])


def _channel(cfg):
    return ChannelSpec(cfg["power"], cfg["noise_var"], cfg["noise"])


def _regime_note(src) -> str | None:
    return getattr(src, "regime_note", None)


def cmd_solve_soft(cfg, command) -> bool:
    src = _source(cfg)
    sol = solve_threshold(StageProblem(src, cfg["gamma"], cfg["cost"]))
    ok = sol.boundary_clamped or abs(sol.residual) <= RESIDUAL_TOL
    print(f"beta*            {sol.beta_star:.12g}")
    print(f"J(beta*)         {sol.cost_at_optimum:.12g}")
    print(f"residual         {sol.residual:.3e}")
    print(f"boundary clamped {sol.boundary_clamped}")
    if sol.boundary_clamped:
        print("note: threshold sits at the support edge; never transmit")
    if _regime_note(src):
        print(f"note: {_regime_note(src)}")
    if cfg["out"]:
        report = {"config": json.loads(_provenance(cfg, command)), "beta_star": sol.beta_star,
                  "cost": sol.cost_at_optimum, "residual": sol.residual, "boundary_clamped": sol.boundary_clamped}
        write_atomic(Path(cfg["out"]), json.dumps(report, indent=2, sort_keys=True) + "\n")
    return ok


def _policy_ok(policy) -> tuple[bool, float]:
    free = ~policy.clamped[:, 1:]
    worst = float(np.max(np.abs(policy.residual[:, 1:][free]), initial=0.0))
    return worst <= RESIDUAL_TOL, worst


def cmd_solve_hard(cfg, command) -> bool:
    src = _source(cfg)
    T, N = cfg["horizon"], cfg["budget"]
    table, policy = solve_dp(HorizonSpec(T, N, src, cfg["gamma"]))
    ok, worst = _policy_ok(policy)
    rows = []
    for t in range(1, T + 1):
        for E in range(N + 1):
            b = policy.beta[t - 1, E]
            rows.append((t, E, "" if math.isinf(b) else _fmt(b), _fmt(policy.opportunity_cost[t - 1, E]),
                         _fmt(table(t, E))))
    path = _out_path(cfg, command, "csv")
    write_atomic(path, _csv_text(cfg, command, ("t", "E", "beta", "opportunity_cost", "J"), rows))
    print(f"J*(1,{N})          {table(1, N):.12g}")
    print(f"max residual      {worst:.3e}")
    if policy.clamped[:, 1:].any():
        print("note: some thresholds sit at the support edge; never transmit there")
    print(f"wrote {path}")
    return ok


def cmd_simulate(cfg, command) -> bool:
    src, ch = _source(cfg), _channel(cfg)
    T = cfg["horizon"]
    ok = True
    if cfg["budget"] is not None:
        N = cfg["budget"]
        table, policy = solve_dp(HorizonSpec(T, N, src, ch.gamma))
        ok, _ = _policy_ok(policy)
        ecfg = EpisodeConfig(T, src, ch, policy, cfg["seed"], budget=N)
        target = table(1, N)
    else:
        ecfg = soft_config(src, ch, T, cfg["cost"], cfg["seed"])
        sol = solve_threshold(StageProblem(src, ch.gamma, cfg["cost"]))
        ok = sol.boundary_clamped or abs(sol.residual) <= RESIDUAL_TOL
        target = T * sol.cost_at_optimum
    rep = monte_carlo(ecfg, cfg["episodes"], workers=cfg["workers"])
    z = (rep.mean_total_cost - target) / rep.std_error if rep.std_error > 0 else 0.0
    out = {"config": json.loads(_provenance(cfg, command)), "analytic_cost": target, "z_score": z, **rep.to_dict()}
    path = _out_path(cfg, command, "json")
    write_atomic(path, json.dumps(out, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(f"mean total cost   {rep.mean_total_cost:.6f} +/- {rep.std_error:.6f}")
    print(f"analytic          {target:.6f}  (z = {z:+.2f})")
    print(f"transmissions     {rep.mean_transmissions_used:.4f} per episode")
    print(f"wrote {path}")
    return ok


def cmd_trace(cfg, command) -> bool:
    src, ch = _source(cfg), _channel(cfg)
    T, N = cfg["horizon"], cfg["budget"]
    _, policy = solve_dp(HorizonSpec(T, N, src, ch.gamma))
    ok, _ = _policy_ok(policy)
    trace = run_episode(EpisodeConfig(T, src, ch, policy, cfg["seed"], budget=N))
    buf = io.StringIO()
    buf.write(f"# {_provenance(cfg, command)}\n")
    trace.to_csv(buf)
    path = _out_path(cfg, command, "csv")
    write_atomic(path, buf.getvalue())
    print(f"transmissions {trace.transmissions}, budget left after step {T}: {trace.E_final}")
    print(f"wrote {path}")
    return ok


def _frontier_point(src, gamma, T):
    """(opportunity threshold, minimal error J*(1,T))."""
    if isinstance(src, Laplace):
        return opportunity_threshold(src.rate, gamma, T), laplace_minimal_error(src.rate, gamma, T)
    table, _ = solve_dp(HorizonSpec(T, T, src, gamma))
    return generic_opportunity_threshold(src, gamma, T), table(1, T)


def cmd_sweep_budget(cfg, command) -> bool:
    src, T = _source(cfg), cfg["horizon"]
    rows, ok = [], True
    for g in cfg["snr"]:
        table, policy = solve_dp(HorizonSpec(T, T, src, g))
        ok &= _policy_ok(policy)[0]
        thr, jmin = _frontier_point(src, g, T)
        for N in range(T + 1):
            rows.append((_fmt(g), N, _fmt(table(1, N)), _fmt(thr), _fmt(jmin)))
        print(f"gamma={g:g}: plateau {jmin:.6f}, opportunity threshold {thr:.4f}")
    path = _out_path(cfg, command, "csv")
    write_atomic(path, _csv_text(cfg, command, ("gamma", "N", "J_star", "opportunity_threshold", "minimal_error"), rows))
    print(f"wrote {path}")
    return ok


def cmd_frontier(cfg, command) -> bool:
    src, T = _source(cfg), cfg["horizon"]
    rows = []
    for g in cfg["snr"]:
        thr, jmin = _frontier_point(src, g, T)
        rows.append((_fmt(g), _fmt(thr), _fmt(jmin)))
        print(f"gamma={g:g}: opportunity threshold {thr:.4f}, minimal error {jmin:.6f}")
    path = _out_path(cfg, command, "csv")
    write_atomic(path, _csv_text(cfg, command, ("gamma", "opportunity_threshold", "minimal_error"), rows))
    print(f"wrote {path}")
    return True


def cmd_verify(cfg, command) -> bool:
    results = verify_suite(seed=cfg["seed"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if cfg["out"]:
        rows = [(r.name, int(r.passed), r.detail) for r in results]
        write_atomic(Path(cfg["out"]), _csv_text(cfg, command, ("check", "passed", "detail"), rows))
    return all(r.passed for r in results)


COMMANDS = {
    "solve-soft": (cmd_solve_soft, "optimal one-stage threshold under a per-transmission cost"),
    "solve-hard": (cmd_solve_hard, "threshold and cost-to-go tables under a transmission budget"),
    "simulate": (cmd_simulate, "Monte-Carlo run of the closed loop, JSON report"),
    "sweep-budget": (cmd_sweep_budget, "J*(1,N) for every budget N, per SNR"),
    "trace": (cmd_trace, "one episode's per-step record, including the remaining budget"),
    "frontier": (cmd_frontier, "opportunity threshold and minimal error per SNR"),
    "verify": (cmd_verify, "run the brute-force oracle checks"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML settings file; flags override its values")
    common.add_argument("--source", choices=sorted(SCALE_KEY))
    common.add_argument("--lambda", dest="lambda", type=float, help="Laplace rate")
    common.add_argument("--sigma", type=float, help="Gaussian standard deviation")
    common.add_argument("--halfwidth", type=float, help="Uniform half-width")
    common.add_argument("--gamma", type=float, help="SNR, power over noise variance")
    common.add_argument("--power", type=float)
    common.add_argument("--noise-var", dest="noise_var", type=float)
    common.add_argument("--noise", choices=NOISE_FAMILIES, help="channel noise family")
    common.add_argument("--horizon", type=int)
    common.add_argument("--budget", type=int)
    common.add_argument("--cost", type=float, help="per-transmission cost")
    common.add_argument("--snr", type=float, nargs="+", help="SNR values for sweeps")
    common.add_argument("--episodes", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help=f"output file (default: ${OUT_DIR_ENV} or the working directory)")
    common.add_argument("--workers", type=int, help="worker processes (default: CPU count)")

    parser = argparse.ArgumentParser(prog="remsched", description="Threshold scheduling for remote estimation over a noisy channel.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        ok = COMMANDS[args.command][0](cfg, args.command)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
