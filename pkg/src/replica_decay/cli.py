"""Batch experiment runner: configuration, orchestration and CSV emission.

Every subcommand assembles its configuration from built-in defaults, an
optional JSON config file (--config), dotted-path flag overrides mirroring the
field paths (e.g. --model.d=4 --sim.horizon=30), and the common flags --out,
--seed, --threads. Outputs are plot-ready CSVs plus a manifest.json recording
the resolved config; re-running a manifest's config reproduces the CSV bytes.

Exit codes: 0 success, 2 configuration/validation error, 3 event cap exceeded.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    DecayCurve,
    OverloadDecay,
    geometric_pmf,
    occupancy_parameter,
    overload_phi,
    phi_of_t,
)
from .errors import EventCapExceeded, RegimeRejected, ReplicaDecayError
from .fluctuations import clt_ensemble, empirical_fluctuation
from .fluid import fluid_limit, fluid_numeric
from .model import ModelParams, classify_regime
from .simulate import SimConfig, empirical_occupancy, first_passage_fraction, resolve_threads, run_ensemble

EXPERIMENTS = (
    "simulate",
    "fluid",
    "skorohod",
    "decay",
    "fluct",
    "occupancy",
    "compare",
    "first-passage",
)

_DEFAULTS = {
    "model": {
        "d": 2,
        "lambda": 1.0,
        "mu": 0.1,
        "beta": 2.0,
        "gamma": 0.0,
        "n_servers": 100,
    },
    "sim": {
        "time_scale_exponent": 0,
        "horizon": 10.0,
        "grid_step": 0.1,
        "seed": 0,
        "replications": 1,
        "event_cap": 10**9,
    },
    "out": "out",
    "precision": 17,
    "delta": 0.5,  # first-passage threshold fraction
    "coordinate": None,  # occupancy coordinate, default d-1
    "window": None,  # occupancy window [t1, t2], default around sim horizon end
    "sde_paths": 10000,
    "sde_step": 1e-3,
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _parse_override(token: str, following: list[str]) -> tuple[str, str, int]:
    """Parse --path.to.field=value or --path.to.field value."""
    body = token[2:]
    if "=" in body:
        path, raw = body.split("=", 1)
        return path, raw, 0
    if not following:
        raise ValueError(f"flag {token} is missing a value")
    return body, following[0], 1


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: dict, tokens: list[str]) -> dict:
    """Apply dotted-path overrides like --model.d=4 onto a config dict."""
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ValueError(f"unexpected argument {token!r}")
        path, raw, consumed = _parse_override(token, tokens[i + 1 : i + 2])
        i += 1 + consumed
        node = config
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _coerce(raw)
    return config


def load_config(args, overrides: list[str]) -> dict:
    config = copy.deepcopy(_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            _deep_update(config, json.load(fh))
    apply_overrides(config, overrides)
    if args.out is not None:
        config["out"] = args.out
    if args.seed is not None:
        config["sim"]["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    config["experiment"] = args.experiment
    return config


def _model_params(config: dict, n_servers: int) -> ModelParams:
    m = config["model"]
    lam = m.get("lambda", m.get("lam"))
    return ModelParams(
        d=int(m["d"]),
        lam=float(lam),
        mu=float(m["mu"]),
        beta=float(m["beta"]),
        gamma=float(m.get("gamma", 0.0)),
        n_servers=int(n_servers),
    )


def _sim_config(config: dict) -> SimConfig:
    s = config["sim"]
    return SimConfig(
        horizon=float(s["horizon"]),
        grid_step=float(s["grid_step"]),
        seed=int(s["seed"]),
        replications=int(s["replications"]),
        time_scale_exponent=int(s["time_scale_exponent"]),
        event_cap=int(s["event_cap"]),
    )


def _n_values(config: dict) -> list[int]:
    n = config["model"]["n_servers"]
    values = n if isinstance(n, list) else [n]
    if not values:
        raise ValueError("model.n_servers list must be non-empty")
    return [int(v) for v in values]


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray], precision: int) -> None:
    """Comma-separated, LF endings, floats at `precision` significant digits."""
    rows = len(columns[0])
    for col in columns:
        if len(col) != rows:
            raise ValueError("ragged CSV columns")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            cells = []
            for col in columns:
                value = col[i]
                if isinstance(value, (int, np.integer)):
                    cells.append(str(int(value)))
                else:
                    cells.append(format(float(value), f".{precision}g"))
            fh.write(",".join(cells) + "\n")


class _Runner:
    def __init__(self, config: dict):
        self.config = config
        self.out_dir = Path(config["out"])
        self.precision = int(config["precision"])
        self.threads = config.get("threads")
        self.outputs: list[str] = []
        self.extras: dict = {}
        self.cap_hits = 0

    def write(self, name: str, header: list[str], columns: list[np.ndarray]) -> None:
        path = self.out_dir / name
        _write_csv(path, header, columns, self.precision)
        self.outputs.append(name)

    def finish(self, started: float) -> None:
        manifest = {
            "experiment": self.config["experiment"],
            "version": __version__,
            "config": {k: v for k, v in self.config.items() if k != "threads"},
            "threads": resolve_threads(self.threads),
            "outputs": self.outputs,
            "extras": self.extras,
            "wall_time_s": time.time() - started,
        }
        with open(self.out_dir / "manifest.json", "w", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")


def _suffix(name: str, n: int, multi: bool) -> str:
    if not multi:
        return f"{name}.csv"
    return f"{name}_N{n}.csv"


def run(config: dict) -> int:
    """Execute one experiment; returns the process exit code."""
    started = time.time()
    kind = config["experiment"]
    runner = _Runner(config)
    try:
        n_values = _n_values(config)
        cfg = _sim_config(config)
        multi = len(n_values) > 1
        runner.out_dir.mkdir(parents=True, exist_ok=True)

        for n in n_values:
            params = _model_params(config, n)
            regime = classify_regime(params)
            if regime.is_rejected:
                raise RegimeRejected(f"model.n_servers={n}: {regime.reason}")

            if kind == "simulate":
                _run_simulate(runner, params, cfg, multi)
            elif kind == "fluid":
                _run_fluid(runner, params, cfg, multi)
                break  # scale-free: the fluid table does not depend on N
            elif kind == "skorohod":
                _run_skorohod(runner, params, cfg, multi)
                break
            elif kind == "decay":
                _run_decay(runner, params, cfg, multi)
                break
            elif kind == "fluct":
                _run_fluct(runner, params, cfg, multi)
            elif kind == "occupancy":
                _run_occupancy(runner, params, cfg, multi)
            elif kind == "compare":
                _run_compare(runner, params, cfg, multi)
            elif kind == "first-passage":
                _run_first_passage(runner, params, cfg, multi)
            else:
                raise ValueError(f"unknown experiment {kind!r}")

        runner.finish(started)
    except EventCapExceeded as exc:
        print(f"error: event cap exceeded: {exc}", file=sys.stderr)
        return 3
    except (RegimeRejected, ReplicaDecayError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if runner.cap_hits:
        print(f"error: {runner.cap_hits} replication(s) hit the event cap", file=sys.stderr)
        return 3
    return 0


def _run_simulate(runner, params, cfg, multi):
    stats = run_ensemble(params, cfg, keep_paths=True, threads=runner.threads)
    runner.cap_hits += stats.n_cap_hits
    d = params.d
    runner.write(
        _suffix("trajectory", params.n_servers, multi),
        ["t"] + [f"x_{k}" for k in range(d + 1)],
        [stats.grid] + [stats.paths[0, :, k] for k in range(d + 1)],
    )
    header = ["t"] + [f"mean_{k}" for k in range(d + 1)] + [f"var_{k}" for k in range(d + 1)]
    cols = [stats.grid] + [stats.mean[:, k] for k in range(d + 1)] + [
        stats.var[:, k] for k in range(d + 1)
    ]
    runner.write(_suffix("stats", params.n_servers, multi), header, cols)


def _run_fluid(runner, params, cfg, multi):
    sol = fluid_limit(params)
    grid = cfg.grid
    x = sol.x_grid(grid)
    runner.write(
        "fluid.csv",
        ["t"] + [f"x_{k}" for k in range(params.d + 1)],
        [grid] + [x[:, k] for k in range(params.d + 1)],
    )
    runner.extras["thresholds"] = {
        str(l): (None if math.isinf(t) else t) for l, t in sorted(sol.thresholds.items())
    }
    runner.extras["regime"] = {"kind": sol.regime.kind, "p": sol.regime.p}


def _run_skorohod(runner, params, cfg, multi):
    result = fluid_numeric(params, cfg.grid)
    sol = result.solution
    k = sol.x.dimension
    header = ["t"] + [f"s_{j + 1}" for j in range(k)] + [f"r_{j + 1}" for j in range(k)]
    cols = [cfg.grid] + [sol.x.values[:, j] for j in range(k)] + [
        sol.r.values[:, j] / params.lam for j in range(k)
    ]
    runner.write("skorohod.csv", header, cols)
    runner.extras["picard_iterations"] = result.iterations


def _run_decay(runner, params, cfg, multi):
    curve = DecayCurve(params)
    grid = cfg.grid
    phi = phi_of_t(curve, grid)
    r = params.d * params.mu * (params.beta - phi) / params.lam
    runner.write("decay.csv", ["t", "phi", "r"], [grid, phi, r])
    runner.extras["decay_constant"] = curve.c


def _run_fluct(runner, params, cfg, multi):
    if cfg.time_scale_exponent != params.d - 1:
        raise ValueError(
            f"fluct needs sim.time_scale_exponent = d-1 = {params.d - 1}, "
            f"got {cfg.time_scale_exponent}"
        )
    curve = DecayCurve(params)
    stats = run_ensemble(params, cfg, keep_paths=True, threads=runner.threads)
    runner.cap_hits += stats.n_cap_hits
    rescaled = empirical_fluctuation(stats, curve)
    sde = clt_ensemble(
        params,
        _sde_grid(runner.config, cfg),
        int(runner.config["sde_paths"]),
        cfg.seed,
    )
    idx = np.searchsorted(sde.grid, stats.grid)
    idx = np.clip(idx, 0, sde.grid.shape[0] - 1)
    runner.write(
        _suffix("fluct", params.n_servers, multi),
        ["t", "mean_W", "var_W_sde", "var_W_emp"],
        [
            stats.grid,
            sde.mean[idx],
            sde.var[idx],
            rescaled.var(axis=0, ddof=1) if stats.replications > 1 else np.zeros_like(stats.grid),
        ],
    )


def _sde_grid(config: dict, cfg: SimConfig) -> np.ndarray:
    h = float(config["sde_step"])
    n = int(round(cfg.horizon / h)) + 1
    return np.linspace(0.0, cfg.horizon, n)


def _run_occupancy(runner, params, cfg, multi):
    coordinate = runner.config["coordinate"]
    coordinate = params.d - 1 if coordinate is None else int(coordinate)
    window = runner.config["window"]
    if window is None:
        window = [0.75 * cfg.horizon, cfg.horizon]
    t1, t2 = float(window[0]), float(window[1])
    hist = empirical_occupancy(params, cfg, coordinate, (t1, t2), threads=runner.threads)
    curve = DecayCurve(params)
    r = occupancy_parameter(curve, 0.5 * (t1 + t2))
    pmf = geometric_pmf(r, hist.weights.shape[0])
    runner.write(
        _suffix("occupancy", params.n_servers, multi),
        ["value", "empirical", "geometric"],
        [np.arange(hist.weights.shape[0]), hist.weights, pmf],
    )
    runner.extras.setdefault("occupancy", {})[str(params.n_servers)] = {
        "r": r,
        "tv_distance": hist.tv_distance(geometric_pmf(r, 4096)),
    }


def _run_compare(runner, params, cfg, multi):
    regime = classify_regime(params)
    stats = run_ensemble(params, cfg, threads=runner.threads)
    runner.cap_hits += stats.n_cap_hits
    if regime.is_overloaded and cfg.time_scale_exponent == 0:
        reference = fluid_limit(params).x_grid(stats.grid)
    elif regime.is_stable and cfg.time_scale_exponent == params.d - 1:
        curve = DecayCurve(params)
        phi = np.asarray(phi_of_t(curve, stats.grid))
        reference = np.zeros_like(stats.mean)
        reference[:, 0] = phi
        reference[:, params.d] = params.beta - phi
    else:
        raise ValueError(
            "compare supports overloaded runs at q=0 (fluid reference) or "
            "stable runs at q=d-1 (decay-law reference)"
        )
    err = stats.mean - reference
    d = params.d
    header = (
        ["t"]
        + [f"sim_{k}" for k in range(d + 1)]
        + [f"fluid_{k}" for k in range(d + 1)]
        + [f"err_{k}" for k in range(d + 1)]
    )
    cols = (
        [stats.grid]
        + [stats.mean[:, k] for k in range(d + 1)]
        + [reference[:, k] for k in range(d + 1)]
        + [err[:, k] for k in range(d + 1)]
    )
    runner.write(_suffix("compare", params.n_servers, multi), header, cols)
    runner.extras.setdefault("sup_error", {})[str(params.n_servers)] = {
        "per_coordinate": np.abs(err).max(axis=0).tolist(),
        "overall": float(np.abs(err).max()),
    }


def _run_first_passage(runner, params, cfg, multi):
    delta = float(runner.config["delta"])
    times = first_passage_fraction(params, delta, cfg, threads=runner.threads)
    scale = float(params.n_servers) ** (params.d - 1)
    runner.write(
        _suffix("first_passage", params.n_servers, multi),
        ["replication", "T", "T_over_scale"],
        [np.arange(times.shape[0]), times, times / scale],
    )
    runner.extras.setdefault("first_passage", {})[str(params.n_servers)] = {
        "delta": delta,
        "mean_T_over_scale": float(times.mean() / scale),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replica-decay",
        description="Experiments on the file-duplication network: exact simulation "
        "against fluid limits, the decay law, fluctuations and overload equilibria.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--threads", type=int, help="worker cap (default: REPLICA_DECAY_THREADS or cores)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, overrides = parser.parse_known_args(argv)
    try:
        config = load_config(args, overrides)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
