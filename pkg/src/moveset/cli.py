"""Batch experiment driver.

Three subcommands share one configuration schema::

    moveset run --problem burgers1d --mode mspinn --scale desk --seed 7 --out runs/b1d
    moveset mmpde-demo --problem gaussian-peak --c 10 --iterations 2 --out runs/demo
    moveset phenomenon --scale desk --out runs/phen

A run starts from the preset for ``(scale, problem)``, overlays the JSON file
given with ``--config`` and then the command-line flags. The fully resolved
configuration is written into ``report.json`` under ``"config"`` and can be
passed back with ``--config`` to replay the run. Unknown keys are errors.

Config sections (all optional in a file)::

    {"command": "run", "problem": "burgers1d", "mode": "mspinn", "scale": "desk", "seed": 0,
     "pinn":   {"lr", "alpha1", "alpha2", "hidden_layers", "hidden_width", "dtype"},
     "mmpde":  {"lr", "hidden_layers", "hidden_width", "dtype", "epochs", "iterations"},
     "mspinn": {"pretrain_epochs", "mmpde_epochs", "formal_epochs", "mmpde_iterations", "t_ref",
                "interior_counts", "boundary_count", "test_counts", "eval_times"},
     "monitor": {"form", "c0", "cu", "cgrad", "a", "b"},
     "demo": {"field", "c", "grid"},
     "phenomenon": {"k", "m_r", "epochs", "smoothing"}}

Exit status: 0 success, 2 bad configuration, 3 numeric abort, 4 file error.
Failures print ``error [<stage>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import problems
from .autodiff import ConfigurationError, NumericError
from .metrics_io import RunReport, emit, relative_error_inf
from .mmpde import MmpdeConfig, train_mmpde_iterative
from .monitor import MonitorSpec
from .mspinn import MsPinnConfig, StageError, run_mspinn, run_pinn_baseline
from .network import NetworkConfig, forward_numpy
from .pinn import PinnConfig, train_pinn

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

PINN_KEYS = {"lr", "alpha1", "alpha2", "hidden_layers", "hidden_width", "dtype"}
MMPDE_KEYS = {"lr", "hidden_layers", "hidden_width", "dtype", "epochs", "iterations"}
MSPINN_KEYS = {"pretrain_epochs", "mmpde_epochs", "formal_epochs", "mmpde_iterations", "t_ref", "interior_counts",
               "boundary_count", "test_counts", "eval_times"}
DEMO_KEYS = {"field", "c", "grid"}
PHENOMENON_KEYS = {"k", "m_r", "epochs", "smoothing"}
MONITOR_KEYS = {"form", "c0", "cu", "cgrad", "a", "b"}
SECTIONS = {"pinn": PINN_KEYS, "mmpde": MMPDE_KEYS, "mspinn": MSPINN_KEYS, "demo": DEMO_KEYS,
            "phenomenon": PHENOMENON_KEYS, "monitor": MONITOR_KEYS}
TOP_KEYS = {"command", "problem", "mode", "scale", "seed"} | set(SECTIONS)

# Per-problem budgets. "paper" copies the published settings; "desk" cuts
# epochs and halves the interior grid per spatial axis so a run takes minutes.
MSPINN_PRESETS = {
    "paper": {
        "poisson2d-one-peak": dict(pretrain_epochs=20000, mmpde_epochs=20000, formal_epochs=40000),
        "poisson2d-two-peaks": dict(pretrain_epochs=20000, mmpde_epochs=20000, formal_epochs=40000),
        "burgers1d": dict(pretrain_epochs=20000, mmpde_epochs=20000, formal_epochs=40000),
        "burgers2d": dict(pretrain_epochs=5000, mmpde_epochs=10000, formal_epochs=15000),
    },
    "desk": {
        "poisson2d-one-peak": dict(pretrain_epochs=2000, mmpde_epochs=2000, formal_epochs=4000,
                                   interior_counts=[50, 50]),
        "poisson2d-two-peaks": dict(pretrain_epochs=2000, mmpde_epochs=2000, formal_epochs=4000,
                                    interior_counts=[50, 50]),
        "burgers1d": dict(pretrain_epochs=3000, mmpde_epochs=3000, formal_epochs=7000, interior_counts=[100, 50]),
        "burgers2d": dict(pretrain_epochs=1000, mmpde_epochs=2000, formal_epochs=3000,
                          interior_counts=[40, 40, 8], boundary_count=2000),
    },
}
MMPDE_PRESETS = {"paper": dict(lr=1e-4, hidden_layers=8, hidden_width=20, dtype="float32"),
                 "desk": dict(lr=1e-4, hidden_layers=8, hidden_width=20, dtype="float32")}
DEMO_PRESETS = {"paper": dict(grid=[80, 80], epochs=20000), "desk": dict(grid=[40, 40], epochs=3000)}
PHENOMENON_PRESETS = {"paper": dict(k=[2, 4, 8, 16], m_r=[300], epochs=20000, smoothing=100),
                      "desk": dict(k=[2, 4, 8, 16], m_r=[300], epochs=5000, smoothing=100)}


class StagedError(Exception):
    def __init__(self, stage, exc):
        super().__init__(str(exc))
        self.stage, self.exc = stage, exc


# --- configuration ----------------------------------------------------------------

def _check_keys(where, d, allowed):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {sorted(unknown)}")


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    _check_keys("config", doc, TOP_KEYS)
    for name, allowed in SECTIONS.items():
        if name in doc:
            _check_keys(f"config.{name}", doc[name], allowed)
    return doc


def _pinn_preset(problem_key):
    cfg = problems.get_problem(problem_key).pinn
    return dict(lr=cfg.lr, alpha1=cfg.alpha1, alpha2=cfg.alpha2, hidden_layers=cfg.net.hidden_layers,
                hidden_width=cfg.net.hidden_width, dtype=cfg.dtype)


def resolve(command: str, file_cfg: dict | None = None, flags: dict | None = None) -> dict:
    """Preset, then file, then flags; returns the complete configuration document."""
    file_cfg = copy.deepcopy(file_cfg or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    if file_cfg.get("command", command) != command:
        raise ConfigurationError(f"config was written for {file_cfg['command']!r}, not {command!r}")
    scale = flags.get("scale", file_cfg.get("scale", "desk"))
    if scale not in ("paper", "desk"):
        raise ConfigurationError(f"scale must be 'paper' or 'desk', got {scale!r}")
    seed = int(flags.get("seed", file_cfg.get("seed", 0)))
    if not 0 <= seed < 2**64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    out = {"command": command, "scale": scale, "seed": seed}

    if command == "run":
        key = flags.get("problem", file_cfg.get("problem"))
        if key is None:
            raise ConfigurationError("run needs --problem")
        if key not in MSPINN_PRESETS[scale]:
            raise ConfigurationError(f"run supports {sorted(MSPINN_PRESETS[scale])}, got {key!r}")
        mode = flags.get("mode", file_cfg.get("mode", "mspinn"))
        if mode not in ("pinn", "mspinn"):
            raise ConfigurationError(f"mode must be 'pinn' or 'mspinn', got {mode!r}")
        prob = problems.get_problem(key)
        ms = dict(mmpde_iterations=1, t_ref=prob.t_ref, interior_counts=list(prob.interior_counts),
                  boundary_count=prob.boundary_count, test_counts=list(prob.test_counts),
                  eval_times=list(prob.eval_times))
        ms.update(copy.deepcopy(MSPINN_PRESETS[scale][key]))
        ms.update(file_cfg.get("mspinn", {}))
        if "iterations" in flags:
            ms["mmpde_iterations"] = int(flags["iterations"])
        mm = {k: v for k, v in MMPDE_PRESETS[scale].items()}
        mm.update({k: v for k, v in file_cfg.get("mmpde", {}).items() if k not in ("epochs", "iterations")})
        if set(file_cfg.get("mmpde", {})) & {"epochs", "iterations"}:
            raise ConfigurationError("for run, set MMPDE budgets through mspinn.mmpde_epochs/mmpde_iterations")
        out.update(problem=key, mode=mode, mspinn=ms, pinn={**_pinn_preset(key), **file_cfg.get("pinn", {})},
                   mmpde=mm, monitor={**prob.monitor.to_dict(), **file_cfg.get("monitor", {})})
    elif command == "mmpde-demo":
        demo = {"field": "gaussian-peak", "c": 10.0, "grid": DEMO_PRESETS[scale]["grid"]}
        demo.update(file_cfg.get("demo", {}))
        if "problem" in flags:
            demo["field"] = flags["problem"]
        if "c" in flags:
            demo["c"] = float(flags["c"])
        _, mon = problems.demo_field(demo["field"], demo["c"])
        mm = dict(MMPDE_PRESETS[scale], epochs=DEMO_PRESETS[scale]["epochs"], iterations=1)
        mm.update(file_cfg.get("mmpde", {}))
        if "iterations" in flags:
            mm["iterations"] = int(flags["iterations"])
        out.update(demo=demo, mmpde=mm, monitor={**mon.to_dict(), **file_cfg.get("monitor", {})})
    elif command == "phenomenon":
        ph = copy.deepcopy(PHENOMENON_PRESETS[scale])
        ph.update(file_cfg.get("phenomenon", {}))
        out.update(phenomenon=ph, pinn={**_pinn_preset("poisson1d-phenomenon"), **file_cfg.get("pinn", {})})
    else:
        raise ConfigurationError(f"unknown command {command!r}")
    build(out)  # validate eagerly
    return out


def _pinn_config(d: dict, input_dim: int) -> dict:
    net = NetworkConfig(input_dim, 1, int(d["hidden_layers"]), int(d["hidden_width"]))
    return dict(net=net, lr=float(d["lr"]), alpha1=float(d["alpha1"]), alpha2=float(d["alpha2"]), dtype=d["dtype"])


def _mmpde_config(d: dict, monitor: MonitorSpec, dim: int, epochs: int, iterations: int) -> MmpdeConfig:
    net = NetworkConfig(dim, dim, int(d["hidden_layers"]), int(d["hidden_width"]))
    return MmpdeConfig(net=net, epochs=int(epochs), lr=float(d["lr"]), iterations=int(iterations), monitor=monitor,
                       dtype=d["dtype"])


def _tuple(v):
    return None if v is None else tuple(v)


def build(cfg: dict):
    """Library objects for a resolved configuration."""
    cmd = cfg["command"]
    if cmd == "run":
        prob = problems.get_problem(cfg["problem"])
        ms = cfg["mspinn"]
        monitor = MonitorSpec.from_dict(cfg["monitor"])
        mm = _mmpde_config(cfg["mmpde"], monitor, len(prob.domain.spatial_dims), ms["mmpde_epochs"],
                           ms["mmpde_iterations"])
        pinn = PinnConfig(**_pinn_config(cfg["pinn"], prob.domain.ndim))
        conf = MsPinnConfig(
            pretrain_epochs=int(ms["pretrain_epochs"]), mmpde_epochs=int(ms["mmpde_epochs"]),
            formal_epochs=int(ms["formal_epochs"]), mmpde_iterations=int(ms["mmpde_iterations"]), monitor=monitor,
            pinn=pinn, mmpde=mm, t_ref=ms["t_ref"], seed=cfg["seed"], interior_counts=_tuple(ms["interior_counts"]),
            boundary_count=int(ms["boundary_count"]), test_counts=_tuple(ms["test_counts"]),
            eval_times=_tuple(ms["eval_times"]))
        if len(conf.interior_counts) != prob.domain.ndim or len(conf.test_counts) != prob.domain.ndim:
            raise ConfigurationError(f"{prob.name} needs {prob.domain.ndim} grid counts per axis list")
        return prob, conf
    if cmd == "mmpde-demo":
        d = cfg["demo"]
        field_, _ = problems.demo_field(d["field"], d["c"])
        monitor = MonitorSpec.from_dict(cfg["monitor"])
        if monitor.uses_field and field_ is None:
            raise ConfigurationError("the constant demo has no field; its monitor must be constant")
        mm = cfg["mmpde"]
        grid = tuple(int(n) for n in d["grid"])
        if len(grid) != 2 or min(grid) < 2:
            raise ConfigurationError("demo.grid must be two counts >= 2")
        return field_, _mmpde_config(mm, monitor, 2, mm["epochs"], mm["iterations"]), grid
    ph = cfg["phenomenon"]
    ks, mrs = [int(k) for k in ph["k"]], [int(m) for m in ph["m_r"]]
    if not ks or not mrs or min(mrs) < 1 or int(ph["epochs"]) < 1 or int(ph["smoothing"]) < 1:
        raise ConfigurationError("phenomenon needs nonempty k and m_r lists and positive epochs/smoothing")
    return ks, mrs, PinnConfig(epochs=int(ph["epochs"]), **_pinn_config(cfg["pinn"], 1))


# --- commands ---------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError as exc:
        raise StagedError(exc.stage, exc.cause) from exc
    except (NumericError, ConfigurationError, OSError) as exc:
        raise StagedError(name, exc) from exc


def cmd_run(cfg: dict, out_dir) -> list[str]:
    prob, conf = build(cfg)
    runner = run_mspinn if cfg["mode"] == "mspinn" else run_pinn_baseline
    report = _stage(cfg["mode"], runner, conf, prob)
    report.config = cfg
    return _stage("emit", emit, report, out_dir)


def cmd_mmpde_demo(cfg: dict, out_dir) -> list[str]:
    field_, mm, grid = build(cfg)
    pts = problems.sample_uniform_grid(problems.DEMO_DOMAIN, grid)
    t0 = time.perf_counter()
    results = _stage("mmpde", train_mmpde_iterative, replace(mm, net=replace(mm.net, seed=cfg["seed"])), pts, field_)
    report = RunReport(config=cfg, wall_clock={"mmpde": time.perf_counter() - t0})
    report.points["points_iter0"] = pts
    for i, res in enumerate(results, start=1):
        report.histories[f"mmpde_iter{i}"] = ("mmpde", res.history)
        report.points[f"points_iter{i}"] = res.points
        report.warnings += res.warnings
    b = problems.DEMO_DOMAIN.on_boundary(pts.coords)
    final = results[-1].points.coords
    report.extra["max_displacement"] = float(np.max(np.abs(final - pts.coords)))
    report.extra["boundary_max_displacement"] = float(np.max(np.abs(final[b] - pts.coords[b])))
    return _stage("emit", emit, report, out_dir)


def smoothed_final(history, window: int) -> float:
    losses = np.array([row[1] for row in history], dtype=np.float64)
    return float(np.mean(losses[-window:]))


def cmd_phenomenon(cfg: dict, out_dir) -> list[str]:
    ks, mrs, pconf = build(cfg)
    window = int(cfg["phenomenon"]["smoothing"])
    rows = []
    report = RunReport(config=cfg)
    t0 = time.perf_counter()
    for k in ks:
        prob = problems.poisson1d_phenomenon(k)
        boundary = prob.boundary(cfg["seed"])
        for m in mrs:
            interior = prob.interior((m,))
            res = _stage("phenomenon", train_pinn, replace(pconf, net=pconf.net.with_seed(cfg["seed"])),
                         prob.operator, interior, boundary)
            x = np.linspace(prob.domain.lower[0], prob.domain.upper[0], prob.test_counts[0])[:, None]
            e = relative_error_inf(forward_numpy(res.params, x)[:, 0], prob.truth(x))
            min_loss = min(min(r[1] for r in res.history), res.final_loss)
            rows.append((k, m, min_loss, smoothed_final(res.history, window), e))
            report.histories[f"k{k}_mr{m}"] = ("pinn", res.history)
    report.tables["phenomenon"] = (("k", "m_r", "min_loss", "smoothed_final_loss", "e"), rows)
    report.wall_clock = {"phenomenon": time.perf_counter() - t0}
    return _stage("emit", emit, report, out_dir)


COMMANDS = {"run": cmd_run, "mmpde-demo": cmd_mmpde_demo, "phenomenon": cmd_phenomenon}


# --- entry point ------------------------------------------------------------------

def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moveset", description="MMPDE-Net sampling and MS-PINN experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "PINN baseline or MS-PINN on a benchmark"),
                        ("mmpde-demo", "move a uniform grid with an analytic monitor"),
                        ("phenomenon", "1D Poisson frequency / sample-count study")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--scale", choices=("paper", "desk"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        if name != "phenomenon":
            p.add_argument("--problem", help="problem key (run) or demo field (mmpde-demo)")
            p.add_argument("--iterations", type=int, help="MMPDE-Net iterations")
        if name == "run":
            p.add_argument("--mode", choices=("pinn", "mspinn"))
        if name == "mmpde-demo":
            p.add_argument("--c", type=float, help="peak parameter of the gaussian-peak field")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    stage = "config"
    try:
        file_cfg = load_config_file(args.config) if args.config else None
        cfg = resolve(args.command, file_cfg, flags)
        stage = args.command
        manifest = COMMANDS[args.command](cfg, args.out)
    except StagedError as exc:
        return _fail(exc.stage, exc.exc)
    except (ConfigurationError, NumericError, OSError, ValueError) as exc:
        return _fail(stage, exc)
    print(f"wrote {len(manifest)} files to {args.out}")
    return 0


def _fail(stage, exc) -> int:
    print(f"error [{stage}]: {exc}", file=sys.stderr)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
