"""The three-stage MS-PINN pipeline and the plain-PINN baseline.

Stages: pre-train a PINN on the uniform interior set, move the interior
points with MMPDE-Net using a monitor built from the frozen pre-trained
network, then continue training the same parameters on the moved points.
The boundary/initial set is never moved. For time-dependent problems only
the spatial lattice is moved (with the monitor at ``t_ref``) and the moved
spatial set is replicated on every time slice of the interior grid.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .autodiff import ConfigurationError
from .metrics_io import GridSpec, RunReport, evaluate_on_grid, relative_error_inf
from .mmpde import Domain, MmpdeConfig, PointSet, train_mmpde_iterative
from .monitor import MonitorSpec, PinnField
from .network import NetworkParams
from .pinn import PinnConfig, mean_squared_residual, train_pinn
from .problems import ProblemSpec, interior_grid


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it for the exit message."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Seeds:
    pinn: int
    mmpde: int
    boundary: int

    @classmethod
    def derive(cls, seed: int) -> Seeds:
        """Independent per-module seeds from one run seed."""
        a, b, c = np.random.SeedSequence(int(seed)).generate_state(3)
        return cls(int(a), int(b), int(c))


@dataclass(frozen=True)
class MsPinnConfig:
    pretrain_epochs: int = 20000
    mmpde_epochs: int = 20000
    formal_epochs: int = 40000
    mmpde_iterations: int = 1
    monitor: MonitorSpec | None = None  # None: the problem's default
    pinn: PinnConfig | None = None
    mmpde: MmpdeConfig = MmpdeConfig()
    t_ref: float | None = None
    seed: int = 0
    interior_counts: tuple | None = None
    boundary_count: int | None = None
    test_counts: tuple | None = None
    eval_times: tuple | None = None

    def __post_init__(self):
        if min(self.pretrain_epochs, self.mmpde_epochs, self.formal_epochs, self.mmpde_iterations) < 1:
            raise ConfigurationError("all stage budgets and the iteration count must be >= 1")

    @property
    def seeds(self) -> Seeds:
        return Seeds.derive(self.seed)


def _sets(config: MsPinnConfig, problem: ProblemSpec):
    counts = tuple(config.interior_counts or problem.interior_counts)
    interior = problem.interior(counts)
    boundary = problem.boundary(config.seeds.boundary, config.boundary_count or problem.boundary_count)
    return counts, interior, boundary


def _pinn_config(config: MsPinnConfig, problem: ProblemSpec, epochs: int) -> PinnConfig:
    return replace(config.pinn or problem.pinn, epochs=epochs)


def evaluate_errors(params: NetworkParams, problem: ProblemSpec, test_counts=None, eval_times=None) -> dict:
    """e(u) on the uniform test grid, per time slice for time-dependent problems."""
    counts = tuple(test_counts or problem.test_counts)
    dom = problem.domain
    td = dom.temporal_dim
    if td is None:
        spec = GridSpec.sweep_all(dom, counts)
        return {"e": relative_error_inf(evaluate_on_grid(params, spec), evaluate_on_grid(problem.truth, spec))}
    spatial_counts = [c for k, c in enumerate(counts) if k != td]
    out = {}
    for t in eval_times or problem.eval_times:
        spec = GridSpec.sweep_all(dom, spatial_counts, fixed={td: t})
        out[f"e_t{t:g}"] = relative_error_inf(evaluate_on_grid(params, spec), evaluate_on_grid(problem.truth, spec))
    return out


def _spatial_lattice(problem: ProblemSpec, counts) -> tuple[PointSet, np.ndarray | None]:
    dom = problem.domain
    td = dom.temporal_dim
    if td is None:
        return interior_grid(dom, counts), None
    sp_counts = [c for k, c in enumerate(counts) if k != td]
    spatial = interior_grid(dom.spatial(), sp_counts)
    times = np.linspace(dom.lower[td], dom.upper[td], counts[td] + 2)[1:-1]
    return spatial, times


def _replicate(moved: np.ndarray, times, domain: Domain) -> PointSet:
    """Space-time set with the moved spatial points on every time slice (time fastest)."""
    if times is None:
        return PointSet(moved, domain, "mmpde")
    td = domain.temporal_dim
    rows = []
    for p in moved:
        for t in times:
            row = list(p)
            row.insert(td, t)
            rows.append(row)
    return PointSet(np.array(rows), domain, "mmpde")


def run_mspinn(config: MsPinnConfig, problem: ProblemSpec, out_dir=None) -> RunReport:
    """Pre-train, move the interior points, train on; returns the run report.

    ``report.extra`` holds the Theorem-style residual comparison and
    ``report.artifacts`` (not serialized) keeps the parameter sets and point
    sets for callers that want to inspect them.
    """
    counts, interior, boundary = _sets(config, problem)
    seeds = config.seeds
    report = RunReport(config=_snapshot(config, problem, "mspinn"))
    clock = {}

    t0 = time.perf_counter()
    try:
        pre = train_pinn(_pinn_config(config, problem, config.pretrain_epochs), problem.operator, interior, boundary,
                         seed=seeds.pinn)
    except Exception as exc:
        raise StageError("pretrain", exc) from exc
    clock["pretrain"] = time.perf_counter() - t0
    report.histories["pretrain"] = ("pinn", pre.history)

    t0 = time.perf_counter()
    spatial, times = _spatial_lattice(problem, counts)
    sp_dims = problem.domain.spatial_dims
    t_ref = config.t_ref if config.t_ref is not None else problem.t_ref
    field_ = PinnField(pre.params, ndim=len(sp_dims), t_ref=t_ref if problem.domain.temporal_dim is not None else None)
    mcfg = replace(config.mmpde, epochs=config.mmpde_epochs, iterations=config.mmpde_iterations,
                   monitor=config.monitor or problem.monitor,
                   net=replace(config.mmpde.net, seed=seeds.mmpde)).with_dim(len(sp_dims))
    try:
        results = train_mmpde_iterative(mcfg, spatial, field_)
    except Exception as exc:
        raise StageError("mmpde", exc) from exc
    clock["mmpde"] = time.perf_counter() - t0
    for i, res in enumerate(results, start=1):
        report.histories[f"mmpde_iter{i}"] = ("mmpde", res.history)
        report.points[f"points_iter{i}"] = res.points
        report.warnings += res.warnings
    moved = _replicate(results[-1].points.coords, times, problem.domain)

    t0 = time.perf_counter()
    try:
        formal = train_pinn(_pinn_config(config, problem, config.formal_epochs), problem.operator, moved, boundary,
                            initial_params=pre.params)
    except Exception as exc:
        raise StageError("formal", exc) from exc
    clock["formal"] = time.perf_counter() - t0
    report.histories["formal"] = ("pinn", formal.history)

    t0 = time.perf_counter()
    report.errors.update(evaluate_errors(formal.params, problem, config.test_counts, config.eval_times))
    report.extra["mean_sq_residual_moved"] = mean_squared_residual(formal.params, problem.operator, moved.coords)
    report.extra["mean_sq_residual_uniform"] = mean_squared_residual(formal.params, problem.operator, interior.coords)
    clock["evaluate"] = time.perf_counter() - t0
    report.wall_clock = clock
    report.artifacts = {"pretrain": pre, "formal": formal, "mmpde": results, "interior": interior,
                        "moved": moved, "boundary": boundary}
    return report


def run_pinn_baseline(config: MsPinnConfig, problem: ProblemSpec, out_dir=None) -> RunReport:
    """Plain PINN for ``pretrain_epochs + formal_epochs`` on the uniform set."""
    counts, interior, boundary = _sets(config, problem)
    report = RunReport(config=_snapshot(config, problem, "pinn"))
    t0 = time.perf_counter()
    try:
        res = train_pinn(_pinn_config(config, problem, config.pretrain_epochs + config.formal_epochs),
                         problem.operator, interior, boundary, seed=config.seeds.pinn)
    except Exception as exc:
        raise StageError("pinn", exc) from exc
    report.histories["pinn"] = ("pinn", res.history)
    t1 = time.perf_counter()
    report.errors.update(evaluate_errors(res.params, problem, config.test_counts, config.eval_times))
    report.extra["mean_sq_residual_uniform"] = mean_squared_residual(res.params, problem.operator, interior.coords)
    report.wall_clock = {"pinn": t1 - t0, "evaluate": time.perf_counter() - t1}
    report.artifacts = {"pinn": res, "interior": interior, "boundary": boundary}
    return report



def _snapshot(config: MsPinnConfig, problem: ProblemSpec, mode: str) -> dict:
    return {"mode": mode, "problem": problem.name, "mspinn": _jsonable(asdict(config))}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
