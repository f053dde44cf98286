"""Error metric, dense-grid evaluation and result files.

Grids are row-major with the last swept dimension varying fastest. CSV files
use ``\\n`` line endings, a header row and ``repr`` floats (shortest string
that round-trips), so re-emitting the same numbers gives the same bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ConfigurationError
from .mmpde import PointSet
from .network import NetworkParams, forward_numpy


class UndefinedMetricError(ArithmeticError):
    """The reference field is identically zero, so a relative error is undefined."""


@dataclass(frozen=True)
class GridSpec:
    """Per dimension either ``("sweep", lo, hi, n)`` or ``("fixed", value)``."""

    axes: tuple
    names: tuple = ()

    def __post_init__(self):
        axes = tuple(tuple(a) for a in self.axes)
        for a in axes:
            ok = (a[0] == "sweep" and len(a) == 4 and int(a[3]) >= 1) or (a[0] == "fixed" and len(a) == 2)
            if not ok:
                raise ConfigurationError(f"bad grid axis {a}")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "names", tuple(self.names) or tuple(f"d{k}" for k in range(len(axes))))

    @classmethod
    def sweep_all(cls, domain, counts, fixed=None, names=None) -> GridSpec:
        """Sweep each dimension of ``domain`` with ``counts``; ``fixed`` maps dim -> value."""
        fixed = fixed or {}
        axes, c = [], iter(counts)
        for k in range(domain.ndim):
            if k in fixed:
                axes.append(("fixed", float(fixed[k])))
            else:
                axes.append(("sweep", domain.lower[k], domain.upper[k], int(next(c))))
        return cls(tuple(axes), tuple(names or domain.column_names()))

    @property
    def shape(self) -> tuple:
        return tuple(int(a[3]) for a in self.axes if a[0] == "sweep")

    def points(self) -> np.ndarray:
        cols = [np.linspace(a[1], a[2], int(a[3])) if a[0] == "sweep" else np.array([a[1]]) for a in self.axes]
        mesh = np.meshgrid(*cols, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {"axes": [list(a) for a in self.axes], "names": list(self.names), "order": "row-major, last swept fastest"}


@dataclass(frozen=True)
class FieldGrid:
    spec: GridSpec
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != int(np.prod(self.spec.shape)):
            raise ConfigurationError(f"{v.size} values for grid of shape {self.spec.shape}")
        object.__setattr__(self, "values", v)

    def array(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)


def relative_error_inf(approx: FieldGrid | np.ndarray, truth: FieldGrid | np.ndarray) -> float:
    """e(u) = max|u* − u| / max|u*|."""
    a = approx.values if isinstance(approx, FieldGrid) else np.asarray(approx, dtype=np.float64).ravel()
    b = truth.values if isinstance(truth, FieldGrid) else np.asarray(truth, dtype=np.float64).ravel()
    if isinstance(approx, FieldGrid) and isinstance(truth, FieldGrid) and approx.spec != truth.spec:
        raise ConfigurationError("grids differ")
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    norm = np.max(np.abs(b))
    if norm == 0:
        raise UndefinedMetricError("reference field is zero on the grid")
    return float(np.max(np.abs(b - a)) / norm)


def evaluate_on_grid(field_, spec: GridSpec, provenance=None) -> FieldGrid:
    """Evaluate an exact field, a reference callable or a network on the grid points."""
    P = spec.points()
    if isinstance(field_, NetworkParams):
        vals, prov = forward_numpy(field_, P)[:, 0], "network"
    elif hasattr(field_, "numpy"):
        vals, prov = field_.numpy(P), "exact"
    elif callable(field_):
        vals, prov = field_(P), "reference"
    else:
        raise ConfigurationError(f"cannot evaluate {type(field_).__name__} on a grid")
    return FieldGrid(spec, np.asarray(vals, dtype=np.float64) * np.ones(len(P)), provenance or prov)


# --- serialization ------------------------------------------------------------

def fmt(v) -> str:
    return repr(float(v))


def write_csv(path: Path, header, rows) -> Path:
    try:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, (int, np.integer, str)) else fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return Path(path)


def write_json(path: Path, obj) -> Path:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return Path(path)


HISTORY_HEADER = {
    "pinn": ("epoch", "loss", "residual_term", "boundary_term"),
    "mmpde": ("epoch", "loss"),
}


@dataclass
class RunReport:
    """Everything one experiment produced.

    ``histories`` maps a stage name to ``(kind, rows)`` with ``kind`` in
    ``HISTORY_HEADER``; ``points`` and ``grids`` map file stems to data.
    Wall-clock times are written to ``timing.json`` next to ``report.json`` so
    the report itself is reproducible byte for byte.
    """

    config: dict
    histories: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # stem -> (header, rows)
    warnings: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)  # in-memory only


def emit(report: RunReport, out_dir) -> list[str]:
    """Write every artifact of ``report`` into ``out_dir``; returns the manifest (relative names)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    written = []
    history_files = {}
    for stage, (kind, rows) in report.histories.items():
        name = f"loss_{stage}.csv"
        write_csv(out / name, HISTORY_HEADER[kind], rows)
        history_files[stage] = name
        written.append(name)
    point_files = {}
    for stem, ps in report.points.items():
        name = f"{stem}.csv"
        ps.write_csv(out / name) if isinstance(ps, PointSet) else write_csv(out / name, *ps)
        point_files[stem] = name
        written.append(name)
    grid_files = {}
    for stem, grid in report.grids.items():
        name, side = f"grid_{stem}.csv", f"grid_{stem}.json"
        write_csv(out / name, ("value",), ((v,) for v in grid.values))
        write_json(out / side, {**grid.spec.to_dict(), "provenance": grid.provenance, "shape": list(grid.spec.shape)})
        grid_files[stem] = {"values": name, "meta": side}
        written += [name, side]
    table_files = {}
    for stem, (header, rows) in report.tables.items():
        name = f"{stem}.csv"
        write_csv(out / name, header, rows)
        table_files[stem] = name
        written.append(name)
    write_json(out / "timing.json", {k: float(v) for k, v in report.wall_clock.items()})
    written.append("timing.json")
    manifest = sorted(written + ["report.json"])
    doc = {
        "config": report.config,
        "errors": {k: float(v) for k, v in report.errors.items()},
        "files": {"histories": history_files, "points": point_files, "grids": grid_files, "tables": table_files,
                  "timing": "timing.json"},
        "manifest": manifest,
        "warnings": list(report.warnings),
        **({"extra": report.extra} if report.extra else {}),
    }
    write_json(out / "report.json", doc)
    missing = [n for n in manifest if not (out / n).exists()]
    if missing:
        raise OSError(f"report references missing files: {missing}")
    return manifest


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
