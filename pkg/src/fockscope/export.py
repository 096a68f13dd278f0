"""CSV and JSON serialisation of results.

Every table is written as ``<stem>.csv`` (header row, comma separated,
round-trip float formatting) with a ``<stem>.json`` metadata sidecar.  Keys
keep insertion order and no timestamps are written, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np

from .analysis import DistStats, WignerMap
from .metrology import ScalingFit, SenseSweep
from .tomography import NTomoResult


def _plain(obj):
    """Convert numpy and dataclass values to JSON-native types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else "nan"


def write_csv(stem, columns: dict, meta: dict | None = None) -> list[Path]:
    """Write equal-length ``columns`` to ``<stem>.csv`` and ``meta`` to ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = [np.asarray(columns[k]).ravel() for k in names]
    lengths = {len(d) for d in data}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in zip(*data):
        writer.writerow([_cell(v) for v in row])
    csv_path = stem.with_suffix(".csv")
    csv_path.write_text(buf.getvalue(), encoding="utf-8")
    paths = [csv_path]
    if meta is not None:
        paths.append(write_json(stem.with_suffix(".json"), meta))
    return paths


def read_csv(stem) -> tuple[dict, dict | None]:
    stem = Path(stem)
    with open(stem.with_suffix(".csv"), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    cols = {name: np.array([float(r[i]) for r in rows[1:]]) for i, name in enumerate(names)}
    meta_path = stem.with_suffix(".json")
    return cols, (read_json(meta_path) if meta_path.exists() else None)


# -- per-type exporters -------------------------------------------------------

_SWEEP_SCALARS = ("nbar", "fit_A", "fit_sigma", "fit_C", "fit_converged", "fit_residual",
                  "beta_opt", "icmax", "delta_beta", "gain_db")


def export_sweep(sweep: SenseSweep, stem) -> list[Path]:
    n = len(sweep.beta_grid)
    cfi = sweep.cfi if sweep.cfi is not None else np.full(n, np.nan)
    err = sweep.p0_err if sweep.p0_err is not None else np.zeros(n)
    meta = {k: getattr(sweep, k) for k in _SWEEP_SCALARS}
    meta["meta"] = sweep.meta
    return write_csv(stem, {"beta": sweep.beta_grid, "p0": sweep.p0, "p0_err": err, "cfi": cfi}, meta)


def load_sweep(stem) -> SenseSweep:
    cols, meta = read_csv(stem)
    scalars = {k: (math.nan if meta[k] is None else meta[k]) for k in _SWEEP_SCALARS}
    scalars["fit_converged"] = bool(meta["fit_converged"])
    return SenseSweep(beta_grid=cols["beta"], p0=cols["p0"], p0_err=cols["p0_err"], cfi=cols["cfi"],
                      meta=meta.get("meta", {}), **scalars)


def export_scaling(fit: ScalingFit, stem, extra: dict | None = None) -> list[Path]:
    meta = {"exponent": fit.exponent, "intercept": fit.intercept, "r_squared": fit.r_squared}
    if extra:
        meta.update(extra)
    return write_csv(stem, {"nbar": fit.nbars, "delta_beta": fit.delta_betas}, meta)


def export_tomo(result: NTomoResult, stem, extra: dict | None = None) -> list[Path]:
    stem = Path(stem)
    meta = {"residual": result.residual, "condition": result.condition, "basis": result.basis}
    if extra:
        meta.update(extra)
    paths = write_csv(stem.with_name(stem.name + "_scan"),
                      {"target_n": result.targets, "vacuum_prob": result.vacuum_probs}, meta)
    pn = result.reconstructed_pn
    paths += write_csv(stem.with_name(stem.name + "_pn"), {"n": np.arange(pn.size), "probability": pn}, meta)
    return paths


def export_distribution(pn, stem, stats: DistStats | None = None, extra: dict | None = None) -> list[Path]:
    meta = {} if stats is None else _plain(stats)
    if extra:
        meta.update(extra)
    pn = np.asarray(pn, dtype=float)
    return write_csv(stem, {"n": np.arange(pn.size), "probability": pn}, meta)


def export_wigner(wmap: WignerMap, stem) -> list[Path]:
    xx, pp = np.meshgrid(wmap.x_grid, wmap.p_grid)
    meta = {"convention_scale": wmap.convention_scale, "shape": list(wmap.values.shape),
            "integral": wmap.integral(), "min": wmap.min}
    return write_csv(stem, {"x": xx.ravel(), "p": pp.ravel(), "W": wmap.values.ravel()}, meta)


def export_results(bundle: dict, directory) -> list[Path]:
    """Write every entry of ``{name: result}`` under ``directory``."""
    directory = Path(directory)
    paths: list[Path] = []
    for name, obj in bundle.items():
        stem = directory / name
        if isinstance(obj, SenseSweep):
            paths += export_sweep(obj, stem)
        elif isinstance(obj, ScalingFit):
            paths += export_scaling(obj, stem)
        elif isinstance(obj, NTomoResult):
            paths += export_tomo(obj, stem)
        elif isinstance(obj, WignerMap):
            paths += export_wigner(obj, stem)
        elif isinstance(obj, np.ndarray):
            paths += export_distribution(obj, stem)
        else:
            paths.append(write_json(stem.with_suffix(".json"), obj))
    return paths
