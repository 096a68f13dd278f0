"""Run configuration: JSON with units in key names, plus a lens-design cache.

Times are in units of the inverse Kerr rate (``kerr_time``), displacement
amplitudes in ``sqrt_photons``.  Defaults live in the packaged
``defaults.json``; every run writes the fully resolved configuration back.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .lens import FocusReport, LensDesign, LensSearch, design_lens, lens_from_shape
from .metrology import Readout
from .open_system import LossModel
from .tomography import CatSpec


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ShapeConfig:
    strength: float
    shift_sqrt_photons: float
    drive_fraction: float
    phase_offset_rad: float = 0.0


@dataclass
class LensConfig:
    auto_optimize: bool = True
    shape: ShapeConfig | None = None
    search: dict = field(default_factory=dict)


@dataclass
class LossConfig:
    enabled: bool = False
    kappa_per_kerr_time: float = 0.0
    method: str = "trajectories"
    n_traj: int = 200


@dataclass
class ProbeConfig:
    points: int = 41
    span_sigmas: float = 4.0
    beta_max_sqrt_photons: float | None = None


@dataclass
class ReadoutConfig:
    p_false_vacuum: float = 0.0
    p_missed_vacuum: float = 0.0


@dataclass
class StateConfig:
    kind: str = "ODC"
    n_t_photons: float = 100.0
    alpha_sqrt_photons: float = 2.0


@dataclass
class TomoConfig:
    state: StateConfig = field(default_factory=StateConfig)
    window_photons: list[float] = field(default_factory=lambda: [40.0, 180.0])
    spacing_photons: float = 2.0
    regularization: float | None = None
    basis: str = "focused"
    design_nbar_photons: float = 100.0


@dataclass
class SweepConfig:
    nbar_photons: list[float] = field(default_factory=lambda: [50.0, 100.0, 200.0, 350.0, 500.0])
    coherent_benchmark: bool = True


@dataclass
class WignerConfig:
    state: str = "focused"
    nbar_photons: float = 50.0
    half_width_sqrt_photons: float = 4.0
    points: int = 81


@dataclass
class RunConfig:
    nbar_photons: list[float] = field(default_factory=lambda: [100.0])
    truncation_dim_levels: int | None = None
    lens: LensConfig = field(default_factory=LensConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    tomo: TomoConfig = field(default_factory=TomoConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    wigner: WignerConfig = field(default_factory=WignerConfig)
    shots: int | None = None
    seed: int = 0
    output_dir: str = "fockscope_out"
    cache_dir: str | None = None

    # -- derived objects --
    def loss_model(self) -> LossModel | None:
        if not self.loss.enabled:
            return None
        return LossModel(self.loss.kappa_per_kerr_time, self.loss.method, self.loss.n_traj, self.seed)

    def lens_search(self) -> LensSearch:
        try:
            kw = {k: tuple(v) if isinstance(v, list) else v for k, v in self.lens.search.items()}
            return LensSearch(**kw)
        except TypeError as exc:
            raise ConfigError("lens.search", str(exc)) from None

    def readout_model(self) -> Readout | None:
        r = self.readout
        return None if r.p_false_vacuum == 0 and r.p_missed_vacuum == 0 else Readout(r.p_false_vacuum, r.p_missed_vacuum)

    def cat_spec(self) -> CatSpec:
        s = self.tomo.state
        return CatSpec(s.kind, s.n_t_photons, s.alpha_sqrt_photons)

    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- loading and validation ---------------------------------------------------

def default_dict() -> dict:
    text = resources.files("fockscope").joinpath("defaults.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "search":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(value, hint, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", ())):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {type(value).__name__}")
        return _build(hint, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, "expected an object")
        return dict(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(path, f"expected a finite number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "missing required key")
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    def need(ok, path, msg):
        if not ok:
            raise ConfigError(path, msg)

    need(len(cfg.nbar_photons) > 0, "nbar_photons", "need at least one value")
    for i, n in enumerate(cfg.nbar_photons):
        need(n > 0, f"nbar_photons[{i}]", "must be positive")
    need(cfg.truncation_dim_levels is None or cfg.truncation_dim_levels >= 2, "truncation_dim_levels",
         "must be at least 2")
    need(cfg.lens.auto_optimize or cfg.lens.shape is not None, "lens.shape",
         "required when lens.auto_optimize is false")
    need(cfg.loss.kappa_per_kerr_time >= 0, "loss.kappa_per_kerr_time", "must be non-negative")
    need(cfg.loss.method in ("trajectories", "master_equation"), "loss.method",
         "must be 'trajectories' or 'master_equation'")
    need(cfg.loss.n_traj >= 1, "loss.n_traj", "must be at least 1")
    need(cfg.probe.points >= 5, "probe.points", "need at least 5 points for the fit")
    need(cfg.probe.span_sigmas > 0, "probe.span_sigmas", "must be positive")
    for name in ("p_false_vacuum", "p_missed_vacuum"):
        need(0 <= getattr(cfg.readout, name) < 0.5, f"readout.{name}", "must lie in [0, 0.5)")
    need(cfg.tomo.state.kind in ("coherent", "PDC", "ODC", "vacuum"), "tomo.state.kind",
         "must be coherent, PDC, ODC or vacuum")
    need(len(cfg.tomo.window_photons) == 2, "tomo.window_photons", "expected [low, high]")
    need(cfg.tomo.window_photons[1] > cfg.tomo.window_photons[0] >= 0, "tomo.window_photons",
         "need 0 <= low < high")
    need(cfg.tomo.spacing_photons > 0, "tomo.spacing_photons", "must be positive")
    need(cfg.tomo.basis in ("focused", "fock"), "tomo.basis", "must be 'focused' or 'fock'")
    need(len(cfg.sweep.nbar_photons) >= 3, "sweep.nbar_photons", "scaling fit needs at least 3 values")
    need(cfg.wigner.state in ("focused", "coherent", "fock"), "wigner.state", "must be focused, coherent or fock")
    need(cfg.wigner.points >= 2, "wigner.points", "must be at least 2")
    need(cfg.shots is None or cfg.shots >= 1, "shots", "must be positive or null")
    if cfg.lens.search:
        cfg.lens_search()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides``."""
    data = default_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(str(path), "top level must be an object")
        data = _merge(data, user)
    if overrides:
        data = _merge(data, overrides)
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


# -- lens cache ---------------------------------------------------------------

def search_hash(search: LensSearch) -> str:
    text = json.dumps(search.as_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _design_to_dict(design: LensDesign) -> dict:
    return {
        "nbar": design.nbar,
        "shape": list(design.shape),
        "report": dataclasses.asdict(design.report),
        "confocal_return": design.confocal_return,
        "converged": design.converged,
        "evaluations": design.evaluations,
        "search": design.search.as_dict(),
    }


def _design_from_dict(data: dict, search: LensSearch) -> LensDesign:
    shape = tuple(float(v) for v in data["shape"])
    return LensDesign(
        nbar=float(data["nbar"]),
        lens=lens_from_shape(float(data["nbar"]), *shape, kerr_during_drive=search.kerr_during_drive),
        report=FocusReport(**data["report"]),
        confocal_return=float(data["confocal_return"]),
        shape=shape,
        converged=bool(data["converged"]),
        evaluations=int(data["evaluations"]),
        search=search,
    )


def cached_design(nbar: float, search: LensSearch, cache_dir) -> LensDesign:
    """Load the design for ``(nbar, search)`` from ``cache_dir`` or optimise and store it."""
    cache_dir = Path(cache_dir)
    path = cache_dir / f"lens_n{nbar:g}_{search_hash(search)}.json"
    if path.exists():
        return _design_from_dict(json.loads(path.read_text(encoding="utf-8")), search)
    design = design_lens(nbar, search)
    from .export import write_json

    write_json(path, _design_to_dict(design))
    return design
