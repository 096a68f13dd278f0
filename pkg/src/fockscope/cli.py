"""Command-line entry point: ``fockscope {prepare,tomo,sense,sweep,wigner}``."""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import dist_stats, parity_at_origin, wigner_map
from .config import ConfigError, RunConfig, cached_design, load_config
from .export import (
    export_distribution,
    export_scaling,
    export_sweep,
    export_tomo,
    export_wigner,
    write_csv,
    write_json,
)
from .fock import coherent_amplitudes, fock_state, photon_distribution, truncation_dim, vacuum
from .lens import ConfocalCircuit, LensDesign, calibrate_closure, lens_from_shape
from .metrology import (
    analyze,
    coherent_benchmark,
    default_beta_grid,
    focus_population_changes,
    scaling_fit,
    sense_sweep,
)
from .plots import HeatmapStyle, LineStyle, Series, emit_plot
from .tomography import (
    build_channels,
    build_response_matrix,
    channel_window,
    local_maxima,
    make_test_state,
    reconstruct,
    scan,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("fockscope")


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def add(self, paths):
        self.artifacts += [Path(p) for p in (paths if isinstance(paths, (list, tuple)) else [paths])]

    def finish(self, summary: dict) -> dict:
        self.add(write_json(self.out / "config.resolved.json", self.cfg.to_dict()))
        self.add(write_json(self.out / f"{self.command}_summary.json", summary))
        entries = []
        for p in sorted(set(self.artifacts)):
            data = p.read_bytes()
            entries.append({"path": p.relative_to(self.out).as_posix(), "bytes": len(data),
                            "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {"command": self.command, "version": __version__, "artifacts": entries}
        write_json(self.out / "manifest.json", manifest)
        return summary


def _design(cfg: RunConfig, nbar: float) -> LensDesign | None:
    if cfg.lens.auto_optimize:
        log.info("lens design for nbar=%g", nbar)
        return cached_design(nbar, cfg.lens_search(), cfg.resolved_cache_dir())
    return None


def _circuit(cfg: RunConfig, nbar: float) -> ConfocalCircuit:
    design = _design(cfg, nbar)
    if design is not None:
        lens = design.lens
    else:
        s = cfg.lens.shape
        lens = lens_from_shape(nbar, s.strength, s.shift_sqrt_photons, s.drive_fraction, s.phase_offset_rad)
    circ = ConfocalCircuit.symmetric(nbar, lens, dim=cfg.truncation_dim_levels)
    return calibrate_closure(circ)


def _beta_grid(cfg: RunConfig, circuit: ConfocalCircuit) -> np.ndarray:
    if cfg.probe.beta_max_sqrt_photons is not None:
        return np.linspace(0.0, cfg.probe.beta_max_sqrt_photons, cfg.probe.points)
    return default_beta_grid(circuit, cfg.probe.points, cfg.probe.span_sigmas)


# -- commands -----------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, with_wigner: bool = False) -> dict:
    run = Run(cfg, "prepare")
    rows = []
    for nbar in cfg.nbar_photons:
        circ = _circuit(cfg, nbar)
        focus = circ.focus()
        pn = photon_distribution(focus)
        stats = dist_stats(pn)
        peak = float(pn[int(round(nbar))])
        tag = f"n{nbar:g}"
        extra = {"nbar": nbar, "peak_pop_at_nbar": peak, "dim": circ.dim}
        run.add(export_distribution(pn, run.out / f"focus_pn_{tag}", stats, extra))
        run.add(write_json(run.out / f"focus_stats_{tag}.json", {**extra, "stats": stats}))
        run.add(write_json(run.out / f"lens_{tag}.json", {"lens": circ.lens1, "closing": circ.closing,
                                                          "probe_slot_phase": circ.probe_slot_phase}))
        lo, hi = max(0, int(nbar - 6 * math.sqrt(nbar))), int(nbar + 6 * math.sqrt(nbar)) + 1
        ideal = np.abs(coherent_amplitudes(math.sqrt(nbar), circ.dim).amplitudes) ** 2
        run.add(emit_plot([Series(np.arange(lo, hi), pn[lo:hi], "focused"),
                           Series(np.arange(lo, hi), ideal[lo:hi], "coherent")],
                          run.out / f"focus_pn_{tag}.svg",
                          LineStyle(f"photon-number distribution, nbar={nbar:g}", "n", "P(n)")))
        if with_wigner:
            run.add(_wigner_files(run, focus, f"focus_{tag}", cfg))
        rows.append({"nbar": nbar, "sigma": stats.sigma, "fwhm": stats.fwhm, "peak_pop": peak,
                     "compression_db": stats.compression_db, "mean": stats.mean})
    return run.finish({"focus": rows})


def _tomo_state(cfg: RunConfig, dim: int):
    if cfg.tomo.state.kind == "vacuum":
        return vacuum(dim)
    return make_test_state(cfg.cat_spec(), dim)


def cmd_tomo(cfg: RunConfig) -> dict:
    run = Run(cfg, "tomo")
    t = cfg.tomo
    design = _design(cfg, t.design_nbar_photons)
    if design is None:
        raise ConfigError("lens.auto_optimize", "tomography channels need an optimised lens design")
    targets = channel_window(t.window_photons[0], t.window_photons[1], t.spacing_photons)
    channels = build_channels(targets, design)
    dim = channels[0].dim
    state = _tomo_state(cfg, dim)
    response = build_response_matrix(channels)
    result = reconstruct(scan(state, channels, cfg.loss_model()), response, t.regularization, t.basis)
    pn = result.reconstructed_pn
    n = np.arange(pn.size)
    total = float(pn.sum())
    mean = float(np.dot(n, pn) / total) if total > 0 else math.nan
    var = float(np.dot(n * n, pn) / total - mean ** 2) if total > 0 else math.nan
    peaks = [int(k) for k in local_maxima(pn)] if total > 0 else []
    summary = {"state": cfg.tomo.state, "targets": len(targets), "residual": result.residual,
               "condition": result.condition, "reconstructed_mean": mean, "reconstructed_variance": var,
               "reconstructed_total": total, "local_maxima": peaks}
    run.add(export_tomo(result, run.out / "tomo", summary))
    ideal = photon_distribution(state)
    lo, hi = int(t.window_photons[0]), int(t.window_photons[1]) + 1
    run.add(emit_plot([Series(n[lo:hi], ideal[lo:hi], "ideal"), Series(n[lo:hi], pn[lo:hi], "reconstructed")],
                      run.out / "tomo_pn.svg", LineStyle("photon-number reconstruction", "n", "P(n)")))
    run.add(emit_plot([Series(result.targets, result.vacuum_probs, "scan", marker=True)],
                      run.out / "tomo_scan.svg", LineStyle("channel scan", "target n", "P(0)")))
    return run.finish(summary)


def _sense_one(cfg: RunConfig, nbar: float, run: Run, tag: str) -> dict:
    circ = _circuit(cfg, nbar)
    grid = _beta_grid(cfg, circ)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        raw = sense_sweep(circ, grid, cfg.loss_model(), cfg.shots, cfg.seed, cfg.readout_model())
        sweep = analyze(raw)
    run.add(export_sweep(sweep, run.out / f"sense_{tag}"))
    run.add(emit_plot([Series(sweep.beta_grid, sweep.p0, "P(0)", marker=True),
                       Series(sweep.beta_grid, sweep.fit(sweep.beta_grid), "fit")],
                      run.out / f"sense_p0_{tag}.svg", LineStyle(f"vacuum return, nbar={nbar:g}", "beta", "P(0)")))
    run.add(emit_plot([Series(sweep.beta_grid, sweep.cfi, "CFI")], run.out / f"sense_cfi_{tag}.svg",
                      LineStyle(f"Fisher information, nbar={nbar:g}", "beta", "I_c")))
    return {"nbar": nbar, "icmax": sweep.icmax, "beta_opt": sweep.beta_opt, "delta_beta": sweep.delta_beta,
            "gain_db": sweep.gain_db, "fit_A": sweep.fit_A, "fit_sigma": sweep.fit_sigma, "fit_C": sweep.fit_C,
            "return_at_zero": float(sweep.p0[0]), "circuit": circ}


def cmd_sense(cfg: RunConfig) -> dict:
    run = Run(cfg, "sense")
    nbar = cfg.nbar_photons[0]
    row = _sense_one(cfg, nbar, run, f"n{nbar:g}")
    circ = row.pop("circuit")
    changes = focus_population_changes(circ, row["beta_opt"], loss=cfg.loss_model())
    betas = sorted(changes)
    cols = {"n": np.arange(len(changes[betas[0]]))}
    cols.update({f"p_beta_{k}": changes[b] for k, b in zip(("minus", "opt", "plus"), betas)})
    run.add(write_csv(run.out / f"focus_changes_n{nbar:g}", cols, {"betas": betas}))
    return run.finish(row)


def cmd_sweep(cfg: RunConfig) -> dict:
    run = Run(cfg, "sweep")
    rows = []
    for nbar in cfg.sweep.nbar_photons:
        row = _sense_one(cfg, nbar, run, f"n{nbar:g}")
        row.pop("circuit")
        rows.append(row)
    nbars = [r["nbar"] for r in rows]
    deltas = [r["delta_beta"] for r in rows]
    fit = scaling_fit(nbars, deltas)
    gains = [r["gain_db"] for r in rows]
    k = int(np.argmax(gains))
    summary = {"points": rows, "exponent": fit.exponent, "intercept": fit.intercept,
               "r_squared": fit.r_squared, "best_nbar": nbars[k], "best_gain_db": gains[k],
               "interior_maximum": 0 < k < len(gains) - 1}
    if cfg.sweep.coherent_benchmark:
        sql = coherent_benchmark(nbars[0], readout=cfg.readout_model())
        run.add(export_sweep(sql, run.out / "sense_coherent"))
        summary["coherent"] = {"icmax": sql.icmax, "beta_opt": sql.beta_opt,
                               "delta_beta": sql.delta_beta, "gain_db": sql.gain_db}
    run.add(export_scaling(fit, run.out / "scaling", {"gain_db": gains}))
    run.add(emit_plot([Series(nbars, deltas, "delta beta", marker=True),
                       Series(nbars, np.exp(fit.intercept) * np.asarray(nbars) ** fit.exponent,
                              f"fit N^{fit.exponent:.3f}")],
                      run.out / "scaling.svg", LineStyle("sensitivity scaling", "nbar", "delta beta", True, True)))
    run.add(emit_plot([Series(nbars, gains, "gain", marker=True)], run.out / "gain.svg",
                      LineStyle("metrological gain", "nbar", "gain (dB)")))
    return run.finish(summary)


def _wigner_files(run: Run, state, tag: str, cfg: RunConfig) -> list:
    w = cfg.wigner
    center = state.expect_a()
    offsets = np.linspace(-w.half_width_sqrt_photons, w.half_width_sqrt_photons, w.points)
    wmap = wigner_map(state, center.real + offsets, center.imag + offsets)
    paths = export_wigner(wmap, run.out / f"wigner_{tag}")
    paths.append(emit_plot(wmap, run.out / f"wigner_{tag}.svg", HeatmapStyle(f"Wigner function ({tag})")))
    paths.append(write_json(run.out / f"wigner_{tag}_summary.json",
                            {"min": wmap.min, "integral": wmap.integral(), "center": center,
                             "parity_at_origin": parity_at_origin(state)}))
    return paths


def cmd_wigner(cfg: RunConfig) -> dict:
    run = Run(cfg, "wigner")
    w = cfg.wigner
    if w.state == "focused":
        state = _circuit(cfg, w.nbar_photons).focus()
    elif w.state == "coherent":
        state = coherent_amplitudes(math.sqrt(w.nbar_photons),
                                    cfg.truncation_dim_levels or truncation_dim(w.nbar_photons))
    else:
        n = int(round(w.nbar_photons))
        state = fock_state(n, cfg.truncation_dim_levels or n + 20)
    tag = f"{w.state}_n{w.nbar_photons:g}"
    run.add(_wigner_files(run, state, tag, cfg))
    return run.finish({"state": w.state, "nbar": w.nbar_photons})


# -- entry point --------------------------------------------------------------

COMMANDS = {"prepare": cmd_prepare, "tomo": cmd_tomo, "sense": cmd_sense, "sweep": cmd_sweep, "wigner": cmd_wigner}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fockscope", description="Fock-space lens simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="master seed for trajectories and shot noise")
    common.add_argument("--loss", choices=("on", "off"), help="enable single-photon loss")
    common.add_argument("--shots", help="binomial shots per point, or 'off'")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "prepare":
            p.add_argument("--wigner", action="store_true", help="also write Wigner maps")
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    if args.out is not None:
        out["output_dir"] = str(args.out)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.loss is not None:
        out["loss"] = {"enabled": args.loss == "on"}
    if args.shots is not None:
        if args.shots == "off":
            out["shots"] = None
        else:
            try:
                out["shots"] = int(args.shots)
            except ValueError:
                raise ConfigError("shots", f"expected an integer or 'off', got {args.shots!r}") from None
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "prepare":
            summary = cmd_prepare(cfg, with_wigner=args.wigner)
        else:
            summary = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s", summary)
    print(f"{args.command}: results in {cfg.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
