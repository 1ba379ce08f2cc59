"""Command line entry point: ``sccsim {simulate,analyze,fit,figure}``."""
import argparse
import json
from pathlib import Path
import sys

import numpy as np

from . import coherence as coh
from . import figures, protocol, readout
from .dataio import (ConfigError, RunConfig, ingest_timetags, parse_config, results_csv,
                     table_csv, TimeTagError)
from .physics import DefectParameters, DomainError, ModelError
from .units import UnitError, parse_quantity

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_CHECK = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (default 0 or the preset's)")
    p.add_argument("--shots", type=int, help="shots per sweep point")
    p.add_argument("--params", help="parameter JSON replacing the shipped defaults")
    p.add_argument("--out", help="output directory (default ./out)")
    p.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")


def build_parser():
    ap = _Parser(prog="sccsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a sequence sweep (preset or config)")
    s.add_argument("preset", nargs="?", help="preset id with a sequence sweep")
    _common(s)
    s.add_argument("--check", action="store_true", help="compare against ODE expectations")

    a = sub.add_parser("analyze", help="readout fidelity from histograms or time tags")
    a.add_argument("bright", help="bright histogram CSV or time-tag CSV")
    a.add_argument("dark", help="dark histogram CSV or time-tag CSV")
    a.add_argument("--timetags", action="store_true", help="inputs are shot_id,time_ns,channel")
    a.add_argument("--window", help="time-tag window, e.g. '2 ms'")
    a.add_argument("--strict", action="store_true", help="abort on malformed time tags")
    a.add_argument("--cutoff", type=int, help="fixed cutoff instead of the optimum")
    _common(a)
    a.add_argument("--check", type=float, metavar="F_MIN", help="exit 4 if fidelity < F_MIN")

    f = sub.add_parser("fit", help="fit coherence, scaling or T1 data")
    f.add_argument("kind", choices=("stretched", "scaling", "t1"))
    f.add_argument("data", help="CSV input (see README for columns)")
    f.add_argument("--confidence", type=float, default=0.95)
    _common(f)
    f.add_argument("--check", action="store_true", help="exit 4 if the fit is degenerate")

    g = sub.add_parser("figure", help="reproduce a figure preset")
    g.add_argument("preset", help=f"one of {', '.join(figures.FIGURES)} or 'all'")
    _common(g)
    g.add_argument("--check", action="store_true", help="exit 4 if a headline misses its tolerance")
    return ap


def _config(args):
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = parse_config(text)
    kw = {k: getattr(args, k) for k in ("seed", "shots", "params", "out", "workers")
          if getattr(args, k, None) is not None}
    if kw.get("shots", 1) < 1:
        raise ConfigError(f"--shots: must be >= 1, got {kw['shots']}")
    if kw.get("workers", 1) < 1:
        raise ConfigError(f"--workers: must be >= 1, got {kw['workers']}")
    if getattr(args, "preset", None):
        kw["preset"] = args.preset
    return RunConfig(**{**vars(cfg), **kw})


def _params(cfg):
    try:
        return DefectParameters.load(cfg.params) if cfg.params else DefectParameters.load()
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"parameter file {cfg.params}: {exc}") from None


def _outdir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output path {out} is not writable: {exc}") from None
    return out


def cmd_simulate(args):
    cfg = _config(args)
    if cfg.experiment is not None and not getattr(args, "preset", None):
        d = dict(cfg.experiment)
    elif cfg.preset:
        data = _preset(cfg.preset)
        if "experiment" not in data:
            raise ConfigError(f"preset {cfg.preset!r} has no sequence sweep; use 'sccsim figure'")
        d = dict(data["experiment"])
        d.setdefault("name", cfg.preset)
    else:
        raise ConfigError("simulate needs a preset or a config with 'experiment'")
    d["seed"] = cfg.seed if cfg.seed is not None else d.get("seed", 0)
    if cfg.shots is not None:
        d["shots"] = cfg.shots
    try:
        spec = protocol.ExperimentSpec.from_dict(d)
        seq = spec.sequence
        for path, v in cfg.overrides.items():
            seq = seq.with_value(path, v)
    except (KeyError, TypeError, UnitError) as exc:
        raise ConfigError(f"config.experiment: {exc}") from None
    spec = protocol.ExperimentSpec(**{**vars(spec), "sequence": seq})
    params = _params(cfg)
    res = protocol.run(spec, params, cfg.workers)
    curve = protocol.contrast(res)
    reps = [readout.optimal_cutoff(b, a, seed=spec.seed + i)[1]
            for i, (a, b) in enumerate(zip(res.hist_ms0, res.hist_ms1))]
    s0, s1 = res.means()
    out = _outdir(cfg)
    name = spec.name or "simulation"
    (out / f"{name}.csv").write_text(
        results_csv(res.values, s0, s1, curve.contrast, [r.fidelity for r in reps],
                    [r.ci_low for r in reps], [r.ci_high for r in reps]), encoding="utf-8")
    rows = []
    for i, (a, b) in enumerate(zip(res.hist_ms0, res.hist_ms1)):
        n = max(a.max_count, b.max_count) + 1
        pa, pb = np.zeros(n, int), np.zeros(n, int)
        pa[:len(a.shots)] = a.shots
        pb[:len(b.shots)] = b.shots
        rows += [(res.values[i], k, pa[k], pb[k]) for k in range(n)]
    (out / f"{name}_histograms.csv").write_text(
        table_csv(["sweep_value", "photon_count", "ms0_shots", "ms1_shots"], rows), encoding="utf-8")
    for v, c, r in zip(res.values, curve.contrast, reps):
        print(f"{spec.sweep}={v:.6g}  contrast={c:.4f}  F={r.fidelity:.4f} (cutoff {r.cutoff})")
    if args.check:
        ode = protocol.expected_contrast(spec, params)
        worst = float(np.max(np.abs(ode.contrast - curve.contrast)))
        tol = 5.0 * np.sqrt(0.5 / spec.shots)  # 5 sigma on a difference of two fractions
        print(f"max |MC - ODE| contrast = {worst:.4f} (tolerance {tol:.4f})")
        if worst > tol:
            return EXIT_CHECK
    return EXIT_OK


def _hist_from(path, args):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if args.timetags:
        window = parse_quantity(args.window, "time") * 1e9 if args.window else None
        data = ingest_timetags(text, window_ns=window, strict=args.strict)
        if data.malformed:
            print(f"{path}: skipped {data.malformed} malformed records", file=sys.stderr)
        return data.histogram
    try:
        return readout.Histogram.from_csv(text)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: not a photon_count,shots histogram ({exc})") from None


def cmd_analyze(args):
    cfg = _config(args)
    bright, dark = _hist_from(args.bright, args), _hist_from(args.dark, args)
    if args.cutoff is None:
        _, rep = readout.optimal_cutoff(bright, dark, seed=cfg.seed or 0)
    else:
        rep = readout.fidelity(bright, dark, args.cutoff, seed=cfg.seed or 0)
    print(json.dumps({"cutoff": rep.cutoff, "fidelity": rep.fidelity, "p01": rep.p01,
                      "p10": rep.p10, "ci_low": rep.ci_low, "ci_high": rep.ci_high,
                      "mean_bright": bright.mean(), "mean_dark": dark.mean()}, indent=2))
    if args.check is not None and rep.fidelity < args.check:
        return EXIT_CHECK
    return EXIT_OK


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def cmd_fit(args):
    text = _read(args.data)
    try:
        if args.kind == "stretched":
            t, y, s = coh.read_coherence_csv(text)
            fit = coh.fit_stretched(t, y, s)
            out = {"amplitude": fit.amplitude, "t2": fit.t2, "stretch": fit.stretch,
                   "amplitude_se": fit.amplitude_se, "t2_se": fit.t2_se,
                   "stretch_se": fit.stretch_se}
        elif args.kind == "scaling":
            n, t2, s = coh.read_scaling_csv(text)
            fit = coh.fit_scaling(n, t2, s)
            out = {k: getattr(fit, k) for k in ("breakpoint", "psi_low", "psi_low_se",
                                                 "psi_high", "psi_high_se", "single_regime")}
        else:
            t, y, s = coh.read_coherence_csv(text)
            b = coh.t1_lower_bound(t, y, s, args.confidence)
            out = {"t1_lower_bound": b.bound, "confidence": b.confidence, "dof": b.dof,
                   "critical": b.critical}
    except (ValueError, IndexError) as exc:
        if isinstance(exc, (coh.DegenerateDataError, coh.BoundRejectedError)):
            raise
        raise ConfigError(f"{args.data}: {exc}") from None
    print(json.dumps(out, indent=2))
    if args.check and args.kind == "scaling" and out["single_regime"]:
        return EXIT_CHECK
    return EXIT_OK


def _preset(name):
    try:
        return protocol.load_preset(name)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None


def cmd_figure(args):
    cfg = _config(args)
    ids = figures.FIGURES if args.preset == "all" else (args.preset,)
    failed = False
    for pid in ids:
        res = figures.run_figure(pid, cfg, seed=args.seed, shots=args.shots,
                                 workers=args.workers)
        print(res.report())
        for f in res.files:
            print(f"  wrote {f}")
        failed |= not res.passed
    return EXIT_CHECK if args.check and failed else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "fit": cmd_fit,
            "figure": cmd_figure}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UnitError, TimeTagError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except readout.EmptyHistogramError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, DomainError, coh.ConvergenceError, coh.DegenerateDataError,
            coh.BoundRejectedError, RuntimeError, FloatingPointError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
