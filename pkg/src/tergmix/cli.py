"""Command-line entry point: ``tergmix simulate | fit | select | metrics | instability``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import instability_stats, rand_index, rse
from .models import ModelSpec
from .netseries import SeriesError, load_labels, load_series, save_labels, save_series
from .selection import select
from .simulate import MixtureSimConfig, PRESETS, config_from_dict, preset, simulate
from .varem import ENTROPY_MODES, FitConfig, FitResult, fit

log = logging.getLogger("tergmix")


class UsageError(Exception):
    pass


class Outputs:
    """Tracks files written to the output directory so a failed run can be rolled back."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str) -> None:
        p = self.path(name)
        tmp = p.with_name(p.name + ".part")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, p)

    def write_json(self, name: str, doc) -> None:
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")

    def finish(self, command: str) -> None:
        names = sorted(p.name for p in self.written)
        self.write_json("manifest.json", {"command": command, "files": names, "version": __version__})

    def rollback(self) -> None:
        for p in self.written:
            for q in (p, p.with_name(p.name + ".part")):
                if q.exists():
                    q.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def _clean(obj):
    """Replace non-finite floats with None so documents stay valid JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_iter=args.max_iter,
        rel_tol=args.tol,
        restarts=args.restarts,
        seed=args.seed,
        entropy=args.entropy,
    )


def _load(args):
    return load_series(args.inp, format=args.format, n=args.nodes, T=args.horizon)


def _provenance(args, **extra) -> dict:
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    return {"tool": "tergmix", "version": __version__, "arguments": echo, **extra}


def cmd_simulate(args, out: Outputs) -> None:
    if args.preset and args.config:
        raise UsageError("give either --preset or --config, not both")
    if args.preset:
        cfg = preset(args.preset, seed=args.seed, n=args.nodes, T=args.horizon)
    elif args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = config_from_dict(doc, seed=args.seed, n=args.nodes, T=args.horizon)
    else:
        raise UsageError("one of --preset or --config is required")
    if args.model and isinstance(cfg, MixtureSimConfig):
        if ModelSpec(args.model, 1).kind != cfg.kind:
            raise UsageError(f"--model {args.model} does not match the configured generator ({cfg.kind})")
    series, z = simulate(cfg)
    save_series(series, out.path("series.tsv"))
    save_labels(z, out.path("labels.tsv"))
    truth = {"K": len(cfg.pi), "pi": list(cfg.pi)}
    if isinstance(cfg, MixtureSimConfig):
        truth.update(model=cfg.kind, theta=[list(r) for r in cfg.theta])
    out.write_json("truth.json", truth)
    out.write_json("config.json", _provenance(args, simulation=cfg.to_dict()))


def cmd_fit(args, out: Outputs) -> None:
    if args.k is None:
        raise UsageError("--k is required for fit")
    series = _load(args)
    res = fit(series, ModelSpec(args.model, args.k), config=_fit_config(args))
    if not res.converged:
        log.warning("best restart did not converge within %d iterations", args.max_iter)
    out.write_json("fit.json", _clean(res.to_dict()))
    save_labels(res.labels, out.path("labels.tsv"))
    out.write_json("config.json", _provenance(args))


def cmd_select(args, out: Outputs) -> None:
    k_min, k_max = args.k_min, args.k_max
    if args.k is not None:
        k_min = k_max = args.k
    if k_min < 1 or k_max < k_min:
        raise UsageError("need 1 <= k-min <= k-max")
    series = _load(args)
    jobs = args.jobs or os.cpu_count() or 1
    report = select(series, args.model, range(k_min, k_max + 1), config=_fit_config(args), jobs=jobs)
    out.write_json("selection.json", _clean(report.to_dict()))
    out.write_text("selection.tsv", report.to_tsv())
    out.write_json("config.json", _provenance(args))


def cmd_metrics(args, out: Outputs) -> None:
    if args.truth_labels is None:
        raise UsageError("--truth-labels is required")
    z_true = load_labels(args.truth_labels)
    if args.inp is not None:
        fitted = FitResult.from_dict(json.loads(Path(args.inp).read_text(encoding="utf-8")))
        z_hat = fitted.labels
    elif args.labels is not None:
        fitted = None
        z_hat = load_labels(args.labels)
    else:
        raise UsageError("give a fit document with --in or a labels file with --labels")
    if len(z_hat) != len(z_true):
        raise UsageError(f"label vectors differ in length ({len(z_hat)} vs {len(z_true)})")
    doc = {"rand_index": rand_index(z_true, z_hat)}
    if fitted is not None and args.truth is not None:
        truth = json.loads(Path(args.truth).read_text(encoding="utf-8"))
        if "theta" not in truth:
            raise UsageError("truth document has no theta (duration generator); RSE is undefined")
        r = rse(fitted.params.pi, truth["pi"], fitted.params.theta, truth["theta"])
        names = fitted.spec.param_names
        doc.update(
            rse_pi=r.rse_pi,
            rse_theta={nm: float(v) for nm, v in zip(names, r.rse_theta)},
            permutation=[int(v) + 1 for v in r.permutation],
        )
    out.write_json("metrics.json", doc)
    out.write_json("config.json", _provenance(args))


def cmd_instability(args, out: Outputs) -> None:
    if args.labels is None:
        raise UsageError("--labels is required")
    series = _load(args)
    z = load_labels(args.labels, n=series.n)
    report = instability_stats(series, z)
    out.write_text("instability.tsv", report.to_tsv())
    out.write_json("instability.json", report.to_dict())
    out.write_json("config.json", _provenance(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tergmix", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_seed: bool):
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, required=needs_seed, default=None)

    def series_in(p):
        p.add_argument("--in", dest="inp", type=Path, required=True, help="input series")
        p.add_argument("--format", choices=("long_tsv", "snapshot_dir"), default="long_tsv")
        p.add_argument("--nodes", type=int, default=None, help="node count if not recorded in the input")
        p.add_argument("--horizon", type=int, default=None, help="number of transitions T")

    def fitting(p):
        p.add_argument("--model", choices=("tergm", "stergm"), required=True)
        p.add_argument("--restarts", type=int, default=10)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=500)
        p.add_argument("--entropy", choices=ENTROPY_MODES, default="once")

    p = sub.add_parser("simulate", help="simulate a series with planted communities")
    common(p, needs_seed=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", type=Path, help="JSON simulation config")
    p.add_argument("--model", choices=("tergm", "stergm"), default=None)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a K-community mixture")
    common(p, needs_seed=True)
    series_in(p)
    fitting(p)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="score a range of K by CL-BIC and ICL")
    common(p, needs_seed=True)
    series_in(p)
    fitting(p)
    p.add_argument("--k", type=int, default=None, help="single K (overrides the range)")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--jobs", type=int, default=None, help="parallel fits (default: CPU count)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("metrics", help="compare fitted labels/estimates with the truth")
    common(p, needs_seed=False)
    p.add_argument("--in", dest="inp", type=Path, default=None, help="fit.json")
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("--truth-labels", type=Path, default=None)
    p.add_argument("--truth", type=Path, default=None, help="truth.json from simulate")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("instability", help="edge instability ratios per community pair")
    common(p, needs_seed=False)
    series_in(p)
    p.add_argument("--labels", type=Path, default=None)
    p.set_defaults(func=cmd_instability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Outputs(args.out)
    try:
        args.func(args, out)
        out.finish(args.command)
    except UsageError as exc:
        out.rollback()
        parser.error(str(exc))
    except (SeriesError, ValueError, KeyError, OSError, RuntimeError) as exc:
        out.rollback()
        print(f"tergmix {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
