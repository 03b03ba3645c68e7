"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure.  Errors are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, GeneratorSpec, read_counts_csv, simulate
from .lipschitz import lipschitz_report
from .mc import MC_SAMPLER, MCConfig, run_mc
from .model import Dataset, Family, ModelSpec
from .pipeline import SchemeConfig, fit, run_scheme, scheme_weights, substream
from .reweight import ReweightConfig, reweight_with_refit
from .sampler import SamplerConfig
from .synth import SyntheticBundle, generate, utility_table
from .weights import WeightVector, unit_weights

logger = logging.getLogger("vwsynth")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    input_csv: str | None = None
    column: str | None = None
    generator: GeneratorSpec | None = None
    family: str = "negbin"
    mixture_weights: list[float] | None = None
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    reweight: ReweightConfig | None = field(default_factory=ReweightConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    M: int = 20
    n_boot: int = 2000
    output_dir: str = "vwsynth_out"
    seed: int = 0
    emit_weights: bool = False
    emit_matrix: bool = False
    emit_draws: bool = False

    def validate(self) -> None:
        if (self.input_csv is None) == (self.generator is None):
            raise ConfigError("exactly one input source is required (CSV or generator)")
        if self.M < 1 or self.n_boot < 1:
            raise ConfigError("M and n_boot must be positive")

    def spec(self) -> ModelSpec:
        mw = None if self.mixture_weights is None else tuple(self.mixture_weights)
        return ModelSpec(Family(self.family), mixture_weights=mw)

    def to_dict(self) -> dict:
        return {
            "input_csv": self.input_csv,
            "column": self.column,
            "generator": None if self.generator is None else self.generator.to_dict(),
            "family": self.family,
            "mixture_weights": self.mixture_weights,
            "scheme": self.scheme.to_dict(),
            "reweight": None if self.reweight is None else self.reweight.to_dict(),
            "sampler": self.sampler.to_dict(),
            "M": self.M,
            "n_boot": self.n_boot,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "emit_weights": self.emit_weights,
            "emit_matrix": self.emit_matrix,
            "emit_draws": self.emit_draws,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"version", "input_sha256"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d.pop("version", None)
        d.pop("input_sha256", None)
        try:
            if d.get("generator") is not None:
                d["generator"] = GeneratorSpec(**d["generator"])
            if "scheme" in d:
                d["scheme"] = SchemeConfig(**d["scheme"])
            if d.get("reweight") is not None:
                rw = dict(d["reweight"])
                if "k_bounds" in rw:
                    rw["k_bounds"] = tuple(rw["k_bounds"])
                d["reweight"] = ReweightConfig(**rw)
            if "sampler" in d:
                d["sampler"] = SamplerConfig(**d["sampler"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


# ---------------------------------------------------------------- arguments

def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--input", help="headerless CSV of counts (or use --column)")
    g.add_argument("--column", help="column name or 0-based index for multi-column CSVs")
    g.add_argument("--generator", choices=["poisson", "nb_mixture", "sdr_like"],
                   help="simulate the input instead of reading a CSV")
    g.add_argument("--gen-n", type=int, help="records to simulate (default 1000)")
    g.add_argument("--gen-mu", type=float, help="Poisson mean for --generator poisson")
    g.add_argument("--family", choices=[f.value for f in Family])
    g.add_argument("--mixture-weights", type=float, nargs="+")


def _add_sampler(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int)
    g.add_argument("--warmup", type=int)
    g.add_argument("--keep", type=int)
    g.add_argument("--target-accept", type=float)


def _add_scheme(p):
    g = p.add_argument_group("weights")
    g.add_argument("--scheme", choices=["LW", "CW", "SW"])
    g.add_argument("--c", type=float, help="weight scale")
    g.add_argument("--g", type=float, help="weight shift")
    g.add_argument("--radius", type=float, help="CW ball radius (default 0.05 * sd)")
    g.add_argument("--thresh", type=float, help="quantile level for bounds (default 1 = max)")
    g.add_argument("--sw-target", type=float, help="SW target bound (default: match --sw-match)")
    g.add_argument("--sw-match", choices=["LW", "CW"])


def _add_reweight(p):
    g = p.add_argument_group("re-weighting")
    g.add_argument("--k", type=float, help="initial k (default 0.95)")
    g.add_argument("--tolerance", type=float, help="relative bound tolerance (default 0.05)")
    g.add_argument("--max-iters", type=int)


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="max worker processes")
    p.add_argument("--emit-weights", action="store_true",
                   help="write confidential weight vectors under <out>/confidential/")
    p.add_argument("--emit-matrix", action="store_true",
                   help="write the full Lipschitz matrix under <out>/confidential/")
    p.add_argument("--emit-draws", action="store_true", help="write posterior draws CSV")
    p.add_argument("--allow-unconverged", action="store_true",
                   help="exit 0 even when a fit or the k search did not converge")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vwsynth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"vwsynth {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="unweighted fit and its Lipschitz report")
    _add_input(p); _add_sampler(p); _add_common(p)
    p.add_argument("--thresh", type=float)

    p = sub.add_parser("weights", help="compute LW / CW / SW weights")
    _add_input(p); _add_sampler(p); _add_scheme(p); _add_common(p)

    p = sub.add_parser("reweight", help="re-weight a weight vector and refit")
    _add_input(p); _add_sampler(p); _add_reweight(p); _add_common(p)
    p.add_argument("--weights", required=True, help="weights CSV written by `weights --emit-weights`")
    p.add_argument("--thresh", type=float)

    p = sub.add_parser("synthesize", help="fit under given weights and emit synthetic replicates")
    _add_input(p); _add_sampler(p); _add_common(p)
    p.add_argument("--weights", help="weights CSV (default: unweighted)")
    p.add_argument("-M", "--replicates", type=int)

    p = sub.add_parser("utility", help="utility table for synthetic replicate directories")
    p.add_argument("--input", required=True)
    p.add_argument("--column")
    p.add_argument("--synthetic", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--n-boot", type=int, default=2000)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("mc", help="Monte Carlo local-to-global contraction study")
    p.add_argument("--generator", choices=["poisson", "nb_mixture"], default="poisson")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--mu", type=float, default=100.0)
    p.add_argument("--phis", type=float, nargs="+", default=[5.0, 5.0],
                   help="mixture dispersions (default 5 5; the main simulation uses 5 20)")
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--family", choices=[f.value for f in Family])
    _add_scheme(p); _add_reweight(p); _add_sampler(p)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("pipeline", help="end-to-end run with manifest")
    _add_input(p); _add_sampler(p); _add_scheme(p); _add_reweight(p); _add_common(p)
    p.add_argument("--manifest", help="rerun from a manifest written by a previous run")
    p.add_argument("--no-reweight", action="store_true")
    p.add_argument("-M", "--replicates", type=int)
    p.add_argument("--n-boot", type=int)
    return ap


# ----------------------------------------------------------- config merging

def _set(obj, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(obj, **kw) if kw else obj


def resolve_config(args) -> PipelineConfig:
    """Config file (or manifest) first, then command-line flags on top."""
    path = getattr(args, "manifest", None) or getattr(args, "config", None)
    if path:
        try:
            cfg = PipelineConfig.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    else:
        cfg = PipelineConfig()
    if getattr(args, "input", None):
        cfg.input_csv, cfg.generator = args.input, None
    if getattr(args, "column", None) is not None:
        cfg.column = args.column
    if getattr(args, "generator", None):
        cfg.input_csv = None
        cfg.generator = GeneratorSpec(kind=args.generator)
    if cfg.generator is not None:
        cfg.generator = _set(cfg.generator, n=getattr(args, "gen_n", None),
                             mu=getattr(args, "gen_mu", None))
    if getattr(args, "family", None):
        cfg.family = args.family
    if getattr(args, "mixture_weights", None):
        cfg.mixture_weights = list(args.mixture_weights)
    cfg.sampler = _set(cfg.sampler, n_chains=getattr(args, "chains", None),
                       n_warmup=getattr(args, "warmup", None), n_keep=getattr(args, "keep", None),
                       target_accept=getattr(args, "target_accept", None))
    cfg.scheme = _set(cfg.scheme, scheme=getattr(args, "scheme", None), c=getattr(args, "c", None),
                      g=getattr(args, "g", None), radius=getattr(args, "radius", None),
                      thresh=getattr(args, "thresh", None),
                      sw_target=getattr(args, "sw_target", None),
                      sw_match=getattr(args, "sw_match", None))
    if getattr(args, "no_reweight", False):
        cfg.reweight = None
    elif cfg.reweight is not None:
        cfg.reweight = _set(cfg.reweight, k_init=getattr(args, "k", None),
                            tolerance=getattr(args, "tolerance", None),
                            max_iters=getattr(args, "max_iters", None))
    if getattr(args, "replicates", None) is not None:
        cfg.M = args.replicates
    if getattr(args, "n_boot", None) is not None:
        cfg.n_boot = args.n_boot
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for flag in ("emit_weights", "emit_matrix", "emit_draws"):
        if getattr(args, flag, False):
            setattr(cfg, flag, True)
    cfg.validate()
    return cfg


def load_dataset(cfg: PipelineConfig) -> Dataset:
    if cfg.input_csv is not None:
        return read_counts_csv(cfg.input_csv, cfg.column)
    return simulate(cfg.generator, np.random.default_rng(substream(cfg.seed, "data")))


# ---------------------------------------------------------------- commands

def _check_converged(ok: bool, what: str, args) -> None:
    if not ok and not args.allow_unconverged:
        raise ConvergenceError(f"{what} did not converge")


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sampler = replace(cfg.sampler, rng_seed=substream(cfg.seed, "sampler", "unweighted"))
    f = fit(cfg.spec(), data, unit_weights(data.n), sampler, cfg.scheme.thresh)
    f.draws.to_csv(out / "draws_unweighted.csv")
    f.report.to_json(out / "lipschitz_unweighted.json")
    _write_json(out / "diagnostics_unweighted.json", f.draws.diagnostics())
    print(json.dumps({"overall": f.report.overall, "epsilon_local": f.report.epsilon_local,
                      "converged": f.draws.converged}))
    _check_converged(f.draws.converged, "unweighted fit", args)
    return EXIT_OK


def _emit_confidential(out: Path, name: str, wv: WeightVector) -> None:
    d = out / "confidential"
    d.mkdir(parents=True, exist_ok=True)
    (d / "README").write_text("CONFIDENTIAL: record-level weights leak disclosure risk. Do not release.\n")
    wv.to_csv(d / name)


def _weights_summary(wv: WeightVector) -> dict:
    a = wv.alphas
    return {"scheme": wv.scheme.value, "config": wv.config, "n": int(a.size),
            "min": float(a.min()), "mean": float(a.mean()), "max": float(a.max()),
            "n_zero": int((a == 0).sum()), "n_one": int((a == 1).sum())}


def cmd_weights(args) -> int:
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    spec = cfg.spec()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    unweighted = None
    if cfg.scheme.scheme in ("LW", "SW"):
        unweighted = fit(spec, data, unit_weights(data.n),
                         replace(cfg.sampler, rng_seed=substream(cfg.seed, "sampler", "unweighted")),
                         cfg.scheme.thresh)
    wv = scheme_weights(spec, data, cfg.scheme, unweighted, cfg.sampler, cfg.seed)
    summary = _weights_summary(wv)
    _write_json(out / "weights_summary.json", summary)
    if cfg.emit_weights:
        _emit_confidential(out, "weights.csv", wv)
    print(json.dumps({k: summary[k] for k in ("scheme", "min", "mean", "max")}))
    return EXIT_OK


def cmd_reweight(args) -> int:
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    spec = cfg.spec()
    try:
        wv = WeightVector.from_csv(args.weights)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read weights: {exc}") from None
    if len(wv) != data.n:
        raise DataError(f"weights cover {len(wv)} records, data has {data.n}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    weighted = fit(spec, data, wv,
                   replace(cfg.sampler, rng_seed=substream(cfg.seed, "sampler", "weighted", wv.scheme.value)),
                   cfg.scheme.thresh)
    outcome = reweight_with_refit(
        spec, data, wv, replace(cfg.sampler, rng_seed=substream(cfg.seed, "sampler", "reweight", wv.scheme.value)),
        cfg.reweight or ReweightConfig(), report=weighted.report)
    outcome.to_json(out / "reweight.json")
    outcome.report_after.to_json(out / "lipschitz_final.json")
    if cfg.emit_weights:
        _emit_confidential(out, "weights_final.csv", outcome.alphas_w)
    print(json.dumps({k: v for k, v in outcome.to_dict().items() if k != "trials"}))
    _check_converged(outcome.converged, "k search", args)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    spec = cfg.spec()
    wv = unit_weights(data.n)
    if args.weights:
        try:
            wv = WeightVector.from_csv(args.weights)
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read weights: {exc}") from None
        if len(wv) != data.n:
            raise DataError(f"weights cover {len(wv)} records, data has {data.n}")
    out = Path(cfg.output_dir)
    f = fit(spec, data, wv, replace(cfg.sampler, rng_seed=substream(cfg.seed, "sampler", "synthesize")))
    bundle = generate(spec, f.draws, data.n, cfg.M, substream(cfg.seed, "synth", "synthesize"))
    bundle.write_dir(out / "synthetic")
    f.report.to_json(out / "lipschitz.json")
    print(json.dumps({"replicates": bundle.M, "epsilon_local": f.report.epsilon_local}))
    _check_converged(f.draws.converged, "fit", args)
    return EXIT_OK


def cmd_utility(args) -> int:
    data = read_counts_csv(args.input, args.column)
    bundles = {}
    for item in args.synthetic:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--synthetic expects NAME=DIR, got {item!r}")
        try:
            bundles[name] = SyntheticBundle.read_dir(path)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
    table = utility_table(data, bundles, n_boot=args.n_boot, seed=substream(args.seed, "utility"))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "utility.csv")
    table.to_json(out / "utility.json")
    for r in table.rows:
        print(f"{r.estimand:7s} {r.variant:12s} {r.point:12.4f} [{r.lo:.4f}, {r.hi:.4f}]")
    return EXIT_OK


def cmd_mc(args) -> int:
    if args.generator == "poisson":
        gen = GeneratorSpec(kind="poisson", n=args.n, mu=args.mu)
    else:
        k = len(args.phis)
        gen = GeneratorSpec(kind="nb_mixture", n=args.n, weights=(0.2, 0.8) if k == 2 else (1 / k,) * k,
                            mus=(args.mu,) * k, phis=tuple(args.phis))
    scheme = _set(SchemeConfig(), scheme=args.scheme, c=args.c, g=args.g, radius=args.radius,
                  thresh=args.thresh, sw_target=args.sw_target, sw_match=args.sw_match)
    reweight = _set(ReweightConfig(), k_init=args.k, tolerance=args.tolerance, max_iters=args.max_iters)
    sampler = _set(MC_SAMPLER, n_chains=args.chains, n_warmup=args.warmup, n_keep=args.keep,
                   target_accept=args.target_accept)
    cfg = MCConfig(generator=gen, family=None if args.family is None else Family(args.family), R=args.R,
                   scheme=scheme, reweight=reweight, sampler=sampler, seed=args.seed, jobs=args.jobs)
    report = run_mc(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "mc_report.json")
    report.to_csv(out / "mc_replicates.csv")
    _write_json(out / "mc_violin.json", report.violin_rows())
    print(json.dumps(report.summary, indent=2))
    return EXIT_OK


def run_pipeline(cfg: PipelineConfig) -> tuple[dict, bool]:
    """Run and write every artifact; returns (manifest, converged)."""
    data = load_dataset(cfg)
    spec = cfg.spec()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = run_scheme(spec, data, cfg.scheme, cfg.sampler, cfg.reweight, seed=cfg.seed,
                     do_reweight=cfg.reweight is not None)
    name = cfg.scheme.scheme
    stages = {"Unweighted": run.unweighted, name: run.weighted}
    if run.outcome is not None:
        stages[f"{name}_final"] = run.final
    final_name = list(stages)[-1]

    run.unweighted.report.to_json(out / "lipschitz_unweighted.json")
    run.weighted.report.to_json(out / "lipschitz_weighted.json")
    if run.outcome is not None:
        run.outcome.to_json(out / "reweight.json")
        run.final.report.to_json(out / "lipschitz_final.json")

    bundles = {v: generate(spec, f.draws, data.n, cfg.M, substream(cfg.seed, "synth", v))
               for v, f in stages.items()}
    bundles[final_name].write_dir(out / "synthetic")
    table = utility_table(data, bundles, n_boot=cfg.n_boot, seed=substream(cfg.seed, "utility"))
    table.to_csv(out / "utility.csv")
    table.to_json(out / "utility.json")
    _write_json(out / "diagnostics.json", {v: f.draws.diagnostics() for v, f in stages.items()})

    if cfg.emit_weights:
        _emit_confidential(out, "weights.csv", run.weighted.weights)
        if run.outcome is not None:
            _emit_confidential(out, "weights_final.csv", run.outcome.alphas_w)
    if cfg.emit_matrix:
        rep = lipschitz_report(spec, stages[final_name].draws, data, stages[final_name].weights,
                               cfg.scheme.thresh, keep_matrix=True)
        conf = out / "confidential"
        conf.mkdir(exist_ok=True)
        rep.matrix_to_csv(conf / "lipschitz_matrix_final.csv")
    if cfg.emit_draws:
        stages[final_name].draws.to_csv(out / "draws_final.csv")

    manifest = {"version": __version__, **cfg.to_dict()}
    if cfg.input_csv is not None:
        manifest["input_sha256"] = _sha256(cfg.input_csv)
    _write_json(out / "manifest.json", manifest)
    return manifest, run.converged


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    if args.manifest:
        prior = json.loads(Path(args.manifest).read_text())
        sha = prior.get("input_sha256")
        if sha and cfg.input_csv and _sha256(cfg.input_csv) != sha:
            raise DataError("input file changed since the manifest was written")
    manifest, converged = run_pipeline(cfg)
    print(json.dumps({"output_dir": cfg.output_dir, "converged": converged}))
    _check_converged(converged, "pipeline", args)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "weights": cmd_weights,
    "reweight": cmd_reweight,
    "synthesize": cmd_synthesize,
    "utility": cmd_utility,
    "mc": cmd_mc,
    "pipeline": cmd_pipeline,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConvergenceError as exc:
        return _fail(EXIT_CONVERGENCE, exc)
    except (DataError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())
