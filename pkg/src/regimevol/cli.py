"""Command-line entry point: ``run``, ``synth`` and ``inspect``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml
from threadpoolctl import threadpool_limits

from . import synth
from .config import ConfigError, RunConfig, load_config, parse_synth
from .coefcluster import write_coefficients
from .evaluation import report
from .features import FeatureFrame, build_frame, fit_scaler, load_dataset
from .forecast import (PipelineError, WindowSpec, fit_family, refit_origins, run_backtest,
                       segment_window, window_seed)
from .ingest import IngestError
from .otcluster import write_matrices

log = logging.getLogger("regimevol")

EXIT_CONFIG = 2
EXIT_PIPELINE = 3
STAGES = ("features", "segments", "distances", "responsibilities")
STAGE_FAMILIES = {
    "features": None,
    "segments": ("dist_cluster", "coef_cluster"),
    "distances": ("dist_cluster",),
    "responsibilities": ("coef_cluster",),
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_frame(cfg: RunConfig) -> tuple[FeatureFrame, dict]:
    """Feature frame for the configured data source, plus input provenance."""
    try:
        if cfg.data is not None:
            aligned = load_dataset(cfg.data.bars, cfg.data.vix, cfg.data.calendar)
            inputs = {str(p): _sha256(p) for p in (cfg.data.bars, cfg.data.vix)}
        else:
            aligned = synth.generate(cfg.synth).aligned()
            inputs = {"synth_seed": cfg.synth.seed}
        return build_frame(aligned), inputs
    except (IngestError, OSError) as exc:
        raise PipelineError(f"ingest: {exc}") from exc
    except ValueError as exc:
        raise PipelineError(f"features: {exc}") from exc


def cmd_run(cfg: RunConfig) -> list[Path]:
    frame, inputs = load_frame(cfg)
    groups = {}
    for period in cfg.periods.periods:
        window = WindowSpec(cfg.train_len, period.horizon, cfg.step)
        for spec in cfg.models:
            log.info("backtest %s on %s", spec.label, period.name)
            groups[(spec.label, period.name)] = run_backtest(frame, spec, window, period.bounds, cfg.seed,
                                                            period.train_inside)
    rep = report(groups, cfg.output)
    files = sorted(rep.files)
    manifest = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": {p.name: _sha256(p) for p in files},
    }
    path = cfg.output / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files + [path]


def cmd_synth(spec: synth.SynthSpec, out_dir: Path) -> dict[str, Path]:
    return synth.write(synth.generate(spec), out_dir)


def _first_window(cfg: RunConfig, frame: FeatureFrame):
    period = cfg.periods.periods[0]
    window = WindowSpec(cfg.train_len, period.horizon, cfg.step)
    origins = refit_origins(frame, window, period.bounds, period.train_inside)
    if not origins:
        raise PipelineError(f"period {period.name} holds no complete forecast block")
    origin = origins[0]
    return slice(origin - cfg.train_len + 1, origin + 1), window_seed(cfg.seed, origin)


def cmd_inspect(stage: str, cfg: RunConfig) -> list[Path]:
    """Dump one intermediate stage for the first training window of the first period."""
    families = STAGE_FAMILIES[stage]
    spec = None
    if families is not None:
        spec = next((m for m in cfg.models if m.family in families), None)
        if spec is None:
            have = sorted({m.family for m in cfg.models})
            raise ConfigError(f"stage {stage!r} is incompatible with model family {', '.join(have)}")
    frame, _ = load_frame(cfg)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    if stage == "features":
        path = out / "features.csv"
        frame.to_csv(path)
        return [path]

    rows, seed = _first_window(cfg, frame)
    X = frame.columns(spec.feature_names)[rows]
    y = frame.y[rows]
    if stage == "segments":
        segs = segment_window(fit_scaler(X, y, spec.feature_names).apply_y(y), spec.segment)
        path = out / "segments.csv"
        segs.to_csv(path, frame.dates[rows])
        return [path]

    vix_t = frame.vix_target()[rows] if spec.mode == "dual_recursive" else None
    model = fit_family(X, y, replace(spec, classifier=replace(spec.classifier, n_iter=0)), seed, vix_t)
    if stage == "distances":
        if "distances" not in model.info:
            raise PipelineError("inspected window has fewer than two segments; no distances to dump")
        return [Path(p) for p in write_matrices(out, model.info["distances"], model.info.get("kernel"))]
    if "coefficients" not in model.info:
        raise PipelineError("inspected window has fewer than three segments; no responsibilities to dump")
    paths = [out / "thetas.csv", out / "responsibilities.csv"]
    write_coefficients(*paths, model.info["coefficients"], model.info["responsibilities"])
    return paths


def _load_synth_spec(path: Path | None) -> synth.SynthSpec:
    if path is None:
        return synth.SynthSpec()
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{path}: line {mark.line + 1 if mark else '?'}: {exc}") from exc
    if isinstance(raw, dict) and "synth" in raw:
        raw = raw["synth"]
    return parse_synth(raw, "synth")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regimevol", description="Regime-switching RV backtests")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="thread limit for numeric libraries")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="run every configured backtest and write the report")
    sub.add_parser("synth", parents=[common], help="write synthetic bars, VIX and truth files")
    p = sub.add_parser("inspect", parents=[common], help="dump one intermediate stage")
    p.add_argument("stage", choices=STAGES)
    return ap


def _run_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error[config]: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(args.threads):
            if args.verb == "synth":
                spec = _load_synth_spec(args.config)
                if args.seed is not None:
                    spec = replace(spec, seed=args.seed)
                files = list(cmd_synth(spec, args.out or Path("synth_out")).values())
            else:
                cfg = _run_config(args)
                files = cmd_run(cfg) if args.verb == "run" else cmd_inspect(args.stage, cfg)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.verb == "synth":
            print(f"error[config]: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error[pipeline]: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (PipelineError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error[pipeline]: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
