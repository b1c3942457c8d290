"""Command-line entry point: ``gapcomp <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data/integrity error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from .compression import (
    apply_mask,
    compression_ratio,
    concept_centroids,
    make_rfs_mask,
    renormalize_centroids,
    save_centroid_store,
    save_mask,
    target_dim,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateVectorError,
    FormatError,
    IntegrityError,
    ParameterError,
    TrainingError,
)
from .geometry import all_modality_gaps, explained_variance_spectrum, fisher_ratio
from .store import load_store, normalize_store, save_store
from .sweep import run_experiment, run_sweep, write_sweep_csv
from .trainer import (
    PairedInputs,
    generate_synthetic,
    save_encoders,
    train,
    write_loss_history,
)

logger = logging.getLogger("gapcomp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("GAPCOMP_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective(cfg: dict, out: Path, command: str) -> Path:
    path = out / f"{command}.effective.json"
    path.write_text(cfgmod.dump_config(cfg))
    return path


def _tau_dir(out: Path, tau: float) -> Path:
    return out / f"tau_{tau:g}"


def cmd_gen_synth(args, cfg, out):
    train_data, test_data = generate_synthetic(cfgmod.synth_config(cfg))
    for name, data in (("train", train_data), ("test", test_data)):
        path = out / f"synth_{name}.gcmp"
        save_store(data.to_store(), path)
        print(path)


def _load_inputs(directory: Path):
    return tuple(PairedInputs.from_store(load_store(directory / f"synth_{n}.gcmp")) for n in ("train", "test"))


def cmd_train(args, cfg, out):
    data = _load_inputs(Path(args.inputs)) if args.inputs else generate_synthetic(cfgmod.synth_config(cfg))
    for tau in cfg["train"]["temperatures"]:
        try:
            result = train(data, cfgmod.train_config(cfg, tau))
        except TrainingError as exc:
            raise TrainingError(f"training at temperature {tau:g} failed: {exc}", exc.epoch) from exc
        target = _tau_dir(out, tau)
        target.mkdir(parents=True, exist_ok=True)
        save_encoders(result.params, target / "encoders.gcen")
        save_store(result.train_store, target / "train.gcmp")
        save_store(result.test_store, target / "test.gcmp")
        write_loss_history(result.loss_history, target / "loss.csv")
        print(target)


def metric_rows(store, temperature="") -> list[tuple]:
    rows = [(temperature, f"gap_{g.modality_pair[0]}_{g.modality_pair[1]}", g.gap) for g in all_modality_gaps(store)]
    try:
        fr = fisher_ratio(store)
        rows += [(temperature, "fisher", fr.fisher), (temperature, "trace_between", fr.trace_between),
                 (temperature, "trace_within", fr.trace_within)]
    except ParameterError as exc:
        logger.warning("fisher ratio skipped: %s", exc)
    spectrum = explained_variance_spectrum(store)
    rows += [(temperature, f"eigenvalue_{k}", float(v)) for k, v in enumerate(spectrum.eigenvalues)]
    rows += [(temperature, f"cumulative_variance_{k}", float(v)) for k, v in enumerate(spectrum.cumulative_fraction)]
    return rows


def cmd_metrics(args, cfg, out):
    store = load_store(args.store)
    temperature = "" if args.temperature is None else repr(float(args.temperature))
    path = out / "metrics.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["temperature", "metric_name", "value"])
        for t, name, value in metric_rows(store, temperature):
            writer.writerow([t, name, repr(float(value))])
    print(path)


def cmd_compress(args, cfg, out):
    c = cfg["compress"]
    store = load_store(args.store)
    if not store.normalized:
        logger.info("normalizing input store before averaging")
        store = normalize_store(store)
    centroids = concept_centroids(store, c["granularity"])
    if c["renormalize"]:
        centroids = renormalize_centroids(centroids)
    mask = make_rfs_mask(store.dim, target_dim(store.dim, c["rate"]), c["seed"])
    centroids = centroids.with_vectors(apply_mask(centroids.vectors, mask, renormalize=c["renormalize"]))
    save_centroid_store(centroids, out / "centroids.gcmp")
    save_mask(mask, out / "mask.json")
    ratio = compression_ratio(len(store), store.dim, len(centroids), mask.target_dim)
    print(out / "centroids.gcmp")
    print(out / "mask.json")
    print(f"compression_ratio={ratio!r}")


def cmd_eval(args, cfg, out):
    store = load_store(args.store)
    if not store.normalized:
        store = normalize_store(store)
    tau = float("nan") if args.temperature is None else float(args.temperature)
    reports = run_sweep({tau: store}, cfg["sweep"]["rates"], cfg["eval"]["representations"],
                        cfg["eval"]["tasks"], cfg["sweep"]["seeds"], cfgmod.eval_options(cfg), cfg["jobs"])
    path = out / "eval.csv"
    write_sweep_csv(reports, path)
    print(path)


def cmd_sweep(args, cfg, out):
    reports = run_experiment(
        cfgmod.synth_config(cfg), cfgmod.train_config(cfg, cfg["train"]["temperatures"][0]),
        cfg["train"]["temperatures"], cfg["sweep"]["rates"], cfg["eval"]["representations"],
        cfg["eval"]["tasks"], cfg["sweep"]["seeds"], cfgmod.eval_options(cfg), cfg["jobs"],
    )
    path = out / "sweep.csv"
    write_sweep_csv(reports, path)
    failed = sum(not r.ok for r in reports)
    if failed:
        logger.warning("%d of %d cells failed", failed, len(reports))
    print(path)


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "temperatures", None):
        cfg["train"]["temperatures"] = args.temperatures
    if getattr(args, "rates", None):
        cfg["sweep"]["rates"] = args.rates
    if getattr(args, "representations", None):
        cfg["eval"]["representations"] = args.representations
    if getattr(args, "granularity", None):
        cfg["compress"]["granularity"] = args.granularity
    if getattr(args, "rate", None) is not None:
        if not args.rate > 0:
            raise ParameterError(f"compression rate must be > 0, got {args.rate}")
        cfg["compress"]["rate"] = args.rate
    return cfgmod.resolve(cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--jobs", type=int, help="parallel sweep workers")
    common.add_argument("--out", help="output directory (default: $GAPCOMP_OUT or .)")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="gapcomp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", parents=[common], help="write synthetic train/test input stores")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", parents=[common], help="train encoders at each temperature")
    p.add_argument("--inputs", help="directory holding synth_train.gcmp and synth_test.gcmp")
    p.add_argument("--temperature", dest="temperatures", type=float, action="append")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", parents=[common], help="gap, Fisher ratio and variance spectrum of a store")
    p.add_argument("store")
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compress", parents=[common], help="centroids plus random feature selection")
    p.add_argument("store")
    p.add_argument("--granularity", choices=["per_concept", "per_class"])
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", parents=[common], help="classification metrics for one store")
    p.add_argument("store")
    p.add_argument("--temperature", type=float)
    p.add_argument("--rate", dest="rates", type=float, action="append")
    p.add_argument("--representation", dest="representations", action="append",
                   choices=["centroid", "concat", "single_modality"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="full temperature x rate x representation grid")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.load_config(args.config, seed=args.seed, jobs=args.jobs)
        cfg = _apply_overrides(cfg, args)
        out = _out_dir(args)
        _write_effective(cfg, out, args.command)
        args.func(args, cfg, out)
    except (ConfigError, ParameterError) as exc:
        print(f"gapcomp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"gapcomp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, IntegrityError, DataError, DegenerateVectorError, OSError) as exc:
        print(f"gapcomp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
