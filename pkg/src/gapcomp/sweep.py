"""Temperature x compression-rate x representation sweeps and their CSV table."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np

from .compression import (
    apply_mask,
    compression_ratio,
    concat_baseline,
    concept_centroids,
    make_rfs_mask,
    renormalize_centroids,
    single_modality,
    target_dim,
)
from .errors import GapCompError, ParameterError
from .evaluation import (
    SplitSpec,
    evaluate_multilabel,
    nearest_centroid_classify,
    split_train_test,
    topk_accuracy,
    train_linear,
    train_one_vs_rest,
)
from .geometry import all_modality_gaps, fisher_ratio
from .store import EmbeddingStore
from .trainer import SynthConfig, TrainConfig, generate_synthetic, train

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("centroid", "concat", "single_modality")
TASKS = ("single", "multilabel")
CSV_COLUMNS = ("temperature", "representation", "compression_rate", "seed", "top1", "top5", "map",
               "micro_f1", "gap", "fisher", "compression_ratio", "status")


@dataclass(frozen=True)
class EvalOptions:
    classifier: str = "linear"
    learning_rate: float = 1.0
    epochs: int = 300
    l2: float = 0.0
    f1_threshold: float = 0.5
    train_fraction: float = 0.8
    min_per_class: int = 5

    def __post_init__(self):
        if self.classifier not in ("linear", "nearest_centroid"):
            raise ParameterError(f"unknown classifier {self.classifier!r}")


@dataclass(frozen=True)
class EvalReport:
    temperature: float
    representation: str
    compression_rate: float
    seed: int
    top1: float | None = None
    top5: float | None = None
    map: float | None = None
    micro_f1: float | None = None
    gap: float | None = None
    fisher: float | None = None
    compression_ratio: float | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def sort_key(self):
        return (self.temperature, self.representation, self.compression_rate, self.seed)


def store_geometry(store: EmbeddingStore) -> tuple[float | None, float | None]:
    """Mean pairwise modality gap and class-label Fisher ratio of a store."""
    gaps = all_modality_gaps(store)
    gap = float(np.mean([g.gap for g in gaps])) if gaps else None
    try:
        fisher = fisher_ratio(store).fisher
    except ParameterError:
        fisher = None
    return gap, fisher


def build_representation(store: EmbeddingStore, representation: str):
    if representation == "centroid":
        return renormalize_centroids(concept_centroids(store))
    if representation == "concat":
        return concat_baseline(store)
    if representation == "single_modality":
        return single_modality(store, 0)
    raise ParameterError(f"unknown representation {representation!r}")


def evaluate_cell(store: EmbeddingStore, temperature: float, representation: str, rate: float, seed: int,
                  tasks: Sequence[str] = TASKS, options: EvalOptions = EvalOptions(),
                  geometry: tuple | None = None) -> EvalReport:
    """Build one representation, compress it, split, fit and score.

    Any library error is caught and returned as a failed report.
    """
    gap, fisher = geometry if geometry is not None else store_geometry(store)
    report = EvalReport(temperature, representation, rate, seed, gap=gap, fisher=fisher)
    try:
        rep = build_representation(store, representation)
        mask = make_rfs_mask(rep.dim, target_dim(rep.dim, rate), seed)
        rep = rep.with_vectors(apply_mask(rep.vectors, mask, renormalize=True))
        ratio = compression_ratio(len(store), store.dim, len(rep), mask.target_dim)
        split = split_train_test(rep, SplitSpec(options.train_fraction, options.min_per_class, seed))
        values = {"compression_ratio": ratio}
        if "single" in tasks:
            if options.classifier == "linear":
                clf = train_linear(split.train, options.learning_rate, options.epochs, seed, options.l2)
                values["top1"] = topk_accuracy(clf, split.test, 1)
                values["top5"] = topk_accuracy(clf, split.test, 5)
            else:
                values["top1"] = nearest_centroid_classify(split.train, split.test, 1)
                values["top5"] = nearest_centroid_classify(split.train, split.test, 5)
        if "multilabel" in tasks:
            ovr = train_one_vs_rest(split.train, options.learning_rate, options.epochs, seed, options.l2)
            values["map"], values["micro_f1"] = evaluate_multilabel(ovr, split.test, options.f1_threshold)
        return replace(report, **values)
    except (GapCompError, ValueError, ArithmeticError) as exc:
        logger.warning("cell tau=%g %s rate=%g seed=%d failed: %s", temperature, representation, rate, seed, exc)
        return replace(report, status=f"failed: {exc}")


def _run_cell(args):
    return evaluate_cell(*args)


def run_sweep(stores: Mapping[float, EmbeddingStore], rates: Sequence[float],
              representations: Sequence[str] = REPRESENTATIONS, tasks: Sequence[str] = TASKS,
              seeds: Sequence[int] = (0,), options: EvalOptions = EvalOptions(), jobs: int = 1) -> list[EvalReport]:
    """Evaluate every (temperature, rate, representation, seed) cell; rows come back sorted."""
    for t in tasks:
        if t not in TASKS:
            raise ParameterError(f"unknown task {t!r}")
    geometry = {tau: store_geometry(s) for tau, s in stores.items()}
    cells = [
        (stores[tau], tau, rep, rate, seed, tuple(tasks), options, geometry[tau])
        for tau, rate, rep, seed in itertools.product(sorted(stores), rates, representations, seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_cell, cells))
    else:
        reports = [_run_cell(c) for c in cells]
    return sorted(reports, key=EvalReport.sort_key)


def run_experiment(synth: SynthConfig, train_template: TrainConfig, temperatures: Sequence[float],
                   rates: Sequence[float], representations: Sequence[str] = REPRESENTATIONS,
                   tasks: Sequence[str] = TASKS, seeds: Sequence[int] = (0, 1, 2),
                   options: EvalOptions = EvalOptions(), jobs: int = 1) -> list[EvalReport]:
    """Generate, train at every temperature, then sweep the held-out embeddings.

    Sweep seed ``s`` offsets the data and training seeds by ``s`` and also
    seeds the split, the selection mask and the classifier.
    """
    reports = []
    for seed in seeds:
        data = generate_synthetic(replace(synth, seed=synth.seed + seed))
        stores = {}
        for tau in temperatures:
            cfg = replace(train_template, temperature=tau, seed=train_template.seed + seed)
            try:
                stores[tau] = train(data, cfg).test_store
            except GapCompError as exc:
                logger.warning("training at tau=%g seed=%d failed: %s", tau, seed, exc)
                reports.extend(EvalReport(tau, rep, rate, seed, status=f"failed: {exc}")
                               for rate in rates for rep in representations)
        reports.extend(run_sweep(stores, rates, representations, tasks, [seed], options, jobs))
    return sorted(reports, key=EvalReport.sort_key)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def sweep_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=EvalReport.sort_key):
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_sweep_csv(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(sweep_csv(reports))


def read_sweep_csv(path) -> list[EvalReport]:
    types = {f.name: f.type for f in fields(EvalReport)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values = {}
            for key, raw in row.items():
                if key == "status" or key == "representation":
                    values[key] = raw
                elif key == "seed":
                    values[key] = int(raw)
                elif key in types:
                    values[key] = float(raw) if raw != "" else None
            out.append(EvalReport(**values))
    return out
