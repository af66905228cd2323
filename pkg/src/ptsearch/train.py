"""Full-graph training, evaluation, multi-seed final runs and ablations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .autodiff import DTYPES, Tape, adam_step
from .graph import BLOCKS, Dataset, FeatureBundle
from .metrics import MetricsReport, Summary, aggregate, compute_metrics, confusion_matrix, predictions
from .pipeline import ArchConfig, PipelineModel, compile_model, forward, predict_logits

log = logging.getLogger(__name__)


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    epochs: int = 70
    lr: float = 0.04
    weight_decay: float = 2e-4
    dropout_feature: float = 0.5
    dropout_gnn: float = 0.8
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")


# search-phase and final-phase defaults
SEARCH_TRAIN = TrainConfig()
FINAL_TRAIN = TrainConfig(epochs=100, lr=1e-3)


class TrainResult(NamedTuple):
    model: PipelineModel
    val_accuracy: float
    test_accuracy: float


def _cast(bundle: FeatureBundle, dtype) -> FeatureBundle:
    if dtype == np.float64:
        return bundle
    return FeatureBundle(*(bundle.block(b).astype(dtype) for b in BLOCKS), labels=bundle.labels)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return float("nan")
    return float(np.mean(predictions(logits)[idx] == labels[idx]))


def train_model(
    genotype: str,
    dataset: Dataset,
    cfg: TrainConfig = SEARCH_TRAIN,
    arch: ArchConfig | None = None,
) -> TrainResult:
    """Train on the train mask for ``cfg.epochs`` full-graph steps.

    ``dataset`` must already be normalized. Returns the last-epoch model with
    its validation and test accuracy. Raises :class:`DivergedError` on a
    non-finite loss.
    """
    dtype = DTYPES[cfg.precision]
    graph, feats, split, meta = dataset
    model = compile_model(genotype, meta, arch, seed=cfg.seed)
    if dtype != np.float64:
        model.params = model.params.astype(dtype)
    feats = _cast(feats, dtype)
    rng = np.random.default_rng([cfg.seed, 1])
    labels, train_mask = feats.labels, split.train
    store = model.params

    for epoch in range(cfg.epochs):
        tape = Tape()
        logits = forward(model, graph, feats, training=True, rng=rng, tape=tape,
                         dropout_feature=cfg.dropout_feature, dropout_gnn=cfg.dropout_gnn)
        loss = tape.cross_entropy(logits, labels, train_mask)
        if not np.isfinite(loss.value):
            raise DivergedError(epoch, float(loss.value))
        store.zero_grad()
        tape.backward(loss)
        adam_step(store, cfg.lr, weight_decay=cfg.weight_decay)

    out = predict_logits(model, graph, feats)
    if not np.isfinite(out).all():
        raise DivergedError(cfg.epochs, float("nan"))
    return TrainResult(model, accuracy(out, labels, split.val), accuracy(out, labels, split.test))


def evaluate(model: PipelineModel, dataset: Dataset, split_name: str = "test", seed: int | None = None) -> MetricsReport:
    graph, feats, split, _ = dataset
    dtype = next(iter(model.params.params.values())).dtype
    logits = predict_logits(model, graph, _cast(feats, dtype))
    return compute_metrics(confusion_matrix(logits, feats.labels, split.mask(split_name)), seed=seed)


@dataclass
class TrainingEvaluator:
    """Picklable ``(genotype, seed) -> (val_acc, test_acc)`` used by the search."""

    dataset: Dataset
    cfg: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __call__(self, genotype: str, seed: int) -> tuple[float, float]:
        res = train_model(genotype, self.dataset, replace(self.cfg, seed=seed), self.arch)
        return res.val_accuracy, res.test_accuracy


def run_seeds(
    genotype: str,
    dataset: Dataset,
    cfg: TrainConfig,
    arch: ArchConfig | None = None,
    runs: int = 5,
) -> tuple[Summary, list[PipelineModel]]:
    """Train ``runs`` times with seeds cfg.seed, cfg.seed+1, ...; test-split metrics."""
    reports, models, failed = [], [], 0
    for k in range(runs):
        seed = cfg.seed + k
        try:
            res = train_model(genotype, dataset, replace(cfg, seed=seed), arch)
        except DivergedError as e:
            log.warning("%s seed %d: %s", genotype, seed, e)
            failed += 1
            continue
        reports.append(evaluate(res.model, dataset, "test", seed=seed))
        models.append(res.model)
    return aggregate(reports, failed), models


def run_final(
    genotypes: list[str],
    dataset: Dataset,
    runs: int = 5,
    cfg: TrainConfig = FINAL_TRAIN,
    arch: ArchConfig | None = None,
) -> list[tuple[str, Summary]]:
    """Retrain each genotype from scratch over ``runs`` seeds."""
    if not genotypes:
        raise ValueError("run_final needs at least one genotype")
    return [(g, run_seeds(g, dataset, cfg, arch, runs)[0]) for g in genotypes]


FEATURE_GRID: list[tuple[str, tuple[str, ...]]] = [
    ("Full", BLOCKS),
    ("w/o description", ("tweet", "numerical", "categorical")),
    ("w/o tweets", ("desc", "numerical", "categorical")),
    ("w/o numerical", ("desc", "tweet", "categorical")),
    ("w/o categorical", ("desc", "tweet", "numerical")),
    ("des + tweets", ("desc", "tweet")),
    ("cat + num", ("numerical", "categorical")),
    ("only description", ("desc",)),
    ("only tweets", ("tweet",)),
    ("only numerical", ("numerical",)),
    ("only categorical", ("categorical",)),
]
ABLATION_MODES = ("features", "gate", "skip")


@dataclass
class AblationSpec:
    feature_mask: tuple[str, ...] = BLOCKS
    gate_enabled: bool = True
    skip_enabled: bool = True
    runs: int = 5

    def __post_init__(self):
        if not self.feature_mask:
            raise ValueError("feature_mask must be non-empty")

    def arch(self, base: ArchConfig) -> ArchConfig:
        return replace(base, feature_mask=tuple(self.feature_mask), gate=self.gate_enabled, skip=self.skip_enabled)


def ablation_grid(mode: str, runs: int = 5) -> list[tuple[str, AblationSpec]]:
    if mode == "features":
        return [(name, AblationSpec(feature_mask=mask, runs=runs)) for name, mask in FEATURE_GRID]
    if mode == "gate":
        return [("With Gate", AblationSpec(runs=runs)), ("Without Gate", AblationSpec(gate_enabled=False, runs=runs))]
    if mode == "skip":
        return [("With skip", AblationSpec(runs=runs)), ("Without skip", AblationSpec(skip_enabled=False, runs=runs))]
    raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")


def run_ablation(
    spec: AblationSpec,
    genotype: str,
    dataset: Dataset,
    cfg: TrainConfig = FINAL_TRAIN,
    base_arch: ArchConfig | None = None,
) -> Summary:
    """Train ``genotype`` under one ablation arm over ``spec.runs`` seeds."""
    arch = spec.arch(base_arch or ArchConfig())
    return run_seeds(genotype, dataset, cfg, arch, spec.runs)[0]


def run_ablation_table(
    mode: str,
    genotype: str,
    dataset: Dataset,
    cfg: TrainConfig = FINAL_TRAIN,
    base_arch: ArchConfig | None = None,
    runs: int = 5,
) -> list[tuple[str, Summary]]:
    return [(name, run_ablation(spec, genotype, dataset, cfg, base_arch)) for name, spec in ablation_grid(mode, runs)]
