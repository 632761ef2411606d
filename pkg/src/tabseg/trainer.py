"""Training loop with best-validation selection, and the three experiment runners."""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentPlan, TrainConfig
from .data import Sample, load_samples, load_volume, read_manifest, split_dataset
from .errors import ConfigurationError, DataError, NumericError
from .metrics import MetricsRecord, evaluate_pair, reliability_pair, shared_head_mask
from .models import SegmentationNet, build_model
from .optim import Adam
from .reports import Report, SubjectRow, write_history
from .runtime import evaluation_workers

log = logging.getLogger(__name__)


def mse_loss(pred: T.Tensor, gt, mask: np.ndarray | None = None) -> T.Tensor:
    """Mean squared error over (masked voxels x channels).

    ``pred`` and ``gt`` are ``[3,...]`` or ``[B,3,...]``; ``mask`` matches the
    spatial (and batch) extent without the channel axis.
    """
    gt_data = gt.data if isinstance(gt, T.Tensor) else np.asarray(gt)
    if gt_data.shape != pred.shape:
        raise ConfigurationError(f"mse_loss: prediction {pred.shape} vs target {gt_data.shape}")
    diff = T.sub(pred, T.Tensor(gt_data, dtype=pred.dtype))
    sq = T.square(diff)
    channels = pred.shape[-4]
    if mask is None:
        return T.mean(sq)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise DataError("mse_loss: empty mask")
    weights = np.expand_dims(mask, -4).astype(pred.dtype)
    return T.mul(T.tsum(T.mul(sq, weights)), 1.0 / (channels * count))


def _stack(samples: list[Sample], idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([samples[i].image for i in idx])
    targets = np.stack([samples[i].target for i in idx])
    masks = np.stack([samples[i].mask for i in idx])
    return images, targets, masks


def segment(model: SegmentationNet, image: np.ndarray) -> np.ndarray:
    """Read-only forward pass: ``[1,N,N,N]`` normalized scan to ``[3,N,N,N]`` probabilities."""
    with T.no_grad():
        out = model.forward(T.Tensor(image, dtype=model.head.weight.dtype))
    return out.data


def validation_loss(model: SegmentationNet, samples: list[Sample], masking: bool = True) -> float:
    losses = []
    with T.no_grad():
        for s in samples:
            pred = model.forward(T.Tensor(s.image))
            losses.append(float(mse_loss(pred, s.target, s.mask if masking else None).data))
    return float(np.mean(losses))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)


def train_on_samples(config: TrainConfig, train_set: list[Sample], val_set: list[Sample],
                     log_every: int = 0) -> TrainResult:
    """Adam on shuffled mini-batches; keep the epoch with the lowest validation loss."""
    config.validate()
    if not train_set:
        raise ConfigurationError("train: empty training set")
    if not val_set:
        raise ConfigurationError("train: empty validation set")
    model = build_model(config.model)
    params = model.parameters()
    opt = Adam(params, learning_rate=config.learning_rate, weight_decay=config.weight_decay)
    history = []
    best = None
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        batch_losses = []
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            images, targets, masks = _stack(train_set, order[lo:lo + config.batch_size])
            opt.zero_grad()
            pred = model.forward(T.Tensor(images))
            loss = mse_loss(pred, targets, masks if config.loss_masking else None)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            batch_losses.append(value)
        val = validation_loss(model, val_set, config.loss_masking)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses)), "val_loss": val})
        if best is None or val < best.best_validation_loss:
            best = Checkpoint.from_model(model, copy.deepcopy(opt.state), epoch, val)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.5f val %.5f", epoch, history[-1]["train_loss"], val)
    return TrainResult(best, history)


def _resolve_splits(config: TrainConfig) -> tuple[list[Sample], list[Sample]]:
    n = config.model.input_size
    if config.train and config.val:
        return load_samples(config.train, target=n), load_samples(config.val, target=n)
    records = read_manifest(config.data)
    train_ids, val_ids, _ = split_dataset([(r.subject, r.atrophy) for r in records], config.seed)
    return (load_samples(config.data, train_ids, target=n),
            load_samples(config.data, val_ids, target=n))


def train(config: TrainConfig) -> TrainResult:
    """Train from the datasets named in ``config`` and write checkpoint + history."""
    train_set, val_set = _resolve_splits(config)
    result = train_on_samples(config, train_set, val_set)
    if config.checkpoint:
        save_checkpoint(result.checkpoint, config.checkpoint)
    if config.history_path:
        write_history(result.history, config.history_path)
    return result


# -- experiments --------------------------------------------------------------------

def site_split(plan: ExperimentPlan, site: str) -> tuple[list[str], list[str], list[str]]:
    records = read_manifest(Path(plan.data_root) / site)
    return split_dataset([(r.subject, r.atrophy) for r in records], plan.training["seed"])


def _evaluate_subjects(model: SegmentationNet, samples: list[Sample], jobs: int) -> list[MetricsRecord]:
    preds = [segment(model, s.image) for s in samples]
    pairs = list(zip(preds, (s.target for s in samples)))
    with ThreadPoolExecutor(max_workers=evaluation_workers(jobs)) as pool:
        return list(pool.map(lambda pr: evaluate_pair(*pr), pairs))


def evaluate_checkpoint(ck: Checkpoint, samples: list[Sample], jobs: int = 1) -> list[MetricsRecord]:
    return _evaluate_subjects(ck.build(), samples, jobs)


def evaluate_transfer(plan: ExperimentPlan, target: str, variant: str, project: str,
                      jobs: int = 1) -> list[SubjectRow]:
    """Apply the source-site checkpoint of ``variant`` to ``target``'s test split."""
    path = plan.checkpoint_path(variant)
    if not path.exists():
        raise DataError(f"missing checkpoint {path}")
    ck = load_checkpoint(path)
    _, _, test_ids = site_split(plan, target)
    samples = load_samples(Path(plan.data_root) / target, test_ids, target=ck.config.input_size)
    records = evaluate_checkpoint(ck, samples, jobs)
    return [SubjectRow(project, variant, s.subject, rec) for s, rec in zip(samples, records)]


def run_performance(plan: ExperimentPlan, jobs: int = 1) -> Report:
    """Train each variant on the source split and test it on the same site."""
    site_dir = Path(plan.data_root) / plan.source
    train_ids, val_ids, _ = site_split(plan, plan.source)
    rows: list[SubjectRow] = []
    histories = {}
    for variant in plan.variants:
        cfg = plan.train_config(variant, checkpoint=str(plan.checkpoint_path(variant)))
        n = cfg.model.input_size
        result = train_on_samples(cfg, load_samples(site_dir, train_ids, target=n),
                                  load_samples(site_dir, val_ids, target=n))
        save_checkpoint(result.checkpoint, cfg.checkpoint)
        write_history(result.history, cfg.history_path)
        histories[variant] = result.history
        rows += evaluate_transfer(plan, plan.source, variant, plan.source, jobs)
    return Report("performance", rows, list(plan.variants), histories=histories)


def run_generality(plan: ExperimentPlan, jobs: int = 1) -> Report:
    """Evaluate source-trained checkpoints on other sites without retraining."""
    rows: list[SubjectRow] = []
    for target in plan.targets:
        for variant in plan.variants:
            rows += evaluate_transfer(plan, target, variant, f"{plan.source}→{target}", jobs)
    return Report("generality", rows, list(plan.variants))


GROUND_TRUTH = "ground_truth"


def _retest_pairs(site_dir: Path, size: int | None):
    records = read_manifest(site_dir)
    if any(len(r.scan_files) < 2 for r in records):
        raise DataError(f"{site_dir}: reliability needs two timepoints per subject")
    first = load_samples(site_dir, target=size, timepoint=0)
    second = load_samples(site_dir, target=size, timepoint=1)
    masks = []
    for r, s1, s2 in zip(records, first, second):
        mask = shared_head_mask(load_volume(site_dir / r.scan_files[0]),
                                load_volume(site_dir / r.scan_files[1]))
        if mask.shape != s1.target.shape[1:]:
            mask = s1.mask & s2.mask  # scans were padded/cropped to the model size
        masks.append(mask)
    return first, second, masks


def run_reliability(plan: ExperimentPlan, jobs: int = 1) -> Report:
    """Test-retest agreement of each model against the ground-truth pipeline."""
    rows: list[SubjectRow] = []
    for target in plan.targets:
        site_dir = Path(plan.data_root) / target
        for variant in plan.variants:
            path = plan.checkpoint_path(variant)
            if not path.exists():
                raise DataError(f"missing checkpoint {path}")
            ck = load_checkpoint(path)
            model = ck.build()
            first, second, masks = _retest_pairs(site_dir, ck.config.input_size)
            for s1, s2, mask in zip(first, second, masks):
                record = reliability_pair(segment(model, s1.image), segment(model, s2.image), mask)
                rows.append(SubjectRow(target, variant, s1.subject, record))
        first, second, masks = _retest_pairs(site_dir, None)
        for s1, s2, mask in zip(first, second, masks):
            rows.append(SubjectRow(target, GROUND_TRUTH, s1.subject,
                                   reliability_pair(s1.target, s2.target, mask)))
    return Report("reliability", rows, list(plan.variants) + [GROUND_TRUTH])


def run_plan(plan: ExperimentPlan, jobs: int = 1) -> Report:
    runner = {"performance": run_performance, "generality": run_generality,
              "reliability": run_reliability}[plan.kind]
    return runner(plan, jobs)
