import csv
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from utils.config import RunConfig, TrainConfig
from utils.cost import count_params, profile_model
from utils.data import SegSample, generate_dataset, iterate_batches, kfold_indices, load_dataset, split_dataset
from utils.errors import ConfigError, FusionUNetError, NumericalError
from utils.file_handlers import write_json_file
from utils.losses import focal_loss, get_loss
from utils.metrics import dice_metric, iou_metric, per_class_scores
from utils.model import FusionConfig, FusionUNet, build, load_checkpoint, save_checkpoint
from utils.optim import build_optimizer, cosine_warm_restart_lr
from utils.runtime import progress_enabled
from utils.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "val_dice", "val_iou", "lr"]


@dataclass
class DatasetSplits:
    train: List[SegSample]
    val: List[SegSample]
    test: List[SegSample] = field(default_factory=list)


class EvalResult(NamedTuple):
    dice: float
    iou: float
    per_class_dice: List[float]


@dataclass
class RunReport:
    """Everything a run produced except wall-clock time, which lives in timing.json."""

    epochs: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_dice: float = 0.0
    best_val_iou: float = 0.0
    test_dice: Optional[float] = None
    test_iou: Optional[float] = None
    test_per_class_dice: List[float] = field(default_factory=list)
    params: int = 0
    macs: int = 0
    flops: int = 0
    config: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_dice": self.best_val_dice,
            "best_val_iou": self.best_val_iou,
            "test_dice": self.test_dice,
            "test_iou": self.test_iou,
            "test_per_class_dice": self.test_per_class_dice,
            "params": self.params,
            "macs": self.macs,
            "flops": self.flops,
            "config": self.config,
        }

    def write(self, out_dir: Union[str, Path], metrics_name: str = "metrics.csv") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / metrics_name, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(METRICS_HEADER)
            for row in self.epochs:
                writer.writerow([row[k] for k in METRICS_HEADER])
        write_json_file(out / "report.json", self.to_dict())
        write_json_file(out / "timing.json", {"wall_clock_seconds": self.wall_clock})


def prepare_splits(run: RunConfig) -> DatasetSplits:
    """Generate (or load) the data and cut it into train/val/test."""
    data = run.data
    if data.dataset_dir:
        samples = load_dataset(data.dataset_dir)
        total = data.n_train + data.n_val + data.n_test
        if len(samples) < total:
            raise ConfigError(f"{data.dataset_dir} holds {len(samples)} samples, {total} requested")
        return DatasetSplits(samples[:data.n_train], samples[data.n_train:data.n_train + data.n_val],
                             samples[data.n_train + data.n_val:total])
    samples = generate_dataset(data.synth, data.n_train + data.n_val + data.n_test)
    return DatasetSplits(samples[:data.n_train], samples[data.n_train:data.n_train + data.n_val],
                         samples[data.n_train + data.n_val:])


def predict(model: FusionUNet, images: np.ndarray) -> np.ndarray:
    """Argmax labels for an N×C×S×S image batch."""
    model.eval()
    with no_grad():
        logits = model(Tensor(images))
    return logits.data.argmax(axis=1)


def evaluate_detailed(model: FusionUNet, samples: Sequence[SegSample], batch_size: int = 8) -> EvalResult:
    """Per-sample Dice/IoU averaged over the dataset, plus mean Dice per foreground label."""
    n_classes = model.config.n_classes
    dice, iou, per_class = [], [], []
    for images, masks in iterate_batches(samples, batch_size):
        preds = predict(model, images)
        for pred, mask in zip(preds, masks):
            dice.append(dice_metric(pred, mask, n_classes))
            iou.append(iou_metric(pred, mask, n_classes))
            per_class.append(per_class_scores(pred, mask, n_classes)[0][1:])
    if not dice:
        return EvalResult(0.0, 0.0, [])
    return EvalResult(float(np.mean(dice)), float(np.mean(iou)),
                      [float(v) for v in np.mean(per_class, axis=0)])


def evaluate(model: FusionUNet, samples: Sequence[SegSample], batch_size: int = 8) -> Tuple[float, float]:
    """(mean Dice, mean IoU) of argmax predictions over `samples`."""
    result = evaluate_detailed(model, samples, batch_size)
    return result.dice, result.iou


def _loss_fn(config: TrainConfig):
    if config.loss == "focal":
        return lambda logits, mask: focal_loss(logits, mask, config.focal_gamma)
    return get_loss(config.loss)


def train(model: FusionUNet, splits: DatasetSplits, config: TrainConfig,
          out_dir: Optional[Union[str, Path]] = None, run_config: Optional[Dict[str, Any]] = None) -> RunReport:
    """
    Train with per-batch cosine warm restarts and keep the best-validation weights.

    Args:
        model (FusionUNet): Model to train in place; ends holding the best weights
        splits (DatasetSplits): Train, validation and optional test samples
        config (TrainConfig): Optimizer, schedule, loss and seed
        out_dir (Optional[Union[str, Path]]): Where to write the checkpoint,
            metrics CSV, report and timing files
        run_config (Optional[Dict[str, Any]]): Config echo for the report

    Returns:
        RunReport: Per-epoch metrics and final test scores

    Raises:
        NumericalError: If the training loss becomes NaN or infinite
    """
    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    optimizer_kwargs = ({"betas": config.betas, "eps": config.eps} if config.optimizer == "adam"
                        else {"momentum": config.momentum})
    optimizer = build_optimizer(config.optimizer, model.parameters(), config.lr, **optimizer_kwargs)
    loss_fn = _loss_fn(config)
    batches_per_epoch = -(-len(splits.train) // config.batch_size)

    side = model.config.input_side
    counter = profile_model(model, (1, model.config.in_channels, side, side))
    report = RunReport(params=count_params(model), macs=counter.macs, flops=counter.flops,
                       config=run_config or {"model": model.config.to_dict(), "train": config.to_dict()})
    best_state: Optional[List[np.ndarray]] = None
    report.best_val_dice = -1.0

    for epoch in range(config.epochs):
        model.train()
        epoch_lr = cosine_warm_restart_lr(epoch, config.T_0, config.T_mult, config.lr, config.eta_min)
        losses = []
        batches = iterate_batches(splits.train, config.batch_size, rng, config.augmentation)
        bar = tqdm(batches, total=batches_per_epoch, desc=f"epoch {epoch + 1}/{config.epochs}",
                   disable=not progress_enabled(), leave=False)
        for b, (images, masks) in enumerate(bar):
            optimizer.lr = cosine_warm_restart_lr(epoch + b / batches_per_epoch, config.T_0, config.T_mult,
                                                  config.lr, config.eta_min)
            optimizer.zero_grad()
            loss = loss_fn(model(Tensor(images)), masks)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"training loss became {value} at epoch {epoch + 1}, batch {b + 1}")
            loss.backward()
            optimizer.step()
            losses.append(value)
            bar.set_postfix(loss=f"{value:.4f}")

        val_dice, val_iou = evaluate(model, splits.val, config.eval_batch_size)
        row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_dice": val_dice,
               "val_iou": val_iou, "lr": epoch_lr}
        report.epochs.append(row)
        logger.info("epoch %d/%d loss %.4f val dice %.4f iou %.4f lr %.2e", epoch + 1, config.epochs,
                    row["train_loss"], val_dice, val_iou, epoch_lr)

        if val_dice > report.best_val_dice:
            report.best_epoch, report.best_val_dice, report.best_val_iou = epoch + 1, val_dice, val_iou
            best_state = [a.copy() for a in model.state_arrays()]
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(model, Path(out_dir) / config.checkpoint_name)

    if best_state is not None:
        model.load_state_arrays(best_state)
    if splits.test:
        result = evaluate_detailed(model, splits.test, config.eval_batch_size)
        report.test_dice, report.test_iou, report.test_per_class_dice = result
    report.wall_clock = time.perf_counter() - started
    if out_dir is not None:
        report.write(out_dir, config.metrics_name)
    return report


def train_from_config(run: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> Tuple[FusionUNet, RunReport]:
    model = build(run.model, seed=run.train.seed)
    report = train(model, prepare_splits(run), run.train, out_dir, run.to_dict())
    return model, report


@dataclass
class CrossValReport:
    folds: int
    repeats: int
    fold_dice: List[float] = field(default_factory=list)
    fold_iou: List[float] = field(default_factory=list)

    @property
    def dice_mean(self) -> float:
        return float(np.mean(self.fold_dice))

    @property
    def dice_std(self) -> float:
        return float(np.std(self.fold_dice))

    @property
    def iou_mean(self) -> float:
        return float(np.mean(self.fold_iou))

    @property
    def iou_std(self) -> float:
        return float(np.std(self.fold_iou))

    def to_dict(self) -> Dict[str, Any]:
        return {"folds": self.folds, "repeats": self.repeats, "fold_dice": self.fold_dice,
                "fold_iou": self.fold_iou, "dice_mean": self.dice_mean, "dice_std": self.dice_std,
                "iou_mean": self.iou_mean, "iou_std": self.iou_std}


def cross_validate(model_config: FusionConfig, train_config: TrainConfig, samples: Sequence[SegSample],
                   folds: int = 5, repeats: int = 1) -> CrossValReport:
    """
    Repeated k-fold cross-validation.

    Each fold trains a fresh model on the other folds (one eighth of them held
    back for model selection) and scores the held-out fold.
    """
    report = CrossValReport(folds, repeats)
    seeds = np.random.SeedSequence(train_config.seed).spawn(repeats * folds + repeats)
    for r in range(repeats):
        split_seed = int(seeds[r].generate_state(1)[0])
        for k, (train_idx, test_idx) in enumerate(kfold_indices(len(samples), folds, split_seed)):
            fold_seed = int(seeds[repeats + r * folds + k].generate_state(1)[0])
            train_part = [samples[i] for i in train_idx]
            fit, val, _ = split_dataset(train_part, (0.875, 0.125, 0.0), fold_seed)
            config = TrainConfig.from_dict({**train_config.to_dict(), "seed": fold_seed})
            model = build(model_config, seed=fold_seed)
            train(model, DatasetSplits(fit, val), config)
            dice, iou = evaluate(model, [samples[i] for i in test_idx], config.eval_batch_size)
            report.fold_dice.append(dice)
            report.fold_iou.append(iou)
            logger.info("repeat %d fold %d: dice %.4f iou %.4f", r + 1, k + 1, dice, iou)
    return report


def format_run_report(report: RunReport, out_dir: Optional[Union[str, Path]] = None) -> str:
    lines = ["=" * 60, "TRAINING REPORT", "=" * 60, ""]
    lines.append(f"Parameters: {report.params:,}   MACs: {report.macs:,}   FLOPs: {report.flops:,}")
    lines.append("")
    lines.append(f"{'epoch':>5}  {'loss':>8}  {'val dice':>8}  {'val iou':>8}  {'lr':>9}")
    for row in report.epochs:
        lines.append(f"{row['epoch']:>5}  {row['train_loss']:>8.4f}  {row['val_dice']:>8.4f}  "
                     f"{row['val_iou']:>8.4f}  {row['lr']:>9.2e}")
    lines.append("")
    lines.append(f"Best epoch {report.best_epoch}: val Dice {report.best_val_dice:.4f}, IoU {report.best_val_iou:.4f}")
    if report.test_dice is not None:
        lines.append(f"Test Dice {report.test_dice:.4f}, IoU {report.test_iou:.4f}")
        if len(report.test_per_class_dice) > 1:
            per_class = ", ".join(f"{c + 1}: {d:.4f}" for c, d in enumerate(report.test_per_class_dice))
            lines.append(f"Per-label Dice: {per_class}")
    if out_dir is not None:
        lines.append(f"Artifacts written to {out_dir}")
    return "\n".join(lines)


def run_training(config_path: Optional[str] = None, out_dir: str = "runs/train", seed: Optional[int] = None) -> str:
    """
    Train FusionU-Net from a JSON config and return a readable report.

    Args:
        config_path: Optional run config file
        out_dir: Directory for checkpoint, metrics CSV and report
        seed: Overrides the training and data seeds

    Returns:
        String with per-epoch metrics and final scores, or an error message
    """
    try:
        run = RunConfig.load(config_path)
        if seed is not None:
            run = run.with_seed(seed)
        _, report = train_from_config(run, out_dir)
        return format_run_report(report, out_dir)
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error running training: {e}"


def evaluate_checkpoint(checkpoint_path: Union[str, Path], run: Optional[RunConfig] = None) -> EvalResult:
    """
    Score a saved model on the test split of a run's data.

    Without a run config the data is generated to match the checkpoint's
    input size, channels and classes, with default counts.

    Raises:
        CheckpointError: If the checkpoint is corrupt or disagrees with `run.model`
    """
    model = load_checkpoint(checkpoint_path, expected=run.model if run is not None else None)
    if run is None:
        config = model.config
        run = RunConfig.from_dict({
            "model": config.to_dict(),
            "data": {"side": config.input_side, "in_channels": config.in_channels, "n_classes": config.n_classes},
        })
    splits = prepare_splits(run)
    samples = splits.test or splits.val
    return evaluate_detailed(model, samples, run.train.eval_batch_size)


def run_evaluation(checkpoint_path: str, config_path: Optional[str] = None, seed: Optional[int] = None) -> str:
    """
    Evaluate a checkpoint and return Dice/IoU on held-out data.

    Args:
        checkpoint_path: FUNW checkpoint written by training
        config_path: Optional run config describing the data
        seed: Overrides the data seed

    Returns:
        String with mean Dice, IoU and per-label Dice, or an error message
    """
    try:
        run = RunConfig.load(config_path) if config_path is not None else None
        if run is not None and seed is not None:
            run = run.with_seed(seed)
        result = evaluate_checkpoint(checkpoint_path, run)
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error evaluating checkpoint: {e}"
    lines = [f"Checkpoint: {checkpoint_path}", f"Dice {result.dice:.4f}, IoU {result.iou:.4f}"]
    if len(result.per_class_dice) > 1:
        lines.append("Per-label Dice: " + ", ".join(f"{c + 1}: {d:.4f}" for c, d in enumerate(result.per_class_dice)))
    return "\n".join(lines)


def format_crossval_report(report: CrossValReport) -> str:
    lines = ["=" * 60, "CROSS-VALIDATION REPORT", "=" * 60, ""]
    lines.append(f"{report.repeats} repeat(s) of {report.folds}-fold cross-validation")
    for i, (dice, iou) in enumerate(zip(report.fold_dice, report.fold_iou)):
        lines.append(f"  repeat {i // report.folds + 1} fold {i % report.folds + 1}: Dice {dice:.4f}, IoU {iou:.4f}")
    lines.append("")
    lines.append(f"Dice {report.dice_mean:.4f} ± {report.dice_std:.4f}")
    lines.append(f"IoU  {report.iou_mean:.4f} ± {report.iou_std:.4f}")
    return "\n".join(lines)


def run_cross_validation(config_path: Optional[str] = None, folds: int = 5, repeats: int = 1,
                         out_dir: Optional[str] = None, seed: Optional[int] = None) -> str:
    """
    Repeated k-fold cross-validation over the run's train and validation pool.

    Returns:
        String with per-fold scores and mean ± std, or an error message
    """
    try:
        run = RunConfig.load(config_path)
        if seed is not None:
            run = run.with_seed(seed)
        splits = prepare_splits(run)
        report = cross_validate(run.model, run.train, splits.train + splits.val, folds, repeats)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_json_file(Path(out_dir) / "crossval.json", report.to_dict())
        return format_crossval_report(report)
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error running cross-validation: {e}"
