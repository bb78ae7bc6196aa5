"""Training and evaluation pipeline over synthetic pose corpora.

Targets enter the loss in meters (the optimizer-friendly scale); every
reported metric is in millimeters. All batching and initialization is
seed-deterministic, so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .memory import entropy_of_weights
from .metrics import MetricReport, constant_pose_baseline, evaluate_poses
from .model import (ABLATION_ROWS, ModelConfig, PoseLiftModel, load_checkpoint,
                    pose_loss, save_checkpoint)
from .optim import AdamW, lr_schedule
from .skeleton import MM_PER_M, NormStats, PoseSequence, normalize_inputs

EPOCH_LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_mpjpe", "eval_mpjpe",
                     "eval_pmpjpe", "retrieval_entropy")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 30
    batch_size: int = 8
    base_lr: float = 5e-4
    lr_decay: float = 0.99
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def stack_inputs(sequences: list[PoseSequence]) -> tuple[np.ndarray, np.ndarray]:
    """(S, T, J, 2) inputs and (S, T, J, 3) mm targets from a corpus."""
    if not sequences:
        raise ValueError("empty sequence list")
    shapes = {(s.frames, s.joints) for s in sequences}
    if len(shapes) != 1:
        raise ValueError(f"sequences disagree on (T, J): {sorted(shapes)}")
    inputs = np.stack([s.input_2d for s in sequences])
    targets = np.stack([s.target_3d for s in sequences])
    return inputs, targets


def predict_sequences(model: PoseLiftModel, inputs_norm: np.ndarray,
                      batch_size: int) -> np.ndarray:
    """Forward the model over (S, T, J, 2) normalized inputs, output in mm."""
    outputs = []
    with ad.no_grad():
        for start in range(0, inputs_norm.shape[0], batch_size):
            batch = Tensor(inputs_norm[start:start + batch_size])
            outputs.append(model(batch).data * MM_PER_M)
    return np.concatenate(outputs, axis=0)


def probe_entropy(model: PoseLiftModel, inputs_norm: np.ndarray) -> float:
    """Mean retrieval-weight entropy across layers on a fixed probe batch."""
    if not model.cfg.use_pattern_reuse:
        return float("nan")
    capture: dict = {}
    with ad.no_grad():
        model(Tensor(inputs_norm), capture=capture)
    weights = capture.get("retrieval_weights", [])
    return float(np.mean([entropy_of_weights(w) for w in weights]))


@dataclass
class TrainResult:
    model: PoseLiftModel
    norm_stats: NormStats
    epoch_rows: list[dict]
    final_report: MetricReport
    baseline_mpjpe: float
    parameter_count: int
    checkpoint: Path | None = None
    epoch_log: Path | None = None
    extra: dict = field(default_factory=dict)


def _format_row(row: dict) -> str:
    return ",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                    for c in EPOCH_LOG_COLUMNS)


def write_epoch_log(path: Path, rows: list[dict]) -> None:
    lines = [",".join(EPOCH_LOG_COLUMNS)] + [_format_row(r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def train(cfg: ModelConfig, settings: TrainSettings,
          train_seqs: list[PoseSequence], eval_seqs: list[PoseSequence],
          out_dir: str | Path | None = None) -> TrainResult:
    cfg.validate()
    settings.validate()
    train_in, train_tgt_mm = stack_inputs(train_seqs)
    eval_in, eval_tgt_mm = stack_inputs(eval_seqs)
    if train_in.shape[1] != cfg.frames or train_in.shape[2] != cfg.joints:
        raise ValueError(
            f"data grid {train_in.shape[1:3]} does not match config "
            f"(T={cfg.frames}, J={cfg.joints})")

    train_norm, stats = normalize_inputs(train_in)
    eval_norm = stats.apply(eval_in)
    train_tgt_m = train_tgt_mm / MM_PER_M

    model = PoseLiftModel(cfg, seed=settings.seed)
    optimizer = AdamW(list(model.named_parameters()), lr=settings.base_lr,
                      weight_decay=settings.weight_decay)
    baseline = constant_pose_baseline(train_tgt_mm, eval_tgt_mm)
    probe = eval_norm[:min(settings.batch_size, eval_norm.shape[0])]

    count = train_in.shape[0]
    rows: list[dict] = []
    report = None
    for epoch in range(1, settings.epochs + 1):
        lr = lr_schedule(settings.base_lr, epoch - 1, settings.lr_decay)
        order = np.random.default_rng([settings.seed, epoch]).permutation(count)
        losses = []
        pos_errors_mm = []
        for batch_no, start in enumerate(range(0, count, settings.batch_size)):
            idx = order[start:start + settings.batch_size]
            inputs = Tensor(train_norm[idx])
            targets = Tensor(train_tgt_m[idx])
            try:
                pred = model(inputs)
                total, pos, _ = pose_loss(pred, targets, cfg.lambda_velocity)
                total.backward()
                optimizer.step(lr=lr)
            except NumericError as e:
                raise TrainingDiverged(
                    f"numerical failure at epoch {epoch}, batch {batch_no}: {e}") from e
            optimizer.zero_grads()
            losses.append(total.item())
            pos_errors_mm.append(pos.item() * MM_PER_M)

        pred_mm = predict_sequences(model, eval_norm, settings.batch_size)
        report = evaluate_poses(pred_mm, eval_tgt_mm)
        rows.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_mpjpe": float(np.mean(pos_errors_mm)),
            "eval_mpjpe": report.mpjpe_mm,
            "eval_pmpjpe": report.p_mpjpe_mm,
            "retrieval_entropy": probe_entropy(model, probe),
        })

    result = TrainResult(
        model=model,
        norm_stats=stats,
        epoch_rows=rows,
        final_report=report,
        baseline_mpjpe=baseline,
        parameter_count=model.parameter_count(),
        extra={"batch_size": settings.batch_size},
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest, _ = save_checkpoint(
            out_dir / "model", model, norm_stats=stats,
            extra={"batch_size": settings.batch_size,
                   "baseline_mpjpe": baseline,
                   "final_eval": report.to_dict(),
                   "settings": {"epochs": settings.epochs,
                                "base_lr": settings.base_lr,
                                "lr_decay": settings.lr_decay,
                                "weight_decay": settings.weight_decay,
                                "seed": settings.seed}})
        result.checkpoint = manifest
        log_path = out_dir / "epochs.csv"
        write_epoch_log(log_path, rows)
        result.epoch_log = log_path
    return result


def evaluate_checkpoint(manifest_path: str | Path,
                        sequences: list[PoseSequence],
                        inject_targets: bool = False) -> MetricReport:
    """Score a stored model on a corpus, using its stored normalization.

    inject_targets replaces predictions with the targets themselves,
    a pipeline self-check that must produce exactly zero error.
    """
    model, stats, manifest = load_checkpoint(manifest_path)
    inputs, targets_mm = stack_inputs(sequences)
    if inject_targets:
        return evaluate_poses(targets_mm.copy(), targets_mm)
    if stats is None:
        raise ValueError(f"{manifest_path}: checkpoint lacks normalization stats")
    batch_size = int(manifest.get("extra", {}).get("batch_size", 8))
    pred_mm = predict_sequences(model, stats.apply(inputs), batch_size)
    return evaluate_poses(pred_mm, targets_mm)


def run_ablation(base_cfg: ModelConfig, settings: TrainSettings,
                 train_seqs: list[PoseSequence], eval_seqs: list[PoseSequence],
                 seeds: tuple[int, ...] = (0, 1, 2),
                 out_path: str | Path | None = None) -> dict:
    """Train every component-toggle row over several seeds.

    Returns per-row median eval MPJPE plus first/final probe entropy for
    rows with the memory path enabled.
    """
    table: dict[str, dict] = {}
    for row_name, toggles in ABLATION_ROWS.items():
        cfg_dict = base_cfg.to_dict()
        cfg_dict.update(toggles)
        cfg = ModelConfig.from_dict(cfg_dict)
        per_seed = []
        for seed in seeds:
            run_settings = TrainSettings(**{**vars(settings), "seed": seed})
            result = train(cfg, run_settings, train_seqs, eval_seqs)
            per_seed.append({
                "seed": seed,
                "eval_mpjpe": result.final_report.mpjpe_mm,
                "entropy_first": result.epoch_rows[0]["retrieval_entropy"],
                "entropy_final": result.epoch_rows[-1]["retrieval_entropy"],
                "baseline_mpjpe": result.baseline_mpjpe,
            })
        table[row_name] = {
            "median_eval_mpjpe": float(np.median([r["eval_mpjpe"] for r in per_seed])),
            "runs": per_seed,
        }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.write_text(json.dumps(table, indent=1) + "\n")
        csv_path = out_path.with_suffix(".csv")
        lines = ["row,median_eval_mpjpe_mm"]
        for name, entry in table.items():
            lines.append(f"{name},{entry['median_eval_mpjpe']!r}")
        csv_path.write_text("\n".join(lines) + "\n")
    return table
