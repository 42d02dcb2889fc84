"""Task training loops, checkpoints, manifests, and split evaluation.

Detection trains the sarcasm head with BCE at lr 0.001; localization trains
the token and box heads (BCE + CIoU) at lr 0.01 on sarcastic records. Both
use decoupled-weight-decay Adam and are reproducible under a fixed seed
with the hash text backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .losses import box_loss, detection_loss, token_loss
from .metrics import MetricReport, SamplePrediction, evaluate_corpus
from .model import SarcasmModel, predict_samples
from .pipeline import encode_records, iter_batches
from .records import DatasetRecord, ValidationError
from .text_encoder import make_backend

logger = logging.getLogger(__name__)

TASK_LRS = {"detect": 0.001, "localize": 0.01}


class MissingArtifactError(FileNotFoundError):
    """A required input artifact (checkpoint, dataset, image) is absent."""


@dataclass
class TrainResult:
    checkpoint: Path | None
    history: list[dict] = field(default_factory=list)
    final_loss: float = float("nan")
    train_accuracy: float = float("nan")
    steps: int = 0


def split_hash(records: list[DatasetRecord]) -> str:
    digest = hashlib.sha256()
    for rec in records:
        digest.update(rec.id.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def _task_loss(task: str, output, batch) -> torch.Tensor:
    if task == "detect":
        return detection_loss(output, batch)
    return token_loss(output, batch) + box_loss(output, batch)


def train(
    train_records: list[DatasetRecord],
    cfg: ModelConfig,
    task: str,
    images_root: str | Path,
    *,
    epochs: int = 20,
    batch_size: int = 16,
    max_steps: int | None = None,
    lr: float | None = None,
    weight_decay: float = 0.01,
    seed: int = 0,
    out_dir: str | Path | None = None,
    backend=None,
    extra_manifest: dict | None = None,
) -> tuple[SarcasmModel, TrainResult]:
    """Gradient-descent loop for one task; returns the model and its history."""
    if task not in TASK_LRS:
        raise ValidationError(f"unknown task {task!r}; use 'detect' or 'localize'")
    if not train_records:
        raise ValidationError("training split is empty")
    if task == "localize":
        kept = [r for r in train_records if r.gold is not None]
        if not kept:
            raise ValidationError("localization needs records with gold clues")
        if len(kept) < len(train_records):
            logger.info("localize: using %d/%d records with gold clues", len(kept), len(train_records))
        train_records = kept
    lr = TASK_LRS[task] if lr is None else lr

    torch.manual_seed(seed)
    model = SarcasmModel(cfg)
    if backend is None:
        backend = make_backend(cfg.backend, cfg.d_lm)
    samples = encode_records(train_records, backend, cfg, images_root)
    capacity = cfg.L * cfg.L

    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    step = 0
    done = False
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for batch in iter_batches(samples, capacity, batch_size, order):
            output = model(batch)
            loss = _task_loss(task, output, batch)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step} (task={task}, lr={lr}): loss={loss.item()}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            step += 1
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if epoch_losses:
            history.append({"epoch": epoch, "loss": float(np.mean(epoch_losses)), "steps": step})
        if done:
            break

    model.eval()
    final_loss, accuracy = _final_training_stats(model, samples, capacity, batch_size, task)
    result = TrainResult(
        checkpoint=None,
        history=history,
        final_loss=final_loss,
        train_accuracy=accuracy,
        steps=step,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out_dir / f"{task}-model.pt"
        save_checkpoint(model, cfg, task, result.checkpoint)
        manifest = {
            "task": task,
            "seed": seed,
            "lr": lr,
            "weight_decay": weight_decay,
            "preset": cfg.preset,
            "epochs": epochs,
            "max_steps": max_steps,
            "steps": step,
            "batch_size": batch_size,
            "final_loss": final_loss,
            "train_accuracy": accuracy,
            "split_hashes": {"train": split_hash(train_records)},
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        with open(out_dir / "history.json", "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=2)
    return model, result


@torch.no_grad()
def _final_training_stats(model, samples, capacity, batch_size, task) -> tuple[float, float]:
    losses = []
    correct = 0
    for batch in iter_batches(samples, capacity, batch_size):
        output = model(batch)
        losses.append(float(_task_loss(task, output, batch)) * batch.size)
        pred = (output.sarcasm_prob >= 0.5).to(batch.labels.dtype)
        correct += int((pred == batch.labels).sum())
    total = len(samples)
    return sum(losses) / total, correct / total


def save_checkpoint(model: SarcasmModel, cfg: ModelConfig, task: str, path: str | Path) -> None:
    torch.save(
        {
            "format": "docmsu-checkpoint",
            "version": 1,
            "config": cfg.to_dict(),
            "task": task,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[SarcasmModel, ModelConfig, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != "docmsu-checkpoint":
        raise ValidationError(f"{path} is not a model checkpoint")
    cfg = ModelConfig.from_dict(payload["config"])
    model = SarcasmModel(cfg)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ValidationError(f"checkpoint/config mismatch: {exc}") from exc
    model.eval()
    return model, cfg, payload["task"]


def evaluate_records(
    model: SarcasmModel,
    records: list[DatasetRecord],
    images_root: str | Path,
    *,
    backend=None,
    batch_size: int = 16,
    box_conf_threshold: float = 0.5,
    **metric_opts,
) -> tuple[MetricReport, dict[str, SamplePrediction]]:
    """Inference over records followed by the full metric suite."""
    cfg = model.cfg
    if backend is None:
        backend = make_backend(cfg.backend, cfg.d_lm)
    samples = encode_records(records, backend, cfg, images_root)
    preds = predict_samples(model, samples, batch_size, box_conf_threshold)
    report = evaluate_corpus(preds, records, **metric_opts)
    return report, preds
