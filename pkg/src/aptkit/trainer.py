"""Deterministic mini-batch SGD for the tuning head.

The loop is single-writer and fully seeded: head initialization and the
per-epoch shuffles all draw from one generator, so a given seed reproduces
losses, weights, and reports bit for bit. Frozen prompts never receive
updates. Batches shorter than 2 are dropped because batch-norm statistics
need at least two rows.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import CategorySet, EmbeddingStore, ScreenAnnotation
from .errors import AptError, MissingKeyError, NonFiniteLossError
from .head import AptHead, CategoryPrompts, HeadConfig, ProposalBatch


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 12
    seed: int = 0
    head: HeadConfig = field(default_factory=HeadConfig)
    apt_layers: int = 2
    ocr_mode: str = "concat"
    lr_step_epochs: int | None = None   # optional step decay; constant LR when None
    lr_step_gamma: float = 0.1

    def __post_init__(self):
        # zero is allowed for dry runs (a zero step must leave weights intact)
        if not (self.learning_rate >= 0):
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch statistics)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.apt_layers not in (2, 3):
            raise ValueError("apt_layers must be 2 or 3")
        if self.ocr_mode not in ("concat", "average"):
            raise ValueError("ocr_mode must be 'concat' or 'average'")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["head"]["fusion"] = self.head.fusion.value
        out["head"]["tuning"] = self.head.tuning.value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        head_raw = raw.pop("head", {})
        return cls(head=HeadConfig(**head_raw), **raw)


@dataclass
class TrainReport:
    epoch_losses: list[float]
    final_accuracy: float | None
    wall_time_s: float
    config: dict


def load_prompts(store: EmbeddingStore, categories: CategorySet) -> CategoryPrompts:
    missing = [dataio.prompt_key(n) for n in categories.names
               if dataio.prompt_key(n) not in store]
    if missing:
        raise MissingKeyError(missing)
    vectors = np.stack(
        [np.asarray(store.vector(dataio.prompt_key(n)), dtype=np.float64)
         for n in categories.names]
    )
    return CategoryPrompts(names=list(categories.names),
                           splits=list(categories.splits), vectors=vectors)


def assemble_proposals(
    annotations: list[ScreenAnnotation],
    store: EmbeddingStore,
    categories: CategorySet,
    ocr_mode: str = "concat",
    restrict_to: list[int] | None = None,
    with_refs: bool = False,
):
    """Build the aligned (vision, ocr, label) arrays the head consumes.

    Elements never linked to OCR resolve to the empty-word vector. With
    ``restrict_to``, proposals labeled outside the given category indices
    (e.g. novel ones during base-only training) are dropped and the kept
    labels are re-indexed into the restricted list. ``with_refs`` also
    returns the (annotation, element) pair behind each row, which the
    detection evaluator needs to recover boxes and image ids.
    """
    missing: list[str] = []
    vision_rows, ocr_rows, labels, refs = [], [], [], []
    keep = None if restrict_to is None else set(restrict_to)
    remap = None if restrict_to is None else {g: i for i, g in enumerate(restrict_to)}
    for ann in annotations:
        for elem in ann.elements:
            if elem.category not in categories.names:
                raise AptError(
                    f"unknown category {elem.category!r} in image {ann.image_id!r}")
            label = categories.index(elem.category)
            if keep is not None and label not in keep:
                continue
            vkey = dataio.vision_key(ann.image_id, elem.index)
            if vkey not in store:
                missing.append(vkey)
                continue
            description = elem.description or ""
            phrases = None
            if ocr_mode == "average" and elem.ocr_indices is not None:
                by_index = {o.index: o.text for o in ann.ocr}
                phrases = [by_index[i] for i in elem.ocr_indices]
            try:
                ocr_vec = dataio.resolve_description_embedding(
                    store, description, mode=ocr_mode, phrases=phrases)
            except MissingKeyError as exc:
                missing.extend(exc.keys)
                continue
            vision_rows.append(np.asarray(store.vector(vkey), dtype=np.float64))
            ocr_rows.append(ocr_vec)
            labels.append(label if remap is None else remap[label])
            refs.append((ann, elem))
    if missing:
        raise MissingKeyError(sorted(set(missing)))
    if not vision_rows:
        raise AptError("no usable proposals after filtering")
    batch = ProposalBatch(
        vision=np.stack(vision_rows),
        ocr=np.stack(ocr_rows),
        labels=np.asarray(labels, dtype=np.int64),
    )
    return (batch, refs) if with_refs else batch


def evaluate_accuracy(head: AptHead, prompts: CategoryPrompts,
                      batch: ProposalBatch, subset: list[int] | None = None) -> float:
    """Top-1 accuracy of the tuned classifier over a category subset.

    ``subset`` holds prompt indices to classify over (default: all); labels
    are compared against the subset's global indices.
    """
    if batch.labels is None:
        raise ValueError("accuracy requires labeled proposals")
    indices = list(range(prompts.m)) if subset is None else list(subset)
    if not indices:
        raise ValueError("category subset must be non-empty")
    probs = head.predict(prompts.vectors[indices], batch, train=False)
    predicted = np.asarray(indices)[np.argmax(probs, axis=1)]
    return float(np.mean(predicted == batch.labels))


def train(
    config: TrainConfig,
    train_batch: ProposalBatch,
    prompts: CategoryPrompts,
    val_batch: ProposalBatch | None = None,
    head: AptHead | None = None,
) -> tuple[AptHead, TrainReport]:
    if train_batch.labels is None:
        raise ValueError("training requires labeled proposals")
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    if head is None:
        head = AptHead(prompts.d, config.head, layers=config.apt_layers, rng=rng)

    params = head.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = train_batch.n
    epoch_losses: list[float] = []

    for epoch in range(config.epochs):
        lr = config.learning_rate
        if config.lr_step_epochs:
            lr *= config.lr_step_gamma ** (epoch // config.lr_step_epochs)
        perm = rng.permutation(n)
        total_loss = 0.0
        total_rows = 0
        for bidx, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            if len(idx) < 2:
                continue  # batch statistics undefined
            sub = train_batch.take(idx)
            loss, grads = head.loss_and_grads(prompts.vectors, sub, train=True)
            if not math.isfinite(loss):
                raise NonFiniteLossError(loss, epoch=epoch, batch_index=bidx)
            for key, p in params.items():
                g = grads[key]
                if config.weight_decay:
                    g = g + config.weight_decay * p
                velocity[key] *= config.momentum
                velocity[key] += g
                p -= lr * velocity[key]
            total_loss += loss * len(idx)
            total_rows += len(idx)
        if total_rows == 0:
            raise ValueError("no trainable batches (all smaller than 2 rows)")
        epoch_losses.append(total_loss / total_rows)

    accuracy = None
    if val_batch is not None:
        accuracy = evaluate_accuracy(head, prompts, val_batch)
    report = TrainReport(
        epoch_losses=epoch_losses,
        final_accuracy=accuracy,
        wall_time_s=time.perf_counter() - started,
        config=config.to_dict(),
    )
    return head, report


def write_report(report: TrainReport, path) -> None:
    """Line-oriented report: config header, one epoch line each, final line.

    Wall time is deliberately left out so reports from identically seeded
    runs are byte-identical; it is surfaced on stdout instead.
    """
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "config", **report.config}) + "\n")
        for i, loss in enumerate(report.epoch_losses, start=1):
            fh.write(json.dumps({"type": "epoch", "epoch": i, "mean_loss": loss}) + "\n")
        final = {"type": "final"}
        if report.final_accuracy is not None:
            final["accuracy"] = report.final_accuracy
        fh.write(json.dumps(final) + "\n")
