"""Deterministic synthetic fixtures: embeddings, screens, and categories.

Models the situation that motivates OCR-conditioned tuning: some category
pairs get nearly collinear prompt vectors and share one vision prototype, so
a frozen-prompt cosine classifier is reduced to a coin flip on them, while
class identity survives in two places it cannot reach: the OCR embedding
(when the element has text at all) and a sign-symmetric style-axis structure
in the appearance (when the element's style mode is present). Each of those
cues covers only part of the data, so dropping either tuning input measurably
hurts and their combination wins. OCR boxes sit fully inside their element
at 10% of its area, reproducing the containment case where IoM links and
IoU does not.

Everything is a pure function of the config: one seeded generator drives all
draws in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import (
    CategorySet,
    EmbeddingStore,
    ScreenAnnotation,
    ocr_key,
    prompt_key,
    serialize_annotations,
    vision_key,
    write_categories,
    write_embeddings,
)
from .geometry import Box, ElementAnnotation, OcrItem

AMBIGUOUS_COSINE = 0.98  # pairwise prompt cosine for ambiguous pairs


@dataclass
class SynthConfig:
    seed: int = 7
    d: int = 64
    m: int = 6
    n_train: int = 2048        # per category
    n_val: int = 64            # per category
    vision_noise: float = 0.15
    ocr_signal: float = 0.7    # fraction of class identity carried by OCR
    ocr_noise: float = 0.1
    ocr_dropout: float = 0.3   # fraction of elements with no OCR text at all
    ambiguity: int = 2         # number of near-collinear prompt pairs
    pair_mode_scale: float = 1.2  # strength of the pair's two-mode appearance
    mode_dropout: float = 0.25    # fraction of pair elements with mode wiped
    n_novel: int = 0           # trailing categories marked novel
    elements_per_image: int = 4
    image_size: int = 1000

    def __post_init__(self):
        if self.d < 4:
            raise ValueError("d must be >= 4")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.n_val < 1:
            raise ValueError("n_val must be >= 1")
        if not (0.0 <= self.ocr_signal <= 1.0):
            raise ValueError("ocr_signal must lie in [0, 1]")
        if not (0.0 <= self.ocr_dropout < 1.0):
            raise ValueError("ocr_dropout must lie in [0, 1)")
        if not (0.0 <= self.mode_dropout < 1.0):
            raise ValueError("mode_dropout must lie in [0, 1)")
        if self.vision_noise < 0:
            raise ValueError("vision_noise must be >= 0")
        if 2 * self.ambiguity > self.m:
            raise ValueError("ambiguity pairs need 2*ambiguity <= m")
        if not (0 <= self.n_novel < self.m):
            raise ValueError("n_novel must leave at least one base category")
        if self.elements_per_image < 1:
            raise ValueError("elements_per_image must be >= 1")


@dataclass
class SynthDataset:
    store: EmbeddingStore
    train_annotations: list[ScreenAnnotation]
    val_annotations: list[ScreenAnnotation]
    categories: CategorySet
    prompt_vectors: np.ndarray   # (m, d)
    vision_protos: np.ndarray    # (m, d)
    ocr_protos: np.ndarray       # (m, d) class-conditional, before noise


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(config: SynthConfig) -> SynthDataset:
    rng = np.random.default_rng(config.seed)
    d, m = config.d, config.m

    # prompts; ambiguous pairs get an exact target cosine
    prompts = np.zeros((m, d))
    paired: set[int] = set()
    for a in range(config.ambiguity):
        j, k = 2 * a, 2 * a + 1
        t = _unit(rng, d)
        raw = rng.normal(size=d)
        perp = _normalize(raw - (raw @ t) * t)
        prompts[j] = t
        prompts[k] = AMBIGUOUS_COSINE * t + np.sqrt(1 - AMBIGUOUS_COSINE**2) * perp
        paired.update((j, k))
    for j in range(m):
        if j not in paired:
            prompts[j] = _unit(rng, d)

    # vision prototypes: ambiguous pairs share one exactly, so appearance
    # carries no class signal any fixed-or-shifted cosine rule can read;
    # the remaining classes sit on their prompt
    vision_protos = prompts.copy()
    pair_parity: dict[int, float] = {}
    for a in range(config.ambiguity):
        j, k = 2 * a, 2 * a + 1
        mid = _normalize(prompts[j] + prompts[k])
        vision_protos[j] = mid
        vision_protos[k] = mid
        pair_parity[j] = 1.0
        pair_parity[k] = -1.0

    # style axes: pair members occupy different AXES of a shared 2D subspace
    # with a random sign, so the class-conditional appearance mean is zero
    # there. No linear functional of f (hence no fixed or shifted cosine
    # rule) separates the members, but a rectifier net reads axis membership.
    q1 = _unit(rng, d)
    raw = rng.normal(size=d)
    q2 = _normalize(raw - (raw @ q1) * q1)
    style_axis = {+1.0: q1, -1.0: q2}

    # OCR prototypes: class-specific direction mixed with a shared one. Pair
    # members separate along the same style axes their appearance uses, the
    # way text describing an element tends to mirror how it looks; one small
    # shared encoder can then serve both modalities. The axis component gets
    # a random per-sample sign, like the appearance does.
    u_class = np.stack([_unit(rng, d) for _ in range(m)])
    ocr_axis: dict[int, np.ndarray] = {}
    for a in range(config.ambiguity):
        j, k = 2 * a, 2 * a + 1
        u_pair = _unit(rng, d)
        u_class[j] = u_pair
        u_class[k] = u_pair
        ocr_axis[j] = style_axis[pair_parity[j]]
        ocr_axis[k] = style_axis[pair_parity[k]]
    u_common = _unit(rng, d)
    s = config.ocr_signal
    ocr_protos = s * u_class + (1 - s) * u_common

    names = [f"cat{j:02d}" for j in range(m)]
    splits = ["base"] * (m - config.n_novel) + ["novel"] * config.n_novel
    categories = CategorySet(names=names, splits=splits)

    entries: dict[str, np.ndarray] = {"": np.zeros(d, dtype=np.float32)}
    for j, name in enumerate(names):
        entries[prompt_key(name)] = prompts[j].astype(np.float32)

    counter = 0

    def make_split(split: str, per_class: int) -> list[ScreenAnnotation]:
        nonlocal counter
        samples = [(j, k) for k in range(per_class) for j in range(m)]
        annotations = []
        epi = config.elements_per_image
        size = config.image_size
        grid = int(np.ceil(np.sqrt(epi)))
        cell = size // grid
        for img_idx in range(0, len(samples), epi):
            chunk = samples[img_idx:img_idx + epi]
            image_id = f"{split}-{img_idx // epi:05d}"
            elements, ocr_items = [], []
            for slot, (j, _) in enumerate(chunk):
                row, col = divmod(slot, grid)
                x0, y0 = col * cell, row * cell
                inset = cell // 20
                ebox = Box(x0 + inset, y0 + inset, x0 + cell - inset, y0 + cell - inset)
                proto = vision_protos[j].copy()
                if j in pair_parity:
                    sign = 1.0 if rng.random() < 0.5 else -1.0
                    if rng.random() >= config.mode_dropout:
                        axis = style_axis[pair_parity[j]]
                        proto = proto + config.pair_mode_scale * sign * axis
                f = _normalize(proto + config.vision_noise * rng.normal(size=d))
                entries[vision_key(image_id, slot)] = f.astype(np.float32)
                elements.append(ElementAnnotation(box=ebox, category=names[j], index=slot))
                if rng.random() >= config.ocr_dropout:
                    # OCR box fully inside the element at 10% of its area
                    ew, eh = ebox.x2 - ebox.x1, ebox.y2 - ebox.y1
                    obox = Box(ebox.x1 + ew * 0.1, ebox.y1 + eh * 0.1,
                               ebox.x1 + ew * 0.6, ebox.y1 + eh * 0.3)
                    text = f"w{j}k{counter}"
                    counter += 1
                    vec = ocr_protos[j].copy()
                    if j in ocr_axis:
                        osign = 1.0 if rng.random() < 0.5 else -1.0
                        vec = vec + config.ocr_signal * osign * ocr_axis[j]
                    o = _normalize(vec + config.ocr_noise * rng.normal(size=d))
                    entries[ocr_key(text)] = o.astype(np.float32)
                    ocr_items.append(OcrItem(box=obox, text=text, index=len(ocr_items)))
            annotations.append(
                ScreenAnnotation(image_id=image_id, width=size, height=size,
                                 elements=elements, ocr=ocr_items)
            )
        return annotations

    train_annotations = make_split("train", config.n_train)
    val_annotations = make_split("val", config.n_val)

    store = EmbeddingStore(dim=d, entries=entries)
    store.validate()
    return SynthDataset(
        store=store,
        train_annotations=train_annotations,
        val_annotations=val_annotations,
        categories=categories,
        prompt_vectors=prompts,
        vision_protos=vision_protos,
        ocr_protos=ocr_protos,
    )


def write_dataset(dataset: SynthDataset, out_dir) -> dict[str, Path]:
    """Write train.jsonl, val.jsonl, embeddings.apte, categories.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out / "train.jsonl",
        "val": out / "val.jsonl",
        "embeddings": out / "embeddings.apte",
        "categories": out / "categories.txt",
    }
    serialize_annotations(dataset.train_annotations, paths["train"])
    serialize_annotations(dataset.val_annotations, paths["val"])
    write_embeddings(dataset.store, paths["embeddings"])
    write_categories(dataset.categories, paths["categories"])
    return paths
