"""Prompt-tuning classification head with analytic gradients.

A lightweight bottleneck network maps OCR text embeddings and vision
embeddings into the prompt space. Its outputs adjust frozen category prompt
vectors per proposal before a cosine/temperature softmax produces class
probabilities. With the network output forced to zero and sum fusion, the
head degenerates exactly to the frozen-prompt baseline classifier.

All math runs in float64 and every gradient is derived by hand, so the whole
head is checkable against central finite differences.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLossError, NumericsError


class FusionMode(str, enum.Enum):
    SUM = "sum"
    MULTIPLY = "multiply"
    ATTENTION = "attention"


class TuningMode(str, enum.Enum):
    """Which side of the cosine receives the OCR/vision offsets."""

    PROMPT_BOTH = "prompt-both"          # prompts get ocr+vis, vision side untouched
    PROMPT_OCR_VIS_VIS = "prompt-ocr-vis-vis"  # prompts get ocr, vision side gets vis
    PROMPT_VIS_VIS_OCR = "prompt-vis-vis-ocr"  # prompts get vis, vision side gets ocr
    VIS_BOTH = "vis-both"                # prompts untouched, vision side gets ocr+vis


_SIDES = {
    TuningMode.PROMPT_BOTH: (("ocr", "vis"), ()),
    TuningMode.PROMPT_OCR_VIS_VIS: (("ocr",), ("vis",)),
    TuningMode.PROMPT_VIS_VIS_OCR: (("vis",), ("ocr",)),
    TuningMode.VIS_BOTH: ((), ("ocr", "vis")),
}


@dataclass
class HeadConfig:
    fusion: FusionMode = FusionMode.SUM
    tuning: TuningMode = TuningMode.PROMPT_BOTH
    share_weights: bool = True
    tau: float = 0.01
    use_ocr: bool = True
    use_vision: bool = True

    def __post_init__(self):
        self.fusion = FusionMode(self.fusion)
        self.tuning = TuningMode(self.tuning)
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be a positive real, got {self.tau!r}")

    def sides(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """(prompt-side, vision-side) modality tags after use_* filtering."""
        enabled = {"ocr": self.use_ocr, "vis": self.use_vision}
        prompt_side, vis_side = _SIDES[self.tuning]
        return (
            tuple(t for t in prompt_side if enabled[t]),
            tuple(t for t in vis_side if enabled[t]),
        )


@dataclass
class CategoryPrompts:
    """Frozen per-category prompt vectors; never receives gradients."""

    names: list[str]
    splits: list[str]
    vectors: np.ndarray  # (m, d) float64, write-protected

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.names):
            raise ValueError("vectors must be (m, d) aligned with names")
        if len(self.splits) != len(self.names):
            raise ValueError("splits must align with names")
        self.vectors.setflags(write=False)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def subset(self, indices: list[int]) -> "CategoryPrompts":
        return CategoryPrompts(
            names=[self.names[i] for i in indices],
            splits=[self.splits[i] for i in indices],
            vectors=self.vectors[indices].copy(),
        )


@dataclass
class ProposalBatch:
    """Aligned vision embeddings, OCR text embeddings, and optional labels."""

    vision: np.ndarray       # (n, d) float64
    ocr: np.ndarray          # (n, d) float64
    labels: np.ndarray | None = None  # (n,) int64

    def __post_init__(self):
        self.vision = np.ascontiguousarray(self.vision, dtype=np.float64)
        self.ocr = np.ascontiguousarray(self.ocr, dtype=np.float64)
        if self.vision.ndim != 2 or self.ocr.shape != self.vision.shape:
            raise ValueError(
                f"vision {self.vision.shape} and ocr {self.ocr.shape} must be matching (n, d)"
            )
        if not np.all(np.isfinite(self.vision)) or not np.all(np.isfinite(self.ocr)):
            raise ValueError("proposal embeddings must be finite")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.vision.shape[0],):
                raise ValueError("labels must be (n,)")

    @property
    def n(self) -> int:
        return self.vision.shape[0]

    @property
    def d(self) -> int:
        return self.vision.shape[1]

    def take(self, idx) -> "ProposalBatch":
        labels = None if self.labels is None else self.labels[idx]
        return ProposalBatch(vision=self.vision[idx], ocr=self.ocr[idx], labels=labels)


# ---------------------------------------------------------------------------
# bottleneck network
# ---------------------------------------------------------------------------

class AptNetwork:
    """Stack of 2 or 3 bottlenecks, each linear -> batch norm -> relu.

    The first bottleneck reduces d to d/r, the last restores d; the optional
    middle one keeps d/r. The final linear map is zero-initialized so a fresh
    network outputs exactly zero (sum/attention fusion) or, with
    ``output_bias=1``, exactly one (multiply fusion), making training start
    at the frozen-prompt baseline. The final batch-norm scale starts small
    (0.1) so early offsets stay gentle next to unit-norm prompts; batch norm
    would otherwise push them to O(1) per channel the moment the zero
    weights move.
    """

    BN_EPS = 1e-5
    BN_MOMENTUM = 0.1
    OUTPUT_GAMMA_INIT = 0.1

    def __init__(self, d: int, r: int = 16, layers: int = 2,
                 rng: np.random.Generator | None = None, output_bias: float = 0.0):
        if layers not in (2, 3):
            raise ValueError(f"layers must be 2 or 3, got {layers}")
        if d % r != 0 or d // r < 1:
            raise ValueError(f"d={d} must be divisible by r={r}")
        self.d = d
        self.r = r
        self.layers = layers
        hidden = d // r
        if layers == 2:
            self.dims = [(d, hidden), (hidden, d)]
        else:
            self.dims = [(d, hidden), (hidden, hidden), (hidden, d)]
        rng = rng or np.random.default_rng(0)

        self.params: dict[str, np.ndarray] = {}
        self.running: dict[str, np.ndarray] = {}
        for k, (fan_in, fan_out) in enumerate(self.dims, start=1):
            last = k == len(self.dims)
            if last:
                w = np.zeros((fan_out, fan_in))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            self.params[f"w{k}"] = w
            self.params[f"b{k}"] = np.zeros(fan_out)
            gamma = np.full(fan_out, self.OUTPUT_GAMMA_INIT) if last else np.ones(fan_out)
            self.params[f"gamma{k}"] = gamma
            beta = np.full(fan_out, output_bias) if last else np.zeros(fan_out)
            self.params[f"beta{k}"] = beta
            self.running[f"mean{k}"] = np.zeros(fan_out)
            self.running[f"var{k}"] = np.ones(fan_out)

    def param_count(self) -> int:
        """Trainable parameters: weights, biases, and batch-norm scale/shift."""
        return sum(p.size for p in self.params.values())

    def randomize(self, rng: np.random.Generator, gamma_low: float = 0.5,
                  gamma_high: float = 1.5, beta_low: float = 0.2, beta_high: float = 1.0):
        """Generic random parameters for gradient checks and probing.

        Betas are biased positive so most rectifier units stay alive; dead
        units still occur, which the checks want for branch coverage.
        """
        for k, (fan_in, fan_out) in enumerate(self.dims, start=1):
            bound = 1.0 / math.sqrt(fan_in)
            self.params[f"w{k}"][...] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            self.params[f"b{k}"][...] = rng.uniform(-0.1, 0.1, size=fan_out)
            self.params[f"gamma{k}"][...] = rng.uniform(gamma_low, gamma_high, size=fan_out)
            self.params[f"beta{k}"][...] = rng.uniform(beta_low, beta_high, size=fan_out)
            self.running[f"mean{k}"][...] = rng.normal(0.0, 0.2, size=fan_out)
            self.running[f"var{k}"][...] = rng.uniform(0.5, 1.5, size=fan_out)

    def _forward(self, x: np.ndarray, train: bool, update_stats: bool):
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.d:
            raise ValueError(f"input dim {h.shape[1]} does not match network dim {self.d}")
        n = h.shape[0]
        if train and n < 2:
            raise ValueError(f"train-mode batch of size {n}: batch statistics undefined")
        caches = []
        for k in range(1, len(self.dims) + 1):
            w, b = self.params[f"w{k}"], self.params[f"b{k}"]
            gamma, beta = self.params[f"gamma{k}"], self.params[f"beta{k}"]
            z = h @ w.T + b
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    mom = self.BN_MOMENTUM
                    unbiased = var * (n / (n - 1))
                    self.running[f"mean{k}"][...] = (1 - mom) * self.running[f"mean{k}"] + mom * mean
                    self.running[f"var{k}"][...] = (1 - mom) * self.running[f"var{k}"] + mom * unbiased
            else:
                mean = self.running[f"mean{k}"]
                var = self.running[f"var{k}"]
            invstd = 1.0 / np.sqrt(var + self.BN_EPS)
            xhat = (z - mean) * invstd
            u = gamma * xhat + beta
            y = np.maximum(u, 0.0)
            caches.append({"h": h, "xhat": xhat, "invstd": invstd, "u": u, "k": k})
            h = y
        return (h[0] if squeeze else h), {"layers": caches, "train": train, "n": n}

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool | None = None):
        """Map (n, d) or (d,) input through the bottlenecks; same shape out."""
        if update_stats is None:
            update_stats = train
        y, _ = self._forward(x, train, update_stats)
        return y

    def forward_with_cache(self, x: np.ndarray, train: bool, update_stats: bool = True):
        return self._forward(np.atleast_2d(x), train, update_stats)

    def backward(self, cache: dict, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of all trainable parameters given d(loss)/d(output).

        Train-mode caches backpropagate through the batch statistics. The
        rectifier subgradient at exactly zero is taken as 1, which keeps the
        zero-initialized final bottleneck trainable.
        """
        train = cache["train"]
        g = np.asarray(grad_out, dtype=np.float64)
        grads: dict[str, np.ndarray] = {}
        for layer in reversed(cache["layers"]):
            k = layer["k"]
            gamma = self.params[f"gamma{k}"]
            u, xhat, invstd, h = layer["u"], layer["xhat"], layer["invstd"], layer["h"]
            g = g * (u >= 0.0)
            grads[f"gamma{k}"] = (g * xhat).sum(axis=0)
            grads[f"beta{k}"] = g.sum(axis=0)
            dxhat = g * gamma
            if train:
                n = xhat.shape[0]
                dz = (invstd / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dz = dxhat * invstd
            grads[f"w{k}"] = dz.T @ h
            grads[f"b{k}"] = dz.sum(axis=0)
            g = dz @ self.params[f"w{k}"]
        return grads


def param_count(net: AptNetwork) -> int:
    return net.param_count()


# ---------------------------------------------------------------------------
# fusion arithmetic
# ---------------------------------------------------------------------------

def _fuse(mode: FusionMode, base: np.ndarray, offsets: list[np.ndarray],
          att: dict[str, np.ndarray] | None) -> np.ndarray:
    """Combine a base array with offset arrays along the last axis.

    ``base`` and all offsets must be broadcast-compatible up to the last
    axis. A side with no offsets passes through unchanged.
    """
    if not offsets:
        return base
    if mode == FusionMode.SUM:
        out = base.copy()
        for off in offsets:
            out = out + off
        return out
    if mode == FusionMode.MULTIPLY:
        out = base.copy()
        for off in offsets:
            out = out * off
        return out
    # attention: concatenate and apply the side's trained linear map
    parts = np.broadcast_arrays(base, *offsets)
    cat = np.concatenate(parts, axis=-1)
    return cat @ att["w"].T + att["b"]


def fuse_vectors(mode: FusionMode, base: np.ndarray, offsets: list[np.ndarray],
                 att: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Single-vector fusion, mostly for tests and interactive probing."""
    base = np.asarray(base, dtype=np.float64)
    offs = [np.asarray(o, dtype=np.float64) for o in offsets]
    return _fuse(FusionMode(mode), base, offs, att)


def _identity_attention(d: int, n_offsets: int) -> dict[str, np.ndarray]:
    # identity blocks reproduce sum fusion at init, hence the baseline when
    # the bottleneck outputs are zero
    w = np.concatenate([np.eye(d)] * (1 + n_offsets), axis=1)
    return {"w": w, "b": np.zeros(d)}


# ---------------------------------------------------------------------------
# head
# ---------------------------------------------------------------------------

class AptHead:
    """Tuning networks plus fusion maps behind one train/predict surface.

    Prediction with fixed weights in eval mode is read-only and safe for
    concurrent callers; training steps mutate parameters and batch-norm
    running statistics and expect a single writer.
    """

    def __init__(self, d: int, cfg: HeadConfig | None = None, layers: int = 2,
                 r: int = 16, rng: np.random.Generator | None = None):
        self.cfg = cfg or HeadConfig()
        self.d = d
        self.layers = layers
        self.r = r
        rng = rng or np.random.default_rng(0)
        output_bias = 1.0 if self.cfg.fusion == FusionMode.MULTIPLY else 0.0

        self.nets: dict[str, AptNetwork] = {}
        used = [t for t, on in (("ocr", self.cfg.use_ocr), ("vis", self.cfg.use_vision)) if on]
        if used:
            if self.cfg.share_weights:
                self.nets["shared"] = AptNetwork(d, r=r, layers=layers, rng=rng,
                                                 output_bias=output_bias)
            else:
                for tag in used:
                    self.nets[tag] = AptNetwork(d, r=r, layers=layers, rng=rng,
                                                output_bias=output_bias)

        self.att: dict[str, dict[str, np.ndarray]] = {}
        if self.cfg.fusion == FusionMode.ATTENTION:
            prompt_side, vis_side = self.cfg.sides()
            if prompt_side:
                self.att["prompt"] = _identity_attention(d, len(prompt_side))
            if vis_side:
                self.att["vis"] = _identity_attention(d, len(vis_side))

    def net_for(self, tag: str) -> AptNetwork:
        return self.nets["shared" if self.cfg.share_weights else tag]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, stably ordered."""
        out: dict[str, np.ndarray] = {}
        for name in sorted(self.nets):
            for pname, arr in self.nets[name].params.items():
                out[f"{name}:{pname}"] = arr
        for side in sorted(self.att):
            out[f"att:{side}:w"] = self.att[side]["w"]
            out[f"att:{side}:b"] = self.att[side]["b"]
        return out

    def num_trainable(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def randomize(self, rng: np.random.Generator):
        for name in sorted(self.nets):
            self.nets[name].randomize(rng)
        for side in sorted(self.att):
            d = self.d
            self.att[side]["w"][...] = rng.uniform(-1, 1, size=self.att[side]["w"].shape) / math.sqrt(d)
            self.att[side]["b"][...] = rng.uniform(-0.1, 0.1, size=d)

    # -- forward ------------------------------------------------------------

    def _offsets(self, batch: ProposalBatch, train: bool, update_stats: bool):
        offs: dict[str, np.ndarray] = {}
        caches: dict[str, dict] = {}
        # fixed ocr-then-vision order keeps shared running-stat updates deterministic
        if self.cfg.use_ocr:
            offs["ocr"], caches["ocr"] = self.net_for("ocr").forward_with_cache(
                batch.ocr, train, update_stats)
        if self.cfg.use_vision:
            offs["vis"], caches["vis"] = self.net_for("vis").forward_with_cache(
                batch.vision, train, update_stats)
        return offs, caches

    def forward(self, prompts: np.ndarray, batch: ProposalBatch, train: bool = False,
                update_stats: bool | None = None, want_cache: bool = False):
        """Class probabilities (n, m) for each proposal against each prompt."""
        if update_stats is None:
            update_stats = train
        t = np.asarray(prompts, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] != self.d:
            raise ValueError(f"prompts must be (m, {self.d}), got {t.shape}")
        if batch.d != self.d:
            raise ValueError(f"batch dim {batch.d} does not match head dim {self.d}")
        n, m = batch.n, t.shape[0]

        offs, net_caches = self._offsets(batch, train, update_stats)
        prompt_side, vis_side = self.cfg.sides()

        p_offs = [offs[tag][:, None, :] for tag in prompt_side]   # (n,1,d) each
        t_hat = _fuse(self.cfg.fusion, t[None, :, :], p_offs, self.att.get("prompt"))
        t_hat = np.broadcast_to(t_hat, (n, m, self.d))

        v_offs = [offs[tag] for tag in vis_side]
        f_hat = _fuse(self.cfg.fusion, batch.vision, v_offs, self.att.get("vis"))

        t_norm = np.linalg.norm(t_hat, axis=-1)
        f_norm = np.linalg.norm(f_hat, axis=-1)
        if np.any(t_norm == 0.0):
            i, j = np.argwhere(t_norm == 0.0)[0]
            raise NumericsError(f"zero-norm tuned prompt (proposal {i}, category {j})")
        if np.any(f_norm == 0.0):
            i = int(np.argwhere(f_norm == 0.0)[0][0])
            raise NumericsError(f"zero-norm vision vector (proposal {i})")

        tn = t_hat / t_norm[..., None]
        fn = f_hat / f_norm[:, None]
        cos = np.einsum("imk,ik->im", tn, fn)

        z = cos / self.cfg.tau
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)

        if not want_cache:
            return probs
        cache = {
            "offs": offs, "net_caches": net_caches, "t": t, "batch": batch,
            "t_hat": t_hat, "f_hat": f_hat, "t_norm": t_norm, "f_norm": f_norm,
            "tn": tn, "fn": fn, "cos": cos, "probs": probs,
            "prompt_side": prompt_side, "vis_side": vis_side,
        }
        return probs, cache

    def predict(self, prompts: np.ndarray, batch: ProposalBatch, train: bool = False) -> np.ndarray:
        return self.forward(prompts, batch, train=train, update_stats=False)

    # -- backward -----------------------------------------------------------

    def _fusion_backward(self, mode: FusionMode, base, offsets, att, d_out, *, prompt_axis: bool):
        """d(loss)/d(each offset) plus attention-map gradients for one side.

        ``d_out`` is (n, m, d) on the prompt side ("base" then being the
        (1, m, d) prompts), and (n, d) on the vision side. Offsets are always
        plain (n, d). Gradients w.r.t. the base (frozen prompts / raw vision
        input) are discarded: neither is trainable.
        """
        att_grads = None
        if not offsets:
            return [], att_grads
        if mode == FusionMode.SUM:
            d_each = d_out.sum(axis=1) if prompt_axis else d_out
            return [d_each] * len(offsets), att_grads
        if mode == FusionMode.MULTIPLY:
            # base * off1 [* off2]; product rule without dividing by offsets
            if prompt_axis:
                d_base_prod = (d_out * base).sum(axis=1)  # (n,d): d/d(prod of offs)
            else:
                d_base_prod = d_out * base
            if len(offsets) == 1:
                return [d_base_prod], att_grads
            o1, o2 = offsets
            return [d_base_prod * o2, d_base_prod * o1], att_grads
        # attention
        if prompt_axis:
            d = d_out.shape[-1]
            parts = np.broadcast_arrays(base, *[o[:, None, :] for o in offsets])
            cat = np.concatenate(parts, axis=-1)
            dw = np.einsum("imk,imq->kq", d_out, cat)
            db = d_out.sum(axis=(0, 1))
            dcat = np.einsum("imk,kq->imq", d_out, att["w"])
            d_offs = [dcat[:, :, (a + 1) * d:(a + 2) * d].sum(axis=1) for a in range(len(offsets))]
        else:
            d = d_out.shape[-1]
            parts = np.broadcast_arrays(base, *offsets)
            cat = np.concatenate(parts, axis=-1)
            dw = np.einsum("ik,iq->kq", d_out, cat)
            db = d_out.sum(axis=0)
            dcat = d_out @ att["w"]
            d_offs = [dcat[:, (a + 1) * d:(a + 2) * d] for a in range(len(offsets))]
        return d_offs, {"w": dw, "b": db}

    def loss_and_grads(self, prompts: np.ndarray, batch: ProposalBatch,
                       train: bool = True, update_stats: bool | None = None,
                       scale: float = 1.0):
        """Mean cross-entropy over the batch and gradients for every parameter."""
        if batch.labels is None:
            raise ValueError("loss requires labeled proposals")
        probs, cache = self.forward(prompts, batch, train=train,
                                    update_stats=update_stats, want_cache=True)
        n, m = probs.shape
        labels = batch.labels
        if np.any(labels < 0) or np.any(labels >= m):
            raise ValueError(f"labels must lie in [0, {m})")
        p_true = probs[np.arange(n), labels]
        with np.errstate(divide="ignore"):
            loss = float(-np.log(p_true).mean() * scale)

        # softmax + cross-entropy
        dz = probs.copy()
        dz[np.arange(n), labels] -= 1.0
        dz *= scale / n
        dcos = dz / self.cfg.tau

        tn, fn, cos = cache["tn"], cache["fn"], cache["cos"]
        t_norm, f_norm = cache["t_norm"], cache["f_norm"]
        dt_hat = dcos[..., None] * (fn[:, None, :] - cos[..., None] * tn) / t_norm[..., None]
        df_hat = (
            np.einsum("im,imk->ik", dcos, tn) - (dcos * cos).sum(axis=1)[:, None] * fn
        ) / f_norm[:, None]

        offs = cache["offs"]
        prompt_side, vis_side = cache["prompt_side"], cache["vis_side"]
        grads: dict[str, np.ndarray] = {}
        d_offsets: dict[str, np.ndarray] = {}

        p_offs = [offs[tag] for tag in prompt_side]
        d_p, att_p = self._fusion_backward(
            self.cfg.fusion, cache["t"][None, :, :], p_offs,
            self.att.get("prompt"), dt_hat, prompt_axis=True)
        for tag, g in zip(prompt_side, d_p):
            d_offsets[tag] = d_offsets.get(tag, 0.0) + g
        if att_p is not None:
            grads["att:prompt:w"] = att_p["w"]
            grads["att:prompt:b"] = att_p["b"]

        v_offs = [offs[tag] for tag in vis_side]
        d_v, att_v = self._fusion_backward(
            self.cfg.fusion, batch.vision, v_offs,
            self.att.get("vis"), df_hat, prompt_axis=False)
        for tag, g in zip(vis_side, d_v):
            d_offsets[tag] = d_offsets.get(tag, 0.0) + g
        if att_v is not None:
            grads["att:vis:w"] = att_v["w"]
            grads["att:vis:b"] = att_v["b"]

        # through the bottleneck networks; shared weights accumulate into one buffer
        for tag in ("ocr", "vis"):
            if tag not in d_offsets:
                continue
            net_name = "shared" if self.cfg.share_weights else tag
            net_grads = self.net_for(tag).backward(cache["net_caches"][tag], d_offsets[tag])
            for pname, g in net_grads.items():
                key = f"{net_name}:{pname}"
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

        # parameters untouched by this batch (e.g. a side with no offsets)
        for key, arr in self.parameters().items():
            if key not in grads:
                grads[key] = np.zeros_like(arr)
        return loss, grads


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def predict(head: AptHead, prompts: CategoryPrompts | np.ndarray,
            batch: ProposalBatch, train: bool = False) -> np.ndarray:
    mat = prompts.vectors if isinstance(prompts, CategoryPrompts) else prompts
    return head.predict(mat, batch, train=train)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over rows of -log(true-class probability)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, m = probs.shape
    if np.any(labels < 0) or np.any(labels >= m):
        raise ValueError(f"labels must lie in [0, {m})")
    p_true = probs[np.arange(n), labels]
    if np.any(p_true == 0.0):
        i = int(np.argwhere(p_true == 0.0)[0][0])
        raise NonFiniteLossError(float("inf"), batch_index=i)
    return float(-np.log(p_true).mean())


def tune_pair(head: AptHead, t_j: np.ndarray, f_i: np.ndarray,
              ocr_emb_i: np.ndarray, train: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Tuned (prompt, vision) pair for a single proposal and a single category."""
    t = np.asarray(t_j, dtype=np.float64)[None, :]
    batch = ProposalBatch(
        vision=np.asarray(f_i, dtype=np.float64)[None, :],
        ocr=np.asarray(ocr_emb_i, dtype=np.float64)[None, :],
    )
    offs, _ = head._offsets(batch, train, update_stats=False)
    prompt_side, vis_side = head.cfg.sides()
    t_hat = _fuse(head.cfg.fusion, t, [offs[tag] for tag in prompt_side],
                  head.att.get("prompt"))
    f_hat = _fuse(head.cfg.fusion, batch.vision, [offs[tag] for tag in vis_side],
                  head.att.get("vis"))
    return t_hat[0], f_hat[0]
