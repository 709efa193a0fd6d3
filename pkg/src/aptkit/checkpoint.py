"""Head checkpoints in the embedding container format.

Every parameter tensor is flattened row-major into one record; the file dim
is the largest tensor size, shorter records are zero-padded. A "meta" record
carries the numbers needed to rebuild the head before loading weights.
Values are stored as float32 per the container format, so a reloaded head
reproduces the saved one to float32 precision.
"""

from __future__ import annotations

import numpy as np

from .dataio import read_records, write_records
from .errors import FormatError
from .head import AptHead, FusionMode, HeadConfig, TuningMode

CKPT_VERSION = 1

_FUSIONS = list(FusionMode)
_TUNINGS = list(TuningMode)


def _record_name(param: str) -> str:
    # w1 -> w:layer1, b1 -> b:layer1, gamma1 -> bn1:gamma, beta1 -> bn1:beta
    kind = param.rstrip("0123456789")
    k = param[len(kind):]
    if kind in ("w", "b"):
        return f"{kind}:layer{k}"
    return f"bn{k}:{kind}"


def _head_records(head: AptHead) -> list[tuple[str, np.ndarray]]:
    records: list[tuple[str, np.ndarray]] = []
    for name in sorted(head.nets):
        net = head.nets[name]
        for pname, arr in net.params.items():
            records.append((f"{name}:{_record_name(pname)}", arr.ravel()))
        for k in range(1, len(net.dims) + 1):
            records.append((f"{name}:bn{k}:running_mean", net.running[f"mean{k}"]))
            records.append((f"{name}:bn{k}:running_var", net.running[f"var{k}"]))
    for side in sorted(head.att):
        records.append((f"att:{side}:w", head.att[side]["w"].ravel()))
        records.append((f"att:{side}:b", head.att[side]["b"]))
    return records


def save_head(head: AptHead, path) -> None:
    cfg = head.cfg
    meta = np.array(
        [
            CKPT_VERSION,
            head.d,
            head.r,
            head.layers,
            1.0 if cfg.share_weights else 0.0,
            _FUSIONS.index(cfg.fusion),
            _TUNINGS.index(cfg.tuning),
            cfg.tau,
            1.0 if cfg.use_ocr else 0.0,
            1.0 if cfg.use_vision else 0.0,
            0.0,  # mode flag: saved heads are in eval mode
        ],
        dtype=np.float64,
    )
    records = [("meta", meta)] + _head_records(head)
    dim = max(len(vec) for _, vec in records)
    padded = []
    for key, vec in records:
        buf = np.zeros(dim, dtype=np.float64)
        buf[: len(vec)] = vec
        padded.append((key, buf))
    write_records(path, dim, padded)


def load_head(path) -> AptHead:
    _, records = read_records(path)
    table = {k: v for k, v in records}
    if "meta" not in table:
        raise FormatError(f"{path}: not a head checkpoint (no 'meta' record)")
    meta = table["meta"].astype(np.float64)
    if int(meta[0]) != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {int(meta[0])} not supported")
    d, r, layers = int(meta[1]), int(meta[2]), int(meta[3])
    cfg = HeadConfig(
        fusion=_FUSIONS[int(meta[5])],
        tuning=_TUNINGS[int(meta[6])],
        share_weights=bool(int(meta[4])),
        tau=float(meta[7]),
        use_ocr=bool(int(meta[8])),
        use_vision=bool(int(meta[9])),
    )
    head = AptHead(d, cfg, layers=layers, r=r)

    def fill(key: str, target: np.ndarray):
        if key not in table:
            raise FormatError(f"{path}: missing checkpoint record {key!r}")
        flat = table[key][: target.size].astype(np.float64)
        target[...] = flat.reshape(target.shape)

    for name in sorted(head.nets):
        net = head.nets[name]
        for pname, arr in net.params.items():
            fill(f"{name}:{_record_name(pname)}", arr)
        for k in range(1, len(net.dims) + 1):
            fill(f"{name}:bn{k}:running_mean", net.running[f"mean{k}"])
            fill(f"{name}:bn{k}:running_var", net.running[f"var{k}"])
    for side in sorted(head.att):
        fill(f"att:{side}:w", head.att[side]["w"])
        fill(f"att:{side}:b", head.att[side]["b"])
    return head
