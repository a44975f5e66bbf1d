"""Deterministic mini-batch training and the binary checkpoint format."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data.captions import ViewTag
from .data.dataset import ingest_jsonl, load_images
from .encoders import (
    ModelConfig,
    Parameter,
    Temperature,
    Variant,
    encode_images,
    encode_texts,
    init_params,
    pad_tokens,
)
from .errors import CorruptCheckpoint, DataIOError, PlanCardinality
from .losses import Reduction, loss_m2m, loss_o2m, loss_o2o
from .matching import PlanMode, plan_free, plan_grouped, plan_identity

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.98, 1e-8
MAX_WARMUP = 500
GROUPING_PROBE = 256
MAGIC = b"M2MCKPT1"
METRICS_HEADER = ("step", "epoch", "loss", "tau", "lr")


@dataclass
class TrainConfig:
    manifest: str = ""
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    warmup_steps: int | None = None
    seed: int = 0
    loss_kind: str = "m2m"
    reduction: str = Reduction.MEAN.value
    plan_mode: str = PlanMode.IDENTITY.value
    views: list | None = None
    max_steps: int | None = None
    grouping_refresh: int = 1  # epochs between grouped-plan rebuilds; 0 keeps the first plan

    def __post_init__(self):
        self.loss_kind = self.loss_kind.lower()
        if self.loss_kind not in ("o2o", "o2m", "m2m"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        self.reduction = Reduction(self.reduction).value
        self.plan_mode = PlanMode(self.plan_mode).value
        if self.grouping_refresh < 0:
            raise ValueError("grouping_refresh must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.views is not None:
            self.views = [ViewTag(v).value for v in self.views]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict  # name -> ndarray
    adam_m: dict
    adam_v: dict
    step: int = 0
    clamp_max: float = 100.0
    extra: dict = field(default_factory=dict)


# ------------------------------------------------------------ optimizer ----


class AdamW:
    """Adam with decoupled weight decay; decay applies to parameters with ndim >= 2."""

    def __init__(self, params: dict, lr: float, weight_decay: float, m=None, v=None, step: int = 0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.m = m or {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = v or {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = step

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - BETA1**self.t
        c2 = 1.0 - BETA2**self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def learning_rate_at(step: int, total: int, peak: float, warmup: int) -> float:
    """Linear warmup over ``warmup`` steps, then cosine decay to zero at ``total``."""
    if step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(step - warmup, span) / span))


def default_warmup(total: int) -> int:
    return max(1, min(MAX_WARMUP, math.ceil(0.1 * total)))


# ----------------------------------------------------------------- data ----


class TrainingData:
    """Images and per-slot padded token arrays held in memory."""

    def __init__(self, samples, root, views=None):
        if not samples:
            raise ValueError("empty dataset")
        slot_views = [ViewTag(v) for v in views] if views else samples[0].views
        self.views = slot_views
        self.samples = samples
        self.images = load_images(samples, root)
        per_slot = [[] for _ in slot_views]
        for s in samples:
            index = {v: k for k, v in enumerate(s.views)}
            for m, view in enumerate(slot_views):
                if view not in index:
                    raise PlanCardinality(f"sample {s.id} lacks a {view.value} text")
                per_slot[m].append(s.tokens[index[view]])
        self.tokens = [pad_tokens(seqs) for seqs in per_slot]

    @property
    def num_slots(self) -> int:
        return len(self.views)

    def __len__(self) -> int:
        return len(self.samples)

    @classmethod
    def from_manifest(cls, manifest, views=None) -> "TrainingData":
        samples = ingest_jsonl(manifest)
        return cls(samples, Path(manifest).parent, views)


def encode_slots(tokens_per_slot, idx, config, params):
    """Tensor [len(idx), M, d] of text embeddings, one tower call per slot."""
    parts = []
    for toks in tokens_per_slot:
        t = toks[idx]
        t = t[:, : int((t != 0).sum(axis=1).max())]
        emb = encode_texts(t, config, params)
        parts.append(ag.reshape(emb, (emb.shape[0], 1, emb.shape[1])))
    return parts[0] if len(parts) == 1 else ag.concat(parts, axis=1)


def compute_loss(kind, V, T, plan, tau, reduction):
    if kind == "o2o":
        return loss_o2o(V[:, 0], T[:, 0], tau, reduction)
    if kind == "o2m":
        return loss_o2m(V, T, tau, reduction)
    return loss_m2m(V, T, plan, tau, reduction)


def _check_compat(tc: TrainConfig, mc: ModelConfig, M: int) -> None:
    H = mc.branch_count
    if tc.loss_kind in ("o2o", "o2m") and H != 1:
        raise PlanCardinality(f"{tc.loss_kind} needs a single image embedding, model has H={H}")
    if tc.loss_kind == "m2m":
        mode = PlanMode(tc.plan_mode)
        if mode is PlanMode.IDENTITY and M != H:
            raise PlanCardinality(f"identity plan needs M == H, got M={M}, H={H}")
        if mode is PlanMode.GROUPED and M < H:
            raise PlanCardinality(f"grouped plan needs M >= H, got M={M}, H={H}")


def grouped_plan_from_data(data: TrainingData, config, params, H):
    """Cluster the text slots by the similarity of their mean embeddings on a fixed probe set."""
    idx = np.arange(min(len(data), GROUPING_PROBE))
    with ag.no_grad():
        T = encode_slots(data.tokens, idx, config, params).data
    centroid = T.mean(axis=0)
    centroid /= np.linalg.norm(centroid, axis=1, keepdims=True)
    return plan_grouped(centroid, H)


def free_plan_from_batch(V, T):
    v = V.data.mean(axis=0)
    t = T.data.mean(axis=0)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return plan_free(v, t)


# ---------------------------------------------------------------- train ----


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list  # rows of (step, epoch, loss, tau, lr)


def train(
    train_config: TrainConfig,
    model_config: ModelConfig,
    data: TrainingData | None = None,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run the training loop.

    ``resume`` continues from a checkpoint; ``stop_after`` halts once the
    global step counter reaches that value (the schedule still assumes the
    full run), which is how interrupted-and-resumed runs are reproduced.
    """
    tc, mc = train_config, model_config
    if data is None:
        data = TrainingData.from_manifest(tc.manifest, tc.views)
    M, H, K = data.num_slots, mc.branch_count, tc.batch_size
    _check_compat(tc, mc, M)
    if K > len(data):
        raise ValueError(f"batch_size {K} exceeds dataset size {len(data)}")
    steps_per_epoch = len(data) // K
    total = tc.epochs * steps_per_epoch
    if tc.max_steps is not None:
        total = min(total, tc.max_steps)
    warmup = tc.warmup_steps if tc.warmup_steps is not None else default_warmup(total)

    if resume is None:
        params = init_params(mc, tc.seed)
        opt = AdamW(params, tc.learning_rate, tc.weight_decay)
        clamp_max = 100.0
    else:
        params = {k: Parameter(v, k) for k, v in resume.params.items()}
        opt = AdamW(
            params,
            tc.learning_rate,
            tc.weight_decay,
            {k: v.copy() for k, v in resume.adam_m.items()},
            {k: v.copy() for k, v in resume.adam_v.items()},
            resume.step,
        )
        clamp_max = resume.clamp_max
    temperature = Temperature(params["logit_scale"], clamp_max)
    mode = PlanMode(tc.plan_mode)
    plan = plan_identity(M, H) if tc.loss_kind == "m2m" and mode is PlanMode.IDENTITY else None
    if plan is None and resume is not None and "plan" in resume.extra:
        plan = resume.extra["plan"]

    metrics = []
    step = opt.t
    end = total if stop_after is None else min(total, stop_after)
    while step < end:
        epoch, offset = divmod(step, steps_per_epoch)
        order = np.random.default_rng([tc.seed, epoch]).permutation(len(data))
        if tc.loss_kind == "m2m" and mode is PlanMode.GROUPED:
            refresh = offset == 0 and tc.grouping_refresh > 0 and epoch % tc.grouping_refresh == 0
            if plan is None or refresh:
                plan = grouped_plan_from_data(data, mc, params, H)
        for b in range(offset, steps_per_epoch):
            if step >= end:
                break
            idx = np.sort(order[b * K : (b + 1) * K])
            V = encode_images(data.images[idx], mc, params)
            T = encode_slots(data.tokens, idx, mc, params)
            if tc.loss_kind == "m2m" and mode is PlanMode.FREE:
                plan = free_plan_from_batch(V, T)
            loss = compute_loss(tc.loss_kind, V, T, plan, temperature.as_tensor(), tc.reduction)
            opt.zero_grad()
            loss.backward()
            lr = learning_rate_at(step, total, tc.learning_rate, warmup)
            opt.step(lr)
            temperature.clamp()
            metrics.append((step, epoch, float(loss.data), temperature.tau, lr))
            if step % 50 == 0:
                log.info("step %d epoch %d loss %.5f tau %.4f lr %.2e", step, epoch, loss.data, temperature.tau, lr)
            step += 1

    ckpt = Checkpoint(
        mc,
        tc,
        {k: p.data.copy() for k, p in params.items()},
        opt.m,
        opt.v,
        step,
        clamp_max,
        _extra(plan, data.views),
    )
    return TrainResult(ckpt, metrics)


def _extra(plan, views) -> dict:
    extra = {"views": [ViewTag(v).value for v in views]}
    if plan is not None:
        extra["plan"] = [int(a) for a in getattr(plan, "assignment", plan)]
    return extra


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for step, epoch, loss, tau, lr in rows:
            w.writerow([step, epoch, repr(loss), repr(tau), repr(lr)])


def read_metrics(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), int(r["epoch"]), float(r["loss"]), float(r["tau"]), float(r["lr"])) for r in rows]


# ----------------------------------------------------------- checkpoint ----
#
# Layout: MAGIC (8 bytes) | header length (u64 LE) | JSON header (UTF-8) |
# payload of little-endian float64. Header "tensors" entries carry name,
# group (param | adam_m | adam_v), shape, and byte offset into the payload.


def _header(ckpt: Checkpoint):
    tensors, chunks, offset = [], [], 0
    for group, store in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name in ckpt.params:
            arr = np.asarray(store[name], dtype="<f8", order="C")
            tensors.append({"name": name, "group": group, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "format": 1,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "step": int(ckpt.step),
        "temperature": {"parameter": "logit_scale", "clamp_max": ckpt.clamp_max},
        "extra": ckpt.extra,
        "payload_bytes": offset,
        "tensors": tensors,
    }
    return header, b"".join(chunks)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header, payload = _header(ckpt)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(ckpt))
    except OSError as exc:
        raise DataIOError(str(exc)) from exc


def parse_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    if 16 + hlen > len(buf):
        raise CorruptCheckpoint("header extends past end of file")
    try:
        header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
    payload = buf[16 + hlen :]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptCheckpoint(f"payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    stores = {"param": {}, "adam_m": {}, "adam_v": {}}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        end = t["offset"] + 8 * count
        if t["offset"] < 0 or end > len(payload):
            raise CorruptCheckpoint(f"tensor {t['name']} offset out of range")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"])
        stores[t["group"]][t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    return Checkpoint(
        ModelConfig.from_dict(header["model_config"]),
        TrainConfig(**header["train_config"]),
        stores["param"],
        stores["adam_m"],
        stores["adam_v"],
        header["step"],
        header["temperature"]["clamp_max"],
        header.get("extra", {}),
    )


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(str(exc)) from exc
    return parse_checkpoint(buf)


def params_as_tensors(ckpt: Checkpoint) -> dict:
    return {k: ag.Tensor(v) for k, v in ckpt.params.items()}


def is_multi_branch(config: ModelConfig) -> bool:
    return config.variant is not Variant.VANILLA
