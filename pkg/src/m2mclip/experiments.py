"""Evaluation protocol over synthetic datasets and the desk-scale M2M vs O2M comparison."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data.captions import ViewTag, Vocabulary, caption_view
from .data.dataset import generate_dataset, ingest_jsonl
from .data.scenes import COLORS, N_OBJECTS, SHAPES, LatentScene
from .encoders import ModelConfig, Variant, encode_images, encode_texts, pad_tokens
from .evaluation import AVERAGE, Fusion, FusionStrategy, recall_from_scores, zero_shot_classify, fused_score_matrix, gallery_stats
from .training import Checkpoint, TrainConfig, TrainingData, save_checkpoint, train, write_metrics

log = logging.getLogger(__name__)

EVAL_BATCH = 128


def embed_images(images, config, params, batch=EVAL_BATCH) -> np.ndarray:
    out = []
    with ag.no_grad():
        for i in range(0, len(images), batch):
            out.append(encode_images(images[i : i + batch], config, params).data)
    return np.concatenate(out)


def embed_token_lists(token_lists, config, params, batch=EVAL_BATCH) -> np.ndarray:
    out = []
    with ag.no_grad():
        for i in range(0, len(token_lists), batch):
            out.append(encode_texts(pad_tokens(token_lists[i : i + batch]), config, params).data)
    return np.concatenate(out)


def _factor_key(scene: LatentScene | None, view: ViewTag, index: int):
    if scene is None or view is ViewTag.RAW_ALT:
        return ("id", index)
    if view in (ViewTag.DETAILS, ViewTag.NOUNS):
        return (scene.object_id, scene.background_id, scene.attributes)
    if view is ViewTag.MAIN_OBJECT:
        return (scene.object_id, scene.attributes)
    if view is ViewTag.BACKGROUND:
        return (scene.background_id,)
    return (scene.style_id,)


def view_acceptability(samples, view) -> np.ndarray:
    """Boolean [N, N]: item j is a correct match for query i under ``view``.

    Two synthetic samples match when they agree on every factor the view's
    captions describe; samples without scenes only match themselves.
    """
    view = ViewTag(view)
    keys = [_factor_key(s.scene, view, i) for i, s in enumerate(samples)]
    codes = {k: c for c, k in enumerate(dict.fromkeys(keys))}
    arr = np.array([codes[k] for k in keys])
    return arr[:, None] == arr[None, :]


def object_class_prompts() -> list:
    return [f"a {COLORS[o % len(COLORS)]} {SHAPES[o // len(COLORS)]}" for o in range(N_OBJECTS)]


@dataclasses.dataclass
class EncodedSet:
    samples: list
    views: list
    image_sets: np.ndarray  # [N, H, d]
    texts: dict  # view -> [N, d]


def encode_dataset(samples, root, config: ModelConfig, params, views=None) -> EncodedSet:
    data = TrainingData(samples, root, views)
    image_sets = embed_images(data.images, config, params)
    texts = {}
    for m, view in enumerate(data.views):
        toks = [row[row != 0].tolist() for row in data.tokens[m]]
        texts[view] = embed_token_lists(toks, config, params)
    return EncodedSet(samples, data.views, image_sets, texts)


def branch_for_view(ckpt: Checkpoint, view) -> int | None:
    """Image branch trained against ``view``, or None for single-branch models."""
    if ckpt.model_config.branch_count == 1:
        return None
    views = ckpt.extra.get("views")
    plan = ckpt.extra.get("plan")
    if not views or plan is None or ViewTag(view).value not in views:
        return None
    return int(plan[views.index(ViewTag(view).value)])


def _directional(image_sets, texts, acc, strategy, ks):
    stats = gallery_stats(image_sets, texts) if strategy.kind is Fusion.NORM_MAX else None
    scores = fused_score_matrix(image_sets, texts, strategy, stats)
    return {"I2T": recall_from_scores(scores, acc, ks), "T2I": recall_from_scores(scores.T, acc.T, ks)}


def evaluate(ckpt: Checkpoint, manifest, strategy=AVERAGE, vocab: Vocabulary | None = None, ks=(1, 5, 10)) -> dict:
    """Retrieval per view, overall retrieval on the details view, and zero-shot object classification."""
    manifest = Path(manifest)
    samples = ingest_jsonl(manifest, vocab)
    views = ckpt.extra.get("views") or None
    enc = encode_dataset(samples, manifest.parent, ckpt.model_config, _tensors(ckpt), views)
    report = {"fusion": strategy.kind.value, "branches": list(strategy.branch_subset or range(enc.image_sets.shape[1]))}
    overall_view = ViewTag.DETAILS if ViewTag.DETAILS in enc.views else enc.views[0]
    acc = view_acceptability(samples, overall_view)
    report["overall_view"] = overall_view.value
    report.update(_directional(enc.image_sets, enc.texts[overall_view], acc, strategy, ks))
    per_view, matched = {}, {}
    for view in enc.views:
        acc = view_acceptability(samples, view)
        per_view[view.value] = _directional(enc.image_sets, enc.texts[view], acc, strategy, ks)
        branch = branch_for_view(ckpt, view)
        routed = strategy if branch is None else FusionStrategy(Fusion.AVERAGE, (branch,))
        matched[view.value] = _directional(enc.image_sets, enc.texts[view], acc, routed, ks)
    report["views"] = per_view
    report["views_matched_branch"] = matched
    if all(s.scene is not None for s in samples):
        report["zero_shot"] = object_zero_shot(enc.image_sets, samples, ckpt, strategy, vocab or _vocab(manifest, samples))
    return report


def object_zero_shot(image_sets, samples, ckpt, strategy, vocab) -> dict:
    prompts = [vocab.encode(p) for p in object_class_prompts()]
    class_emb = embed_token_lists(prompts, ckpt.model_config, _tensors(ckpt))
    labels = [s.scene.object_id for s in samples]
    return zero_shot_classify(image_sets, class_emb, labels, strategy)


def _vocab(manifest, samples) -> Vocabulary:
    path = Path(manifest).parent / "vocab.json"
    if path.is_file():
        return Vocabulary.load(path)
    return Vocabulary.from_texts(t for s in samples for _, t in s.texts)


def _tensors(ckpt):
    return {k: ag.Tensor(v) for k, v in ckpt.params.items()}


# ------------------------------------------------------ desk comparison ----


DESK_VIEWS = (ViewTag.DETAILS, ViewTag.NOUNS, ViewTag.MAIN_OBJECT, ViewTag.BACKGROUND)
# 2,000 scenes at batch 64 is 32 steps per epoch; 20 epochs fits in about 15 minutes on one core
DESK_TRAIN = dict(epochs=20, learning_rate=1e-3)


def desk_model_config(variant: Variant, branches: int, vocab_size: int, **overrides) -> ModelConfig:
    base = dict(
        image_size=32,
        patch_size=4,
        width=64,
        depth=4,
        heads=4,
        embed_dim=64,
        branch_count=branches,
        variant=variant,
        vocab_size=vocab_size,
    )
    base.update(overrides)
    return ModelConfig(**base)


def desk_comparison(work_dir, n_train=2000, n_test=500, seed=0, train_overrides=None, model_overrides=None):
    """Train O2M (vanilla) and M2M (class-token branches, H=M=4) on identical budgets and evaluate both."""
    work_dir = Path(work_dir)
    views = list(DESK_VIEWS)
    train_manifest = generate_dataset(n_train, views, seed, work_dir / "train")
    test_manifest = generate_dataset(n_test, views, seed + 1_000_003, work_dir / "test")
    data = TrainingData.from_manifest(train_manifest)
    vocab_size = len(Vocabulary.load(work_dir / "train" / "vocab.json"))
    tkw = dict(DESK_TRAIN, manifest=str(train_manifest), seed=seed, views=[v.value for v in views])
    tkw.update(train_overrides or {})
    results = {}
    for name, loss_kind, variant, H in (("o2m", "o2m", Variant.VANILLA, 1), ("m2m", "m2m", Variant.CLS, len(views))):
        mc = desk_model_config(variant, H, vocab_size, **(model_overrides or {}))
        tc = TrainConfig(loss_kind=loss_kind, **tkw)
        run = train(tc, mc, data=data)
        ckpt = run.checkpoint
        save_checkpoint(ckpt, work_dir / f"{name}.ckpt")
        write_metrics(run.metrics, work_dir / f"{name}_metrics.csv")
        results[name] = {"checkpoint": ckpt, "metrics": run.metrics, "report": evaluate(ckpt, test_manifest)}
        log.info("%s done: %s", name, results[name]["report"]["T2I"])
    return results
