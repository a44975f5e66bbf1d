"""(image, multi-texts) datasets: generation, JSONL ingestion, caption filtering."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataIOError, MissingImage, ParseError, TextTooLong
from .captions import (
    MAX_TEXT_TOKENS,
    ViewTag,
    Vocabulary,
    alt_text,
    caption_view,
    grammar_vocabulary,
    token_count,
)
from .scenes import LatentScene, generate_scene, read_ppm, render_image, write_ppm

VOCAB_FILENAME = "vocab.json"
RECAPTION_ATTEMPTS = 5


@dataclass
class MultiTextSample:
    id: int
    image_path: str
    texts: list  # [(ViewTag, str)]
    scene: LatentScene | None = None
    tokens: list = field(default_factory=list)  # per text, ids incl. terminal token

    def __post_init__(self):
        self.texts = [(ViewTag(v), t) for v, t in self.texts]
        tags = [v for v, _ in self.texts if v is not ViewTag.RAW_ALT]
        if len(tags) != len(set(tags)):
            raise ValueError(f"sample {self.id}: duplicate view tags")

    @property
    def views(self) -> list:
        return [v for v, _ in self.texts]

    def text_for(self, view) -> str:
        view = ViewTag(view)
        for v, t in self.texts:
            if v is view:
                return t
        raise KeyError(view)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "image": self.image_path,
            "texts": [{"view": v.value, "text": t} for v, t in self.texts],
            "scene": None if self.scene is None else self.scene.to_dict(),
        }


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def passes_length_rules(text: str, min_chars: int = 10) -> bool:
    return len(text) > min_chars and token_count(text) <= MAX_TEXT_TOKENS


def caption_with_retries(scene: LatentScene, view, seed: int, min_chars: int = 10):
    """Re-sample the captioner with incremented seeds until the length rules pass.

    Returns ``None`` after ``RECAPTION_ATTEMPTS`` failures.
    """
    view = ViewTag(view)
    for attempt in range(RECAPTION_ATTEMPTS):
        if view is ViewTag.RAW_ALT:
            text = alt_text(scene, seed + attempt)
        else:
            text = caption_view(scene, view, seed + attempt)
        if passes_length_rules(text, min_chars):
            return text
    return None


def make_sample(index: int, views, base_seed: int, image_path: str) -> MultiTextSample:
    seed = scene_seed(base_seed, index)
    scene = generate_scene(seed)
    texts = []
    for view in views:
        text = caption_with_retries(scene, view, seed)
        if text is not None:
            texts.append((ViewTag(view), text))
    return MultiTextSample(index, image_path, texts, scene)


def generate_dataset(n: int, views, base_seed: int, out_dir, image_size: int = 32) -> Path:
    """Render ``n`` scenes to PPM files and write ``manifest.jsonl`` plus ``vocab.json``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    views = [ViewTag(v) for v in views]
    if not views:
        raise ValueError("views must be non-empty")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        manifest = out_dir / "manifest.jsonl"
        with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(n):
                rel = f"images/{i:06d}.ppm"
                sample = make_sample(i, views, base_seed, rel)
                write_ppm(out_dir / rel, render_image(sample.scene, image_size))
                fh.write(json.dumps(sample.to_json(), ensure_ascii=False) + "\n")
        Vocabulary(grammar_vocabulary()).save(out_dir / VOCAB_FILENAME)
    except OSError as exc:
        raise DataIOError(str(exc)) from exc
    return manifest


def _parse_line(raw: str, lineno: int) -> MultiTextSample:
    try:
        obj = json.loads(raw)
        texts = [(ViewTag(t["view"]), str(t["text"])) for t in obj["texts"]]
        scene = obj.get("scene")
        sample = MultiTextSample(
            int(obj["id"]),
            str(obj["image"]),
            texts,
            None if scene is None else LatentScene.from_dict(scene),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(lineno, f"{type(exc).__name__}: {exc}") from exc
    if not sample.texts:
        raise ParseError(lineno, "sample has no texts")
    return sample


def ingest_jsonl(manifest_path, vocab: Vocabulary | None = None) -> list:
    """Parse, validate and tokenize a manifest.

    The vocabulary defaults to ``vocab.json`` beside the manifest, or is built
    from the manifest texts when that file is absent.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataIOError(str(exc)) from exc
    samples = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        sample = _parse_line(raw, lineno)
        if not (root / sample.image_path).is_file():
            raise MissingImage(root / sample.image_path)
        for view, text in sample.texts:
            n_tok = token_count(text)
            if n_tok > MAX_TEXT_TOKENS:
                raise TextTooLong(lineno, f"{view.value} text has {n_tok} tokens > {MAX_TEXT_TOKENS}")
        samples.append(sample)
    if vocab is None:
        vocab_path = root / VOCAB_FILENAME
        if vocab_path.is_file():
            vocab = Vocabulary.load(vocab_path)
        else:
            vocab = Vocabulary.from_texts(t for s in samples for _, t in s.texts)
    for sample in samples:
        sample.tokens = [vocab.encode(t) for _, t in sample.texts]
    return samples


def load_images(samples, root) -> np.ndarray:
    root = Path(root)
    return np.stack([read_ppm(root / s.image_path) for s in samples])


def filter_captions(samples, min_chars: int = 10, score_threshold: float | None = None, scorer=None):
    """Drop short or low-scoring texts.

    A text survives when ``len(text) > min_chars`` and, with a ``scorer``
    (called as ``scorer(sample, view, text)`` and returning an image-text
    cosine), its score is at least ``score_threshold``. Returns
    ``(kept_samples, rejected)`` where ``rejected`` lists dicts with ``id``,
    ``view``, ``text`` and ``reason``; samples left without texts are rejected
    whole with ``view`` set to ``None``.
    """
    if scorer is not None:
        if score_threshold is None or not -1.0 <= score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [-1, 1] when a scorer is given")
    kept, rejected = [], []
    for sample in samples:
        texts, tokens = [], []
        for k, (view, text) in enumerate(sample.texts):
            reason = None
            if len(text) <= min_chars:
                reason = f"length {len(text)} <= {min_chars}"
            elif scorer is not None:
                score = float(scorer(sample, view, text))
                if score < score_threshold:
                    reason = f"score {score:.4f} < {score_threshold}"
            if reason is None:
                texts.append((view, text))
                if sample.tokens:
                    tokens.append(sample.tokens[k])
            else:
                rejected.append({"id": sample.id, "view": view.value, "text": text, "reason": reason})
        if not texts:
            rejected.append({"id": sample.id, "view": None, "text": None, "reason": "no texts left"})
            continue
        kept.append(MultiTextSample(sample.id, sample.image_path, texts, sample.scene, tokens))
    return kept, rejected


def manifest_root(manifest_path) -> str:
    return os.path.dirname(os.path.abspath(manifest_path))
