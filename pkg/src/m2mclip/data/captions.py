"""Grammar captioner standing in for prompted VLM captioning, plus the tokenizer."""

from __future__ import annotations

import enum
import json
import re

import numpy as np

from ..encoders import EOT_ID, PAD_ID, UNK_ID
from ..errors import UnsupportedView
from .scenes import ATTRIBUTES, BACKGROUNDS, COLORS, SHAPES, STYLES, LatentScene

MAX_TEXT_TOKENS = 77
SPECIAL_TOKENS = ("<pad>", "<eot>", "<unk>")


class ViewTag(str, enum.Enum):
    DETAILS = "details"
    NOUNS = "nouns"
    MAIN_OBJECT = "main_object"
    BACKGROUND = "background"
    STYLE = "style"
    RAW_ALT = "raw_alt"


CAPTION_VIEWS = (ViewTag.DETAILS, ViewTag.NOUNS, ViewTag.MAIN_OBJECT, ViewTag.BACKGROUND, ViewTag.STYLE)

OBJECT_VOCAB = frozenset(SHAPES) | frozenset(COLORS) | frozenset(ATTRIBUTES)
BACKGROUND_VOCAB = frozenset(w for pair in BACKGROUNDS for w in pair)
STYLE_VOCAB = frozenset(w for pair in STYLES for w in pair)

_DETAILS = (
    "a detailed photo of a {obj} sitting in the middle of the picture , surrounded by a {bg} that fills the rest of the frame",
    "in this picture there is a {obj} at the center and behind it we can see a {bg} stretching across the whole scene",
    "the photo shows a {obj} placed in front of a {bg} , the {shape} is clearly visible against the {bgnoun}",
)
_MAIN_OBJECT = ("a {obj}", "the main object is a {obj}", "one {obj} in the center")
_BACKGROUND = ("the background is a {bg}", "a {bg} behind everything", "only a {bg} can be seen in the back")
_STYLE = ("the picture feels {s0} and {s1}", "a {s0} , {s1} mood", "the overall style is {s0} and rather {s1}")
_ALT = ("{color} {shape} photo", "stock image {shape} {bgnoun}", "{obj} on {bg}")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize_words(text: str) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def _rng(scene: LatentScene, view: ViewTag, seed: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), list(ViewTag).index(view)]))


def _object_phrase(scene, rng):
    attrs = [ATTRIBUTES[a] for a in scene.attributes]
    rng.shuffle(attrs)
    return " ".join(attrs + [scene.color_name, scene.shape_name])


def _fields(scene, rng):
    bg = BACKGROUNDS[scene.background_id]
    return {
        "obj": _object_phrase(scene, rng),
        "shape": scene.shape_name,
        "color": scene.color_name,
        "bg": " ".join(bg),
        "bgnoun": bg[1],
        "s0": STYLES[scene.style_id][0],
        "s1": STYLES[scene.style_id][1],
    }


def caption_view(scene: LatentScene, view, seed: int) -> str:
    """One caption of ``scene`` restricted to the factors ``view`` may mention."""
    view = ViewTag(view)
    if view is ViewTag.RAW_ALT:
        raise UnsupportedView("raw_alt texts come from alt_text(), not the prompted captioner")
    rng = _rng(scene, view, seed)
    if view is ViewTag.NOUNS:
        bg = BACKGROUNDS[scene.background_id]
        words = [scene.color_name, scene.shape_name] + [ATTRIBUTES[a] for a in scene.attributes] + list(bg)
        rng.shuffle(words)
        return " , ".join(words)
    templates = {
        ViewTag.DETAILS: _DETAILS,
        ViewTag.MAIN_OBJECT: _MAIN_OBJECT,
        ViewTag.BACKGROUND: _BACKGROUND,
        ViewTag.STYLE: _STYLE,
    }[view]
    template = templates[int(rng.integers(len(templates)))]
    return template.format(**_fields(scene, rng))


def alt_text(scene: LatentScene, seed: int) -> str:
    """Short web-style alt text (the raw caption a crawler would find)."""
    rng = _rng(scene, ViewTag.RAW_ALT, seed)
    template = _ALT[int(rng.integers(len(_ALT)))]
    return template.format(**_fields(scene, rng))


def near_duplicate_captions(scene: LatentScene, seed: int, n: int = 2) -> list[str]:
    """``n`` details captions from consecutive seeds: one prompt, several captioners."""
    return [caption_view(scene, ViewTag.DETAILS, seed + i) for i in range(n)]


def grammar_vocabulary() -> list[str]:
    """Every word token the grammar can emit, sorted."""
    words = set(OBJECT_VOCAB | BACKGROUND_VOCAB | STYLE_VOCAB)
    for t in _DETAILS + _MAIN_OBJECT + _BACKGROUND + _STYLE + _ALT:
        words.update(w for w in tokenize_words(re.sub(r"\{\w+\}", " ", t)))
    words.add(",")
    return sorted(words)


class Vocabulary:
    """Token-to-id map; ids 0..2 are reserved for pad, end-of-text, unknown."""

    def __init__(self, tokens):
        self.token_to_id = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for t in tokens:
            if t not in self.token_to_id:
                self.token_to_id[t] = len(self.token_to_id)
        assert self.token_to_id["<pad>"] == PAD_ID and self.token_to_id["<eot>"] == EOT_ID
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return len(self.token_to_id)

    def encode(self, text: str) -> list[int]:
        """Word ids followed by the terminal token."""
        ids = [self.token_to_id.get(w, UNK_ID) for w in tokenize_words(text)]
        return ids + [EOT_ID]

    def decode(self, ids) -> str:
        return " ".join(self.id_to_token[i] for i in ids if i not in (PAD_ID, EOT_ID))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, indent=0, sort_keys=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
        vocab = cls([])
        vocab.token_to_id = {str(k): int(v) for k, v in mapping.items()}
        vocab.id_to_token = {i: t for t, i in vocab.token_to_id.items()}
        return vocab

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        return cls(sorted({w for t in texts for w in tokenize_words(t)}))


def token_count(text: str) -> int:
    """Length of the encoded sequence, terminal token included."""
    return len(tokenize_words(text)) + 1
