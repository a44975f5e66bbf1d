"""Latent scenes and their procedural rendering.

Layout on a 32-unit canvas (scaled to ``image_size``):

* central glyph box, units [8, 24) on both axes: object shape and colour on
  neutral grey;
* eight 3x3 attribute marker slots at the corners and edge midpoints;
* four 4x4 secondary-glyph slots at (4,4), (4,24), (24,4), (24,24);
* everything else is the periodic background texture.

The style transform is a per-channel affine map applied last, so it can be
inverted exactly up to rounding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

N_OBJECTS = 16
N_BACKGROUNDS = 8
N_STYLES = 4
N_ATTRIBUTES = 8
N_PLACEMENTS = 4
MAX_ATTRIBUTES = 2

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow")
BACKGROUNDS = (
    ("grass", "field"),
    ("brick", "wall"),
    ("ocean", "waves"),
    ("sandy", "beach"),
    ("snowy", "mountain"),
    ("city", "street"),
    ("forest", "trees"),
    ("night", "sky"),
)
ATTRIBUTES = ("shiny", "wooden", "striped", "spotted", "tiny", "glowing", "metal", "fuzzy")
STYLES = (("vivid", "bright"), ("faded", "vintage"), ("cool", "calm"), ("dark", "moody"))

_RGB = np.array(
    [[0.9, 0.1, 0.1], [0.1, 0.8, 0.2], [0.15, 0.25, 0.95], [0.95, 0.85, 0.1]]
)
_BG_COLORS = np.array(
    [
        [[0.30, 0.65, 0.25], [0.20, 0.45, 0.15]],
        [[0.65, 0.30, 0.20], [0.80, 0.75, 0.70]],
        [[0.10, 0.35, 0.65], [0.45, 0.70, 0.90]],
        [[0.90, 0.80, 0.55], [0.75, 0.65, 0.40]],
        [[0.95, 0.95, 0.98], [0.55, 0.60, 0.70]],
        [[0.40, 0.40, 0.45], [0.70, 0.70, 0.60]],
        [[0.10, 0.35, 0.10], [0.45, 0.30, 0.15]],
        [[0.05, 0.05, 0.20], [0.85, 0.85, 0.60]],
    ]
)
# (contrast, per-channel tint); every map sends [0, 1] into [0, 1]
_STYLE_MAPS = (
    (1.0, (0.0, 0.0, 0.0)),
    (0.6, (0.1, 0.1, 0.0)),
    (0.8, (-0.05, 0.0, 0.1)),
    (0.7, (-0.15, -0.15, -0.15)),
)
_MARKER_SLOTS = ((0, 0), (0, 29), (29, 0), (29, 29), (0, 14), (14, 0), (29, 14), (14, 29))
_SECONDARY_SLOTS = ((4, 4), (4, 24), (24, 4), (24, 24))
GLYPH_BOX = (8, 24)


@dataclass(frozen=True)
class LatentScene:
    object_id: int
    background_id: int
    style_id: int
    attributes: tuple = field(default_factory=tuple)
    relation: tuple = (0, 0)  # (secondary object id, placement slot)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        object.__setattr__(self, "relation", tuple(int(r) for r in self.relation))
        if not 0 <= self.object_id < N_OBJECTS:
            raise ValueError(f"object_id {self.object_id} out of range")
        if not 0 <= self.background_id < N_BACKGROUNDS:
            raise ValueError(f"background_id {self.background_id} out of range")
        if not 0 <= self.style_id < N_STYLES:
            raise ValueError(f"style_id {self.style_id} out of range")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("attributes must be distinct")
        if any(not 0 <= a < N_ATTRIBUTES for a in self.attributes):
            raise ValueError("attribute id out of range")
        sec, slot = self.relation
        if not (0 <= sec < N_OBJECTS and 0 <= slot < N_PLACEMENTS):
            raise ValueError(f"relation {self.relation} out of range")

    @property
    def shape_name(self) -> str:
        return SHAPES[self.object_id // len(COLORS)]

    @property
    def color_name(self) -> str:
        return COLORS[self.object_id % len(COLORS)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attributes"] = list(self.attributes)
        d["relation"] = list(self.relation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LatentScene":
        return cls(**d)


def generate_scene(seed: int) -> LatentScene:
    """Draw independent, uniformly distributed factors from ``seed``."""
    rng = np.random.default_rng(seed)
    object_id = int(rng.integers(N_OBJECTS))
    background_id = int(rng.integers(N_BACKGROUNDS))
    style_id = int(rng.integers(N_STYLES))
    n_attr = int(rng.integers(MAX_ATTRIBUTES + 1))
    attributes = tuple(sorted(int(a) for a in rng.choice(N_ATTRIBUTES, n_attr, replace=False)))
    relation = (int(rng.integers(N_OBJECTS)), int(rng.integers(N_PLACEMENTS)))
    return LatentScene(object_id, background_id, style_id, attributes, relation, int(seed))


# --------------------------------------------------------------- regions ----


def _scale(v, size):
    return int(round(v * size / 32))


def _box(size, r0, c0, h, w):
    m = np.zeros((size, size), dtype=bool)
    m[_scale(r0, size) : _scale(r0 + h, size), _scale(c0, size) : _scale(c0 + w, size)] = True
    return m


def glyph_region(size: int) -> np.ndarray:
    lo, hi = GLYPH_BOX
    return _box(size, lo, lo, hi - lo, hi - lo)


def marker_region(size: int, slot: int) -> np.ndarray:
    r, c = _MARKER_SLOTS[slot]
    return _box(size, r, c, 3, 3)


def secondary_region(size: int, slot: int) -> np.ndarray:
    r, c = _SECONDARY_SLOTS[slot]
    return _box(size, r, c, 4, 4)


def pure_background_region(size: int) -> np.ndarray:
    """Pixels never touched by the glyph, any marker slot, or any secondary slot."""
    m = glyph_region(size)
    for s in range(N_ATTRIBUTES):
        m |= marker_region(size, s)
    for s in range(N_PLACEMENTS):
        m |= secondary_region(size, s)
    return ~m


def _shape_mask(shape_idx: int, n: int) -> np.ndarray:
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    dy, dx = (yy - c) / n, (xx - c) / n
    if shape_idx == 0:
        return dx**2 + dy**2 <= 0.38**2
    if shape_idx == 1:
        return (np.abs(dx) <= 0.32) & (np.abs(dy) <= 0.32)
    if shape_idx == 2:
        return (dy >= -0.38) & (dy <= 0.38) & (np.abs(dx) <= (dy + 0.38) * 0.5)
    return (np.abs(dx) <= 0.12) & (np.abs(dy) <= 0.4) | (np.abs(dy) <= 0.12) & (np.abs(dx) <= 0.4)


def _background(bg_id: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    period = max(2, _scale(4, size))
    kind = bg_id % 4
    if kind == 0:
        sel = (yy // period) % 2 == 0
    elif kind == 1:
        sel = (xx // period) % 2 == 0
    elif kind == 2:
        sel = ((yy // period) + (xx // period)) % 2 == 0
    else:
        sel = ((yy + xx) // period) % 2 == 0
    a, b = _BG_COLORS[bg_id]
    return np.where(sel[None], a[:, None, None], b[:, None, None])


def apply_style(image: np.ndarray, style_id: int) -> np.ndarray:
    contrast, tint = _STYLE_MAPS[style_id]
    return 0.5 + contrast * (image - 0.5) + np.asarray(tint)[:, None, None]


def invert_style(image: np.ndarray, style_id: int) -> np.ndarray:
    contrast, tint = _STYLE_MAPS[style_id]
    return (image - np.asarray(tint)[:, None, None] - 0.5) / contrast + 0.5


def render_unstyled(scene: LatentScene, size: int = 32) -> np.ndarray:
    if size < 16 or size % 8:
        raise ValueError("image_size must be a multiple of 8 and at least 16")
    img = _background(scene.background_id, size)
    lo, hi = _scale(GLYPH_BOX[0], size), _scale(GLYPH_BOX[1], size)
    n = hi - lo
    box = np.full((3, n, n), 0.5)
    mask = _shape_mask(scene.object_id // len(COLORS), n)
    box[:, mask] = _RGB[scene.object_id % len(COLORS)][:, None]
    img[:, lo:hi, lo:hi] = box
    for a in scene.attributes:
        img[:, marker_region(size, a)] = 1.0
    sec, slot = scene.relation
    img[:, secondary_region(size, slot)] = _RGB[sec % len(COLORS)][:, None]
    return img


def render_image(scene: LatentScene, image_size: int = 32) -> np.ndarray:
    """Deterministic [3, S, S] float image in [0, 1]."""
    return np.clip(apply_style(render_unstyled(scene, image_size), scene.style_id), 0.0, 1.0)


# ------------------------------------------------------------------- PPM ----


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8-bit."""
    _, h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def _header_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a float [3, H, W] array in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), offset = _header_tokens(buf, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=offset)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary P5, 8-bit; ``gray`` already scaled to [0, 255]."""
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.asarray(gray, dtype=np.uint8).tobytes())
