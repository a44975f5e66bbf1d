from .captions import (
    CAPTION_VIEWS,
    ViewTag,
    Vocabulary,
    alt_text,
    caption_view,
    near_duplicate_captions,
    token_count,
    tokenize_words,
)
from .dataset import (
    MultiTextSample,
    filter_captions,
    generate_dataset,
    ingest_jsonl,
    load_images,
)
from .scenes import LatentScene, generate_scene, read_ppm, render_image, write_ppm

__all__ = [
    "CAPTION_VIEWS",
    "LatentScene",
    "MultiTextSample",
    "ViewTag",
    "Vocabulary",
    "alt_text",
    "caption_view",
    "filter_captions",
    "generate_dataset",
    "generate_scene",
    "ingest_jsonl",
    "load_images",
    "near_duplicate_captions",
    "read_ppm",
    "render_image",
    "token_count",
    "tokenize_words",
    "write_ppm",
]
