"""Command-line entry point: ``m2mclip <subcommand> [flags]``.

Every subcommand reads an optional JSON config file (``--config``); flags
given on the command line override keys from the file. Exit status is 0 on
success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import _jit
from .data import CAPTION_VIEWS, ViewTag, Vocabulary, generate_dataset, ingest_jsonl, read_ppm
from .data.captions import near_duplicate_captions
from .data.diversity import diversity_report
from .encoders import ModelConfig, Variant, count_parameters
from .errors import M2MError, UsageError
from .evaluation import Fusion, FusionStrategy, attention_mask
from .experiments import evaluate
from .training import TrainConfig, TrainingData, load_checkpoint, params_as_tensors, save_checkpoint, train, write_metrics

log = logging.getLogger("m2mclip")

SUBCOMMANDS = ("gen-data", "train", "eval", "stats", "viz", "inspect")
CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "train_log.csv"
REPORT_NAME = "metrics.json"

_MODEL_KEYS = ("image_size", "patch_size", "width", "depth", "heads", "embed_dim", "branch_count", "ffn_dim", "text_depth", "mlp_expanded_blocks")
_TRAIN_KEYS = ("batch_size", "epochs", "learning_rate", "weight_decay", "warmup_steps", "reduction", "max_steps", "grouping_refresh")


@dataclasses.dataclass
class RunConfig:
    """Every key a config file may carry. Unknown keys are rejected."""

    seed: int = 0
    out: str = "."
    views: list | None = None
    # gen-data
    n: int = 100
    # model
    variant: str = "cls"
    image_size: int = 32
    patch_size: int = 4
    width: int = 64
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    branch_count: int | None = None
    ffn_dim: int | None = None
    text_depth: int | None = None
    mlp_expanded_blocks: int = 3
    # training
    manifest: str | None = None
    loss: str = "m2m"
    plan: str = "identity"
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    warmup_steps: int | None = None
    reduction: str = "mean_over_pairs"
    max_steps: int | None = None
    grouping_refresh: int = 1
    # eval / viz / inspect
    checkpoint: str | None = None
    fusion: str = "average"
    branches: list | None = None
    image: str | None = None
    branch: int = 0
    control: bool = False

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def model_config(self, vocab_size: int, n_views: int) -> ModelConfig:
        variant = Variant(self.variant)
        H = self.branch_count
        if H is None:
            H = 1 if variant is Variant.VANILLA else n_views
        kw = {k: getattr(self, k) for k in _MODEL_KEYS}
        kw.update(branch_count=H, variant=variant, vocab_size=vocab_size)
        return ModelConfig(**kw)

    def train_config(self) -> TrainConfig:
        kw = {k: getattr(self, k) for k in _TRAIN_KEYS}
        return TrainConfig(
            manifest=str(self.manifest),
            seed=self.seed,
            loss_kind=self.loss,
            plan_mode=self.plan,
            views=self.views,
            **kw,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def _int_list(text: str) -> list:
    try:
        return [int(s) for s in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--views", type=_csv_list, help="comma-separated view names")

    parser = _Parser(prog="m2mclip", description="Multi-branch contrastive image-text toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="render a synthetic multi-text dataset")
    p.add_argument("--n", type=int, help="number of scenes")
    p.add_argument("--image-size", dest="image_size", type=int)

    p = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--loss", choices=["o2o", "o2m", "m2m"])
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--plan", choices=["identity", "grouped", "free"])
    p.add_argument("--branch-count", dest="branch_count", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", dest="max_steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)

    p = sub.add_parser("eval", parents=[common], help="retrieval and zero-shot metrics as JSON")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--fusion", choices=[f.value for f in Fusion])
    p.add_argument("--branches", type=_int_list, help="comma-separated branch indices")

    p = sub.add_parser("stats", parents=[common], help="text-diversity report for a manifest")
    p.add_argument("--manifest")
    p.add_argument("--control", action="store_true", default=None, help="add a two-near-duplicate-caption control on the same scenes")

    p = sub.add_parser("viz", parents=[common], help="attention heatmap of one branch")
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="PPM image path")
    p.add_argument("--branch", type=int)

    p = sub.add_parser("inspect", parents=[common], help="checkpoint summary")
    p.add_argument("--checkpoint")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "command") and v is not None}
    return dataclasses.replace(cfg, **overrides)


def _require(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + m for m in missing))


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _vocab_from_checkpoint(ckpt):
    tokens = ckpt.extra.get("vocab")
    return None if tokens is None else Vocabulary(tokens[3:])


# ------------------------------------------------------------ commands ----


def cmd_gen_data(cfg: RunConfig) -> dict:
    views = cfg.views or [v.value for v in CAPTION_VIEWS]
    manifest = generate_dataset(cfg.n, views, cfg.seed, cfg.out, cfg.image_size)
    return {"manifest": str(manifest), "n": cfg.n, "views": views}


def cmd_train(cfg: RunConfig) -> dict:
    _require(cfg, "manifest")
    manifest = Path(cfg.manifest)
    vocab = Vocabulary.load(manifest.parent / "vocab.json") if (manifest.parent / "vocab.json").is_file() else None
    samples = ingest_jsonl(manifest, vocab)
    if vocab is None:
        vocab = Vocabulary.from_texts(t for s in samples for _, t in s.texts)
    n_views = len(cfg.views) if cfg.views else len(samples[0].texts)
    tc = cfg.train_config()
    mc = cfg.model_config(len(vocab), n_views)
    run = train(tc, mc, data=TrainingData(samples, manifest.parent, cfg.views))
    run.checkpoint.extra["vocab"] = [vocab.id_to_token[i] for i in range(len(vocab))]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run.checkpoint, out / CHECKPOINT_NAME)
    write_metrics(run.metrics, out / METRICS_NAME)
    last = run.metrics[-1] if run.metrics else None
    return {
        "checkpoint": str(out / CHECKPOINT_NAME),
        "log": str(out / METRICS_NAME),
        "steps": run.checkpoint.step,
        "final_loss": None if last is None else last[2],
    }


def cmd_eval(cfg: RunConfig) -> dict:
    _require(cfg, "checkpoint", "manifest")
    ckpt = load_checkpoint(cfg.checkpoint)
    strategy = FusionStrategy(cfg.fusion, tuple(cfg.branches) if cfg.branches else None)
    strategy.branches(ckpt.model_config.branch_count)
    report = evaluate(ckpt, cfg.manifest, strategy, _vocab_from_checkpoint(ckpt))
    _write_json(report, Path(cfg.out) / REPORT_NAME)
    return report


def cmd_stats(cfg: RunConfig) -> dict:
    _require(cfg, "manifest")
    samples = ingest_jsonl(cfg.manifest)
    if cfg.views:
        wanted = [ViewTag(v) for v in cfg.views]
        groups = [[(v, t) for v, t in s.texts if v in wanted] for s in samples]
    else:
        groups = [list(s.texts) for s in samples]
    report = {
        "scenes": len(samples),
        "views": diversity_report([[t for _, t in g] for g in groups], [[v.value for v, _ in g] for g in groups]),
    }
    if cfg.control:
        scenes = [s.scene for s in samples]
        if any(sc is None for sc in scenes):
            raise UsageError("--control needs a manifest with latent scenes")
        dup = [near_duplicate_captions(sc, sc.seed) for sc in scenes]
        report["near_duplicate_control"] = diversity_report(dup, [["details_a", "details_b"]] * len(dup))
    _write_json(report, Path(cfg.out) / "stats.json")
    return report


def cmd_viz(cfg: RunConfig) -> dict:
    _require(cfg, "checkpoint", "image")
    ckpt = load_checkpoint(cfg.checkpoint)
    image = read_ppm(cfg.image)
    prefix = Path(cfg.out) / f"attention_branch{cfg.branch}"
    result = attention_mask(image, cfg.branch, ckpt.model_config, params_as_tensors(ckpt), prefix)
    return {"mask": [int(i) for i in result["mask"]], "csv": result["csv"], "pgm": result["pgm"]}


def cmd_inspect(cfg: RunConfig) -> dict:
    _require(cfg, "checkpoint")
    ckpt = load_checkpoint(cfg.checkpoint)
    counts = count_parameters(ckpt.model_config)
    return {
        "model_config": ckpt.model_config.to_dict(),
        "step": ckpt.step,
        "parameters": counts,
        "views": ckpt.extra.get("views"),
        "plan": ckpt.extra.get("plan"),
        "tau": math.exp(-float(ckpt.params["logit_scale"])),
    }


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "viz": cmd_viz,
    "inspect": cmd_inspect,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS))
        cfg = resolve_config(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"m2mclip: error: {exc}", file=sys.stderr)
        return 1
    except (TypeError, ValueError) as exc:
        print(f"m2mclip: error: bad config value: {exc}", file=sys.stderr)
        return 1

    _jit.set_threads(int(os.environ.get("M2M_THREADS", "1")))
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"m2mclip: error: {exc}", file=sys.stderr)
        return 1
    except (M2MError, OSError, ValueError, KeyError) as exc:
        print(f"m2mclip: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
