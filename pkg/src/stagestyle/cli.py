"""Command-line entry point: caption, train, sample, transfer, mix, eval.

One command per process. Human summaries go to stdout; every failure prints a
single machine-parsable JSON record to stderr and exits nonzero with a stable
code: 2 for configuration/validation problems, 3 for I/O and file-format
problems, 4 for numeric failures. A flat INI config file can preset any flag
(sections [train], [sample], [transfer], [eval], [caption], [mix]); explicit
flags win. The effective configuration is echoed into a JSON metadata sidecar
next to every output file, so runs are reproducible from their artifacts.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import persistence, prompts, sampler, styletransfer, trainer
from .backend import IMAGE_SIZE, toy_backend
from .errors import (
    CheckpointError,
    IncompleteAssignmentError,
    NumericError,
    StageStyleError,
    ValidationError,
)
from .stagespace import mix_styles

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_BACKENDS = {"toy": toy_backend}

_STRUCTURE_FLAGS = {
    "depth": styletransfer.MODALITY_DEPTH,
    "edge": styletransfer.MODALITY_EDGE,
    "seg": styletransfer.MODALITY_SEGMENTATION,
    "none": styletransfer.MODALITY_NONE,
}


def load_image(path: str | Path, size: int | None = IMAGE_SIZE) -> np.ndarray:
    """Load an image file as float RGB in [0, 1], resized for the toy backend."""
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None and img.size != (size, size):
            img = img.resize((size, size), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write a float image in [0, 1] as a lossless PNG."""
    from PIL import Image

    data = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def _write_sidecar(out_path: str | Path, payload: dict) -> None:
    Path(str(out_path) + ".json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def parse_assignment(text: str, num_stages: int) -> dict[int, str]:
    """Parse a mix assignment like "0-2:A,3-5:B" into {stage: name}.

    Ranges are inclusive and must partition [0, num_stages) without overlap.
    """
    assignment: dict[int, str] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            span, name = part.split(":", 1)
            if "-" in span:
                lo_s, hi_s = span.split("-", 1)
                lo, hi = int(lo_s), int(hi_s)
            else:
                lo = hi = int(span)
        except ValueError as exc:
            raise ValidationError(f"bad assignment fragment {part!r} (expected 'lo-hi:NAME')") from exc
        if lo > hi:
            raise ValidationError(f"assignment range {lo}-{hi} is inverted")
        name = name.strip()
        if not name:
            raise ValidationError(f"assignment fragment {part!r} has an empty style name")
        for k in range(lo, hi + 1):
            if k in assignment:
                raise IncompleteAssignmentError(f"stage {k} assigned more than once")
            assignment[k] = name
    missing = [k for k in range(num_stages) if k not in assignment]
    if missing:
        raise IncompleteAssignmentError(f"assignment missing stages {missing} of [0, {num_stages})")
    extra = [k for k in assignment if k >= num_stages]
    if extra:
        raise IncompleteAssignmentError(f"assignment names stages {extra} beyond [0, {num_stages})")
    return assignment


def _config_defaults(path: str | None, section: str) -> dict[str, str]:
    if not path:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    out: dict[str, str] = {}
    if parser.has_section(section):
        out.update(parser.items(section))
    return out


def _make_backend(name: str, seed: int):
    if name not in _BACKENDS:
        raise ValidationError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    return _BACKENDS[name](seed)


# ----------------------------------------------------------------------------
# subcommands


def cmd_caption(args) -> int:
    image_path = Path(args.image)
    image_bytes = image_path.read_bytes()
    if args.fixtures:
        fixtures = json.loads(Path(args.fixtures).read_text(encoding="utf-8"))
        client = prompts.FixtureCaptioner(fixtures)
    elif args.endpoint:
        client = prompts.HttpCaptioner(args.endpoint)
    else:
        raise ValidationError("caption needs --fixtures FILE or --endpoint URL")
    record = prompts.fetch_caption(
        client, image_path.name, image_bytes, instruction=args.instruction, retries=args.retries
    )
    print(f"auto caption: {record.auto_caption}")
    if not args.no_input:
        sys.stdout.flush()
        answer = input("refined caption (empty keeps auto): ").strip()
        if answer:
            record = prompts.refine_caption(record, answer)
    sidecar = prompts.caption_sidecar_path(image_path)
    prompts.write_caption_sidecar(sidecar, record)
    print(f"effective caption ({record.source}): {record.effective_caption}")
    print(f"wrote {sidecar}")
    return 0


def _load_dataset(args) -> trainer.StyleDataset:
    images = []
    captions = {}
    inline = list(args.caption_inline or [])
    if inline and len(inline) != len(args.image):
        raise ValidationError(
            f"--caption-inline given {len(inline)} times for {len(args.image)} images"
        )
    for idx, path in enumerate(args.image):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"style image not found: {path}")
        image_id = path.name
        images.append(trainer.StyleImage(image_id, load_image(path)))
        if inline:
            captions[image_id] = prompts.CaptionRecord(image_id, auto_caption="", refined_caption=inline[idx])
        else:
            sidecar = prompts.caption_sidecar_path(path)
            if not sidecar.exists():
                raise FileNotFoundError(
                    f"caption sidecar not found: {sidecar} (run 'caption' first or pass --caption-inline)"
                )
            captions[image_id] = prompts.read_caption_sidecar(sidecar, image_id)
    return trainer.StyleDataset(tuple(images), captions)


def cmd_train(args) -> int:
    # fail fast: validate the full configuration before touching any files
    config = trainer.TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        stage_count=args.stages,
        opening=args.opening,
    )
    backend = _make_backend(args.backend, args.backend_seed)
    dataset = _load_dataset(args)
    log_handle = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        on_step = None
        if log_handle is not None:
            def on_step(record: dict) -> None:
                log_handle.write(json.dumps(record, sort_keys=True) + "\n")
        checkpoint = trainer.train(backend, dataset, config, on_step=on_step)
    finally:
        if log_handle is not None:
            log_handle.close()
    checkpoint = checkpoint.with_metadata(
        backend_name=args.backend, backend_seed=args.backend_seed
    )
    persistence.save(checkpoint, args.out)
    losses = checkpoint.metadata["loss_history"]
    summary = {
        "checkpoint": str(args.out),
        "steps": config.steps,
        "stages": config.stage_count,
        "images": len(dataset.images),
        "first_loss": losses[0] if losses else None,
        "last_loss": losses[-1] if losses else None,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _scales(args) -> sampler.GuidanceScales:
    return sampler.GuidanceScales(args.lambda_n, args.lambda_s, args.lambda_c)


def cmd_sample(args) -> int:
    checkpoint = persistence.load(args.checkpoint)
    backend_seed = args.backend_seed
    if backend_seed is None:
        backend_seed = int(checkpoint.metadata.get("backend_seed", 0))
    backend = _make_backend(args.backend, backend_seed)
    bundle = prompts.PromptBundle(args.prompt_opening, args.prompt_context)
    result = sampler.sample(
        backend,
        checkpoint,
        bundle,
        scales=_scales(args),
        num_steps=args.steps,
        seed=args.seed,
    )
    save_image(result.image, args.out)
    _write_sidecar(args.out, {**result.metadata, "checkpoint": str(args.checkpoint),
                              "backend": args.backend, "backend_seed": backend_seed})
    print(f"wrote {args.out} ({result.metadata['prompt']!r}, {args.steps} steps, seed {args.seed})")
    return 0


def cmd_transfer(args) -> int:
    checkpoint = persistence.load(args.checkpoint)
    backend_seed = args.backend_seed
    if backend_seed is None:
        backend_seed = int(checkpoint.metadata.get("backend_seed", 0))
    backend = _make_backend(args.backend, backend_seed)
    content = load_image(args.content)
    config = styletransfer.TransferConfig(strength=args.strength, scales=_scales(args), seed=args.seed)
    result = styletransfer.transfer(
        backend,
        checkpoint,
        content,
        config,
        structure=_STRUCTURE_FLAGS[args.structure],
        bundle=prompts.PromptBundle(args.prompt_opening, args.prompt_context),
    )
    save_image(result.image, args.out)
    _write_sidecar(args.out, {**result.metadata, "checkpoint": str(args.checkpoint),
                              "content": str(args.content), "backend": args.backend,
                              "backend_seed": backend_seed})
    print(
        f"wrote {args.out} (strength {args.strength} -> t={result.start_timestep}, "
        f"structure {result.metadata['structure_modality']})"
    )
    return 0


def cmd_mix(args) -> int:
    sources = {}
    for spec_arg in args.source:
        if "=" not in spec_arg:
            raise ValidationError(f"source {spec_arg!r} must look like NAME=checkpoint.json")
        name, path = spec_arg.split("=", 1)
        sources[name.strip()] = persistence.load(path)
    if len(sources) < 2:
        raise ValidationError("mix needs at least two NAME=PATH sources")
    first = next(iter(sources.values()))
    assignment = parse_assignment(args.assign, first.schedule.num_stages)
    tables = {name: ckpt.table() for name, ckpt in sources.items()}
    mixed_table = mix_styles(tables, assignment)
    mixed = persistence.StyleCheckpoint.from_table(
        mixed_table,
        first.tokens,
        {
            "mixed_from": {name: ckpt.metadata for name, ckpt in sources.items()},
            "assignment": {str(k): v for k, v in sorted(assignment.items())},
            "backend_seed": first.metadata.get("backend_seed", 0),
        },
    )
    persistence.save(mixed, args.out)
    print(f"wrote {args.out} (stages {args.assign})")
    return 0


def cmd_eval(args) -> int:
    rows = metrics_mod.read_manifest(args.manifest)
    backends = metrics_mod.MetricBackends.toy(args.seed)
    table = metrics_mod.evaluate_manifest(rows, backends)
    print(metrics_mod.format_report(table))
    if args.report:
        metrics_mod.write_report(table, args.report)
        print(f"wrote {args.report}")
    failed = [r for r in table.rows if r.error is not None]
    if failed:
        print(f"{len(failed)} of {len(table.rows)} rows had errors (see report)")
    return 0


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagestyle",
        description="Staged textual-embedding style personalization on a toy diffusion backend.",
    )
    parser.add_argument("--config", help="INI config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("caption", help="fetch an automatic caption and refine it interactively")
    p.add_argument("image")
    p.add_argument("--fixtures", help="JSON file mapping sha256 digests to captions (offline stub)")
    p.add_argument("--endpoint", help="HTTP captioner endpoint")
    p.add_argument("--instruction", default=None)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--no-input", action="store_true", help="skip the interactive refinement prompt")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("train", help="optimize stage embeddings for style image(s)")
    p.add_argument("--image", action="append", required=True, help="style image (repeatable)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--caption-inline", action="append", help="context caption per --image (skips sidecars)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--stages", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--opening", default="a painting")
    p.add_argument("--backend", default="toy")
    p.add_argument("--backend-seed", type=int, default=0)
    p.add_argument("--log", help="JSONL per-step progress log path")
    p.set_defaults(func=cmd_train)

    def add_sampling_flags(p, with_steps=True):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--prompt-opening", default="a painting")
        p.add_argument("--prompt-context", default="")
        if with_steps:
            p.add_argument("--steps", type=int, default=50)
        p.add_argument("--lambda-n", type=float, default=7.5)
        p.add_argument("--lambda-s", type=float, default=0.0)
        p.add_argument("--lambda-c", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--backend", default="toy")
        p.add_argument("--backend-seed", type=int, default=None,
                       help="defaults to the seed recorded in the checkpoint")

    p = sub.add_parser("sample", help="guided text-to-image sampling")
    add_sampling_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("transfer", help="style transfer onto a content image")
    add_sampling_flags(p, with_steps=False)
    p.add_argument("--content", required=True)
    p.add_argument("--strength", type=float, default=0.7)
    p.add_argument("--structure", choices=sorted(_STRUCTURE_FLAGS), default="depth")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("mix", help="compose a new style from trained checkpoints per stage")
    p.add_argument("source", nargs="+", help="NAME=checkpoint.json")
    p.add_argument("--assign", required=True, help='e.g. "0-2:A,3-5:B" (inclusive stage ranges)')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("eval", help="score generated images against prompts and style references")
    p.add_argument("--manifest", required=True, help="JSONL with image_path, prompt, style_path")
    p.add_argument("--report", help="JSON report output path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    return parser


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> argparse.Namespace:
    # first parse to find --config and the subcommand, then re-parse with defaults
    args = parser.parse_args(argv)
    if args.config:
        defaults = _config_defaults(args.config, args.command)
        if defaults:
            sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
            subparser = sub_actions[0].choices[args.command]
            known = {a.dest for a in subparser._actions}
            typed = {}
            for key, value in defaults.items():
                dest = key.replace("-", "_")
                if dest not in known:
                    raise ValidationError(f"config key {key!r} unknown for command {args.command!r}")
                typed[dest] = value
            subparser.set_defaults(**{k: _coerce_like(subparser, k, v) for k, v in typed.items()})
            args = parser.parse_args(argv)
    return args


def _coerce_like(subparser, dest: str, value: str):
    for action in subparser._actions:
        if action.dest == dest and action.type is not None:
            return action.type(value)
    return value


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(argv, parser)
        return args.func(args)
    except ValidationError as exc:
        _fail("validation", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        _fail("numeric", exc)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        _fail("io", exc)
        return EXIT_IO
    except StageStyleError as exc:
        _fail("error", exc)
        return EXIT_CONFIG


def _fail(kind: str, exc: Exception) -> None:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
