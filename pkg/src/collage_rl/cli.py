"""Command-line entry points: ``generate``, ``train`` and ``evaluate``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import agent as ag
from . import imageio, training
from .aesthetics import ScorerConfig
from .env import CollageEnv, EnvConfig, quick_init_baseline, trace_record, write_trace
from .errors import ConfigError, InvalidInputError, NumericError
from .geometry import Canvas, parse_aspect, rasterize, scale_state
from .training import METHODS, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("collage_rl")


class UsageError(Exception):
    pass


# -- config files -----------------------------------------------------------

_SECTIONS = {"env": EnvConfig, "train": TrainConfig, "scorer": ScorerConfig}


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, Fraction):
        return parse_aspect(raw) if ":" in raw else Fraction(raw)
    if isinstance(default, tuple):
        items = [x for x in raw.replace(" ", "").split(",") if x]
        kind = type(default[0]) if default else float
        return tuple(_coerce(x, kind(1) if kind is not Fraction else Fraction(1)) for x in items)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, dict[str, object]]:
    """``section.field = value`` lines; ``#`` starts a comment.

    Sections are ``env``, ``train`` and ``scorer``; ``env.scorer.x`` is an
    alias for ``scorer.x``.
    """
    out: dict[str, dict[str, object]] = {k: {} for k in _SECTIONS}
    defaults = {k: {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
                for k, cls in _SECTIONS.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        parts = key.split(".")
        if parts[:2] == ["env", "scorer"]:
            parts = parts[1:]
        if len(parts) != 2 or parts[0] not in _SECTIONS or parts[1] not in defaults[parts[0]] \
                or parts[1] == "scorer":
            raise UsageError(f"unknown config key {key!r}")
        section, name = parts
        try:
            out[section][name] = _coerce(value, defaults[section][name])
        except (ValueError, ZeroDivisionError, InvalidInputError) as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from None
    return out


def build_configs(config_path=None, **overrides) -> tuple[EnvConfig, TrainConfig]:
    values = {k: {} for k in _SECTIONS}
    if config_path is not None:
        values = parse_config_text(Path(config_path).read_text())
    for dotted, v in overrides.items():
        if v is not None:
            section, name = dotted.split("__")
            values[section][name] = v
    try:
        scorer = ScorerConfig(**values["scorer"])
        env = EnvConfig(scorer=scorer, **values["env"])
        train = TrainConfig(**values["train"])
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return env, train


def config_snapshot(env_cfg: EnvConfig, train_cfg: TrainConfig | None = None) -> dict:
    snap = {"env": json.loads(json.dumps(dataclasses.asdict(env_cfg), default=str))}
    if train_cfg is not None:
        snap["train"] = dataclasses.asdict(train_cfg)
    return snap


# -- manifests --------------------------------------------------------------

def content_hash(paths: Sequence[Path]) -> str:
    """Git-style: blob hash per file, then one hash over the sorted listing."""
    lines = []
    for p in sorted(paths):
        data = Path(p).read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        lines.append(f"{blob} {Path(p).name}")
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


def write_manifest(path, command: str, config: dict, inputs: Sequence[Path], seed: int,
                   outputs: Sequence[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "input_hash": content_hash(inputs),
        "seed": seed,
        "outputs": [str(p) for p in outputs],
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _dataset_files(root: Path) -> list[Path]:
    return sorted(p for sub in sorted(root.iterdir()) if sub.is_dir() for p in imageio.list_images(sub))


# -- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    try:
        aspect = parse_aspect(args.aspect)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    env_cfg, _ = build_configs(args.config, env__target_aspect=aspect)
    paths = imageio.list_images(args.input)
    images = imageio.load_image_set(args.input)
    out = Path(args.out)
    trace = []
    if args.checkpoint:
        params, meta = ag.load_checkpoint(args.checkpoint)
        env_cfg = dataclasses.replace(env_cfg, init=meta.get("env", {}).get("init", env_cfg.init))
        env = CollageEnv(images, env_cfg)
        state, obs = env.reset(args.seed)
        rec = ag.RecurrentState.zeros(params.config)
        while not env.is_done(state):
            masks = ag.legal_masks(state.phase, env.n_images, params.config)
            pol = ag.policy_forward(params, obs, rec, state.phase, masks)
            choice, _ = ag.greedy_action(pol.distribution)
            action = ag.choice_to_action(state.phase, choice, params.config)
            t = state.step_index
            state, res = env.step(state, action)
            obs, rec = res.observation, pol.state
            trace.append(trace_record(t, action, res))
    else:
        env = CollageEnv(images, env_cfg)
        state = quick_init_baseline(images, env_cfg, seed=args.seed, scorer=env.scorer)
        state, score = env.autocrop(state)
        ev = env.evaluate(state)
        trace.append({"step": 0, "action": {"type": "autocrop"}, "score": float(score),
                      "s_a": int(ev.proposal_count), "s_b": float(ev.blank_fraction),
                      "aesthetic_score": float(ev.aesthetic_score)})
    big = Canvas.from_aspect(aspect, args.size)
    pixels = rasterize(scale_state(state, big), images).pixels
    out.parent.mkdir(parents=True, exist_ok=True)
    imageio.save_png(pixels, out)
    trace_path = out.with_suffix(".trace.jsonl")
    write_trace(trace, trace_path)
    write_manifest(out.with_suffix(".manifest.json"), "generate", config_snapshot(env_cfg),
                   paths, args.seed, [out, trace_path])
    print(f"wrote {out} ({big.width_px}x{big.height_px})")
    return EXIT_OK


def cmd_train(args) -> int:
    # a shorter --max-epoch also shortens the sign-reward warm-up instead of failing validation
    _, file_cfg = build_configs(args.config)
    sign = None
    if args.max_epoch is not None:
        sign = min(file_cfg.sign_reward_epochs, max(args.max_epoch, 0))
    env_cfg, train_cfg = build_configs(args.config, train__max_epoch=args.max_epoch,
                                       train__seed=args.seed, train__sign_reward_epochs=sign)
    data = Path(args.data_dir)
    sets = list(imageio.load_dataset(data).values())
    out = Path(args.out)
    params, runlog = training.train(
        train_cfg, sets, env_cfg, out_dir=out,
        progress=lambda r: print(f"epoch {r['epoch']}: return {r['mean_return']:.3f} "
                                 f"aesthetic {r['mean_aesthetic_score']:.2f}"))
    ckpt = out / "checkpoint.npz"
    ag.save_checkpoint(params, ckpt, {"train": dataclasses.asdict(train_cfg),
                                      **config_snapshot(env_cfg)})
    runlog.write_csv(out / "runlog.csv")
    runlog.write_json(out / "runlog.json")
    write_manifest(out / "manifest.json", "train", config_snapshot(env_cfg, train_cfg),
                   _dataset_files(data), train_cfg.seed,
                   [ckpt, out / "runlog.csv", out / "runlog.json"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    env_cfg, _ = build_configs(args.config)
    params = None
    if args.checkpoint:
        params, meta = ag.load_checkpoint(args.checkpoint)
        env_cfg = dataclasses.replace(env_cfg, init=meta.get("env", {}).get("init", env_cfg.init))
    elif any(m != "baseline" for m in methods):
        raise UsageError("agent methods need --checkpoint")
    data = Path(args.data_dir)
    sets = list(imageio.load_dataset(data).values())
    table = training.evaluate(params, sets, env_cfg, methods, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    training.write_table_csv(table, out)
    write_manifest(out.with_suffix(".manifest.json"), "evaluate", config_snapshot(env_cfg),
                   _dataset_files(data), args.seed, [out])
    print(out.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collage-rl", description="Aspect-ratio collage generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="make one collage from a directory of images")
    g.add_argument("--input", required=True, help="directory with 2..15 PNG/JPEG images")
    g.add_argument("--aspect", required=True, help="target aspect ratio W:H")
    g.add_argument("--out", required=True, help="output PNG path")
    g.add_argument("--checkpoint", help="trained agent; omit to use quick init + AutoCrop")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=512, help="long side of the output in pixels")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an agent on a dataset of image sets")
    t.add_argument("data_dir", help="directory with one subdirectory per image set")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--max-epoch", type=int, help="override train.max_epoch")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare methods on a dataset")
    e.add_argument("data_dir")
    e.add_argument("--checkpoint")
    e.add_argument("--methods", default="baseline", help=f"comma list from {', '.join(METHODS)}")
    e.add_argument("--out", default="evaluation.csv")
    e.add_argument("--config")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, InvalidInputError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
