"""Command-line entry point: ``maskfuse {dataset,mask-prep,train,sample,eval}``.

Every subcommand takes ``--config path.json``; explicit flags override the
file, which overrides the built-in defaults. The merged configuration is
validated before anything is written. Errors are reported on stderr as one
JSON object and mapped to a nonzero exit code.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import mask_ops
from .checkpoint import load_model, load_training_state, save_training_state
from .data_synth import generate_dataset, load_dataset, manifest_hash
from .diffusion.sampling import GuidanceConfig, sample
from .diffusion.schedule import build_schedule
from .diffusion.training import (
    build_conditioning,
    config_from_dict,
    new_state,
    prepare_dataset,
    train,
    write_loss_log,
)
from .errors import CheckpointError, ConfigurationError, MaskfuseError, NumericError, ParseError, ValidationError
from .metrics import accumulate_stats, frechet_distance, inception_score, mean_of_score
from .pnm import read_image, read_mask, write_image, write_mask

log = logging.getLogger("maskfuse")

EXIT_CODES = {
    ConfigurationError: 2,
    ValidationError: 2,
    ParseError: 3,
    CheckpointError: 4,
    NumericError: 5,
}

DEFAULTS = {
    "dataset": {"n": 100, "size": 16, "patch_size": 4, "latent_factor": 2, "seed": 0},
    "mask-prep": {"patch_size": 16, "tau": -1, "factor": 8, "vote": 0.5},
    "sample": {"scale": 7.5, "ddim_steps": 30, "seed": 0},
    "eval": {"features": "pixel", "feature_dim": 32, "seed": 0},
}


def thread_limit():
    raw = os.environ.get("MASKFUSE_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"MASKFUSE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"MASKFUSE_THREADS must be a positive integer, got {n}")
    return n


def load_config_file(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return data


def merged(args, command, keys):
    """defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS.get(command, {}))
    cfg.update(load_config_file(args.config))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigurationError(f"missing required setting(s): {', '.join(missing)}")


# -- dataset ----------------------------------------------------------------


def cmd_dataset(args):
    cfg = merged(args, "dataset", ("out", "n", "size", "patch_size", "latent_factor", "seed"))
    require(cfg, "out")
    n, size = int(cfg["n"]), int(cfg["size"])
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    for k in ("patch_size", "latent_factor"):
        if int(cfg[k]) < 1 or size % int(cfg[k]):
            raise ConfigurationError(f"size {size} is not divisible by {k} {cfg[k]}")
    manifest = generate_dataset(n, int(cfg["seed"]), cfg["out"], size=size, workers=thread_limit() or 1)
    digest = manifest_hash(Path(cfg["out"]) / "manifest.json")
    return {"written": manifest["n"], "out": str(cfg["out"]), "manifest_sha256": digest}


# -- mask-prep --------------------------------------------------------------


def cmd_mask_prep(args):
    cfg = merged(args, "mask-prep", ("mask", "out", "patch_size", "tau", "factor", "vote"))
    require(cfg, "mask", "out")
    p, f = int(cfg["patch_size"]), int(cfg["factor"])
    tau = mask_ops.default_threshold(p) if int(cfg["tau"]) == -1 else int(cfg["tau"])
    if p < 1 or f < 1 or not 0 <= tau <= p * p:
        raise ConfigurationError(f"need patch size, factor >= 1 and 0 <= tau <= {p * p}")
    if not 0.0 <= float(cfg["vote"]) <= 1.0:
        raise ConfigurationError("vote threshold must lie in [0, 1]")
    mask = read_mask(cfg["mask"])
    patch = mask_ops.rebinarize_patches(mask, p, tau)
    latent = mask_ops.derive_latent_mask(mask, f, float(cfg["vote"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_mask(out / "patch.pgm", patch)
    write_mask(out / "latent.pgm", latent)
    return {"patch": str(out / "patch.pgm"), "latent": str(out / "latent.pgm"), "tau": tau,
            "kept_patches": int(mask_ops.patch_bits(patch, p).sum())}


# -- train ------------------------------------------------------------------


def train_config(args):
    raw = load_config_file(args.config)
    paths = {k: raw.pop(k, None) for k in ("data", "out", "resume")}
    try:
        config = config_from_dict(raw)
    except TypeError as exc:
        raise ConfigurationError(f"bad training config: {exc}") from None
    for k in ("steps", "lr", "batch_size", "seed", "save_every", "weight_decay"):
        v = getattr(args, k)
        if v is not None:
            setattr(config, k, v)
    if args.compress is not None:
        config.model.compress = args.compress
    for k in ("data", "out", "resume"):
        if getattr(args, k) is not None:
            paths[k] = getattr(args, k)
    require(paths, "data", "out")
    return config.validate(), paths


def cmd_train(args):
    config, paths = train_config(args)
    data = Path(paths["data"])
    if not (data / "manifest.json").exists():
        raise ConfigurationError(f"no dataset at {data} (manifest.json missing)")
    state = load_training_state(paths["resume"], config) if paths["resume"] else new_state(config)
    images, masks, specs = load_dataset(data)
    dataset = prepare_dataset(images, masks, specs, config)

    out = Path(paths["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt, loss_csv = out / "checkpoint.bin", out / "loss.csv"
    logged = {"n": 0, "append": bool(paths["resume"])}

    def on_save(st):
        save_training_state(ckpt, st, config)
        write_loss_log(loss_csv, st.history[logged["n"]:], append=logged["append"])
        logged["n"], logged["append"] = len(st.history), True

    start = state.step
    state = train(config, dataset, state, on_save=on_save)
    losses = [h[1] for h in state.history]
    head = float(np.mean(losses[: min(100, len(losses))])) if losses else None
    tail = float(np.mean(losses[-min(100, len(losses)):])) if losses else None
    return {"checkpoint": str(ckpt), "loss_csv": str(loss_csv), "start_step": start, "step": state.step,
            "initial_loss": head, "final_loss": tail}


# -- sample -----------------------------------------------------------------


def _named_mask(name, size):
    m = np.zeros((size, size), dtype=np.uint8)
    if name == "full":
        m[:] = 1
    elif name == "left-half":
        m[:, : size // 2] = 1
    elif name == "right-half":
        m[:, size // 2:] = 1
    elif name != "empty":
        raise ConfigurationError(f"unknown named mask {name!r}")
    return m


def _color(value, what):
    c = np.asarray(value, dtype=np.float64)
    if c.shape != (3,) or (c < 0).any() or (c > 1).any():
        raise ConfigurationError(f"{what} must be three numbers in [0, 1], got {value!r}")
    return c


def resolve_prompts(path, size, channels):
    """Read a prompt list; each entry gives ``text_color``, an image prompt and a mask."""
    try:
        prompts = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read prompts {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"prompts {path} are not valid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(prompts, list) or not prompts:
        raise ConfigurationError("prompt file must hold a non-empty JSON list")
    base = Path(path).parent
    refs, masks, texts, resolved = [], [], [], []
    for i, p in enumerate(prompts):
        entry = {"text_color": _color(p.get("text_color"), f"prompt {i} text_color").tolist()}
        if "image" in p:
            ref = read_image(base / p["image"])
            entry["image"] = p["image"]
        elif "image_color" in p:
            c = _color(p["image_color"], f"prompt {i} image_color")
            ref = np.broadcast_to(2.0 * c - 1.0, (size, size, channels)).copy()
            entry["image_color"] = c.tolist()
        else:
            raise ConfigurationError(f"prompt {i} needs an 'image' path or an 'image_color'")
        if ref.shape != (size, size, channels):
            raise ConfigurationError(f"prompt {i} reference has shape {ref.shape}, model wants {(size, size, channels)}")
        m = p.get("mask", "full")
        if m in ("full", "empty", "left-half", "right-half"):
            mask = _named_mask(m, size)
        else:
            mask = read_mask(base / m)
            if mask.shape != (size, size):
                raise ConfigurationError(f"prompt {i} mask has shape {mask.shape}, expected {(size, size)}")
        entry["mask"] = m
        refs.append(ref)
        masks.append(mask)
        texts.append(entry["text_color"])
        resolved.append(entry)
    return refs, masks, texts, resolved


def cmd_sample(args):
    cfg = merged(args, "sample", ("checkpoint", "prompts", "out", "scale", "ddim_steps", "seed"))
    require(cfg, "checkpoint", "prompts", "out")
    guidance = GuidanceConfig(float(cfg["scale"]), int(cfg["ddim_steps"]))
    model, manifest, _ = load_model(cfg["checkpoint"])
    schedule = build_schedule(int(manifest["schedule"]["T"]), manifest["schedule"].get("kind", "linear-beta"))
    guidance.validate(schedule.T)
    mc = model.config
    refs, masks, texts, resolved = resolve_prompts(cfg["prompts"], mc.image_size, mc.channels)
    saved = config_from_dict(manifest["train_config"])
    cond = build_conditioning(refs, masks, texts, mc, saved.tau, saved.vote_threshold)
    images = sample(model, cond, guidance, int(cfg["seed"]), schedule)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"sample_{i:05d}.ppm"
        write_image(out / name, img)
        write_mask(out / f"mask_{i:05d}.pgm", masks[i])
        names.append(name)
    sidecar = {
        "seed": int(cfg["seed"]),
        "scale": guidance.scale,
        "ddim_steps": guidance.ddim_steps,
        "checkpoint": str(cfg["checkpoint"]),
        "samples": [dict(r, file=n) for r, n in zip(resolved, names)],
    }
    (out / "prompts.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return {"written": len(names), "out": str(out)}


# -- eval -------------------------------------------------------------------


def _images_in(path, what):
    files = sorted(p for p in Path(path).iterdir() if p.suffix in (".ppm", ".pgm") and not p.name.startswith("mask_"))
    if not files:
        raise ConfigurationError(f"{what} directory {path} holds no images")
    return files, np.stack([read_image(f) for f in files])


def image_features(images, kind, dim=32, seed=0):
    """Per-image feature vectors.

    ``pixel``: colors average-pooled to a 4 x 4 grid (48 values for RGB).
    ``random-projection``: all pixels through a fixed Gaussian map to ``dim``.
    """
    images = np.asarray(images, dtype=np.float64)
    n, h, w, c = images.shape
    if kind == "pixel":
        g = 4 if h % 4 == 0 and w % 4 == 0 else 1
        return images.reshape(n, g, h // g, g, w // g, c).mean(axis=(2, 4)).reshape(n, -1)
    if kind == "random-projection":
        proj = np.random.default_rng([seed, h, w, c]).normal(size=(h * w * c, dim)) / np.sqrt(h * w * c)
        return images.reshape(n, -1) @ proj
    raise ConfigurationError(f"unknown feature kind {kind!r}; use 'pixel' or 'random-projection'")


def region_agreement(images, masks, targets):
    """Mean absolute difference between masked-region mean color (in [0, 1]) and target color."""
    diffs = []
    for img, m, tgt in zip(images, masks, targets):
        if m.sum() == 0:
            continue
        mean = ((img[m == 1] + 1.0) / 2.0).mean(axis=0)
        diffs.append(np.abs(mean - tgt).mean())
    if not diffs:
        raise ValidationError("no image has a non-empty masked region")
    return float(np.mean(diffs))


def _load_json_values(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read {what} file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} file {path} is not valid JSON: {exc.msg}", offset=exc.pos) from None


def cmd_eval(args):
    cfg = merged(args, "eval", ("gen", "ref", "masks", "probs", "scores", "out", "features", "feature_dim", "seed"))
    require(cfg, "gen", "ref", "out")
    if cfg["features"] not in ("pixel", "random-projection"):
        raise ConfigurationError(f"unknown feature kind {cfg['features']!r}")
    gen_files, gen = _images_in(cfg["gen"], "generated")
    _, ref = _images_in(cfg["ref"], "reference")
    if len(gen) < 2 or len(ref) < 2:
        raise ValidationError("the Fréchet distance needs at least two images per set")
    kind, dim, seed = cfg["features"], int(cfg["feature_dim"]), int(cfg["seed"])
    fa = accumulate_stats(image_features(gen, kind, dim, seed))
    fb = accumulate_stats(image_features(ref, kind, dim, seed))
    report = {"n_generated": len(gen), "n_reference": len(ref), "features": kind,
              "frechet_distance": frechet_distance(fa, fb)}
    if cfg.get("probs"):
        report["inception_score"] = inception_score(_load_json_values(cfg["probs"], "probability"))
    if cfg.get("scores"):
        report["mean_of_score"] = mean_of_score(_load_json_values(cfg["scores"], "score"))
    mask_dir = cfg.get("masks")
    if mask_dir:
        mask_files = sorted(Path(mask_dir).glob("mask_*.pgm"))
        if len(mask_files) != len(gen):
            raise ValidationError(f"{len(mask_files)} masks for {len(gen)} generated images")
        masks = [read_mask(f) for f in mask_files]
        sidecar = Path(cfg["gen"]) / "prompts.json"
        if sidecar.exists():
            entries = {e["file"]: e for e in json.loads(sidecar.read_text())["samples"]}
            targets = [entries.get(f.name, {}).get("image_color") for f in gen_files]
        else:
            targets = [None] * len(gen)
        # without an explicit image color the target is the reference's own masked-region mean
        resolved = []
        for i, tgt in enumerate(targets):
            if tgt is None:
                r = ref[i % len(ref)]
                tgt = ((r[masks[i] == 1] + 1.0) / 2.0).mean(axis=0) if masks[i].any() else np.zeros(3)
            resolved.append(np.asarray(tgt, dtype=np.float64))
        report["region_color_agreement"] = region_agreement(gen, masks, resolved)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1, sort_keys=True))
    if out.suffix == ".json":
        with out.with_suffix(".csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in sorted(report.items()):
                w.writerow([k, v])
    return report


# -- wiring -----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="maskfuse", description="Mask-controlled text+image prompt diffusion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config; explicit flags take precedence")
        p.set_defaults(fn=fn)
        return p

    p = add("dataset", cmd_dataset, "generate the synthetic scene dataset")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--latent-factor", type=int)
    p.add_argument("--seed", type=int)

    p = add("mask-prep", cmd_mask_prep, "derive patch and latent masks from a pixel mask")
    p.add_argument("--mask")
    p.add_argument("--out")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--tau", type=int, help="zero-count threshold; -1 means half the patch")
    p.add_argument("--factor", type=int)
    p.add_argument("--vote", type=float)

    p = add("train", cmd_train, "train the denoiser")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--save-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--compress", action=argparse.BooleanOptionalAction, default=None)

    p = add("sample", cmd_sample, "generate images from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--prompts", help="JSON list of prompt entries")
    p.add_argument("--out")
    p.add_argument("--scale", type=float)
    p.add_argument("--ddim-steps", type=int)
    p.add_argument("--seed", type=int)

    p = add("eval", cmd_eval, "score generated images")
    p.add_argument("--gen")
    p.add_argument("--ref")
    p.add_argument("--masks")
    p.add_argument("--probs", help="JSON n x K class-probability rows")
    p.add_argument("--scores", help="JSON list of opinion scores")
    p.add_argument("--out")
    p.add_argument("--features")
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        limit = thread_limit()
        with threadpool_limits(limits=limit):
            result = args.fn(args)
    except MaskfuseError as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("offset", "step"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        print(json.dumps(payload), file=sys.stderr)
        return code
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
