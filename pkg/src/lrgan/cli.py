"""Command-line interface: train / generate / eval / ablate / gradcheck / inspect.

Exit codes: 0 success, 1 numerical or assertion failure, 2 usage/config error.
Every run writes an effective_config.json with all resolved values into its
output directory, so the run can be reproduced from that file alone.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import GRAD_TOL, run_gradcheck_suite
from .config import ConfigError, load_run_config, parse_run_config, write_effective_config
from .datasets import build_dataset
from .frechet import embed_and_stats, frechet_distance, load_stats, save_stats, symmetry_score
from .imageio import write_image
from .model import FrozenConvEmbedder
from .tensor import NumericsError, precision
from .trainer import (
    EVAL_EMBEDDER_DIM,
    EVAL_EMBEDDER_SEED,
    CheckpointError,
    TrainingError,
    load_checkpoint,
    read_checkpoint_entries,
    sample_images,
    train,
)

ABLATION_MODES = ("full", "no_meta", "no_lrm", "residual", "self_attention")


def _eval_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)])))


def _load_config_for(args):
    if getattr(args, "config", None):
        return load_run_config(args.config)
    ckpt = Path(args.ckpt)
    sibling = ckpt.parent / "effective_config.json"
    if not sibling.exists():
        raise ConfigError(
            f"no --config given and {sibling} not found next to the checkpoint"
        )
    with open(sibling, "r", encoding="utf-8") as fh:
        return parse_run_config(json.load(fh), base_dir=str(ckpt.parent))


def cmd_train(args):
    run = load_run_config(args.config)
    write_effective_config(run, run.out_dir)
    state, rows = train(run.train, resume_from=args.resume)
    last = rows[-1] if rows else {}
    print(
        f"trained {state.epoch} epochs; final d_loss={last.get('d_loss', 'n/a')} "
        f"g_loss={last.get('g_loss', 'n/a')}; artifacts in {run.out_dir}"
    )
    return 0


def cmd_generate(args):
    run = _load_config_for(args)
    cfg = run.train
    with precision(cfg.precision):
        state = load_checkpoint(args.ckpt, cfg)
        meta = build_dataset(cfg.data) if cfg.model.use_metadata else None
        rng = _eval_rng(args.seed)
        start = time.perf_counter()
        stacks = sample_images(state, cfg.model, args.n, rng, meta_images=meta)
        elapsed = time.perf_counter() - start
    out_dir = Path(args.out or Path(run.out_dir) / "generated")
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, stack in enumerate(stacks):
        for i in range(stack.shape[0]):
            write_image(stack[i], out_dir / f"stage{k}_sample{i:03d}.ppm")
    print(f"generated {args.n} samples per stage in {elapsed:.2f} s -> {out_dir}")
    return 0


def cmd_eval(args):
    run = _load_config_for(args)
    cfg = run.train
    with precision(cfg.precision):
        state = load_checkpoint(args.ckpt, cfg)
        if args.data:
            text = args.data if args.data.lstrip().startswith("{") else Path(args.data).read_text()
            data_run = parse_run_config({"data": json.loads(text), "model": run.effective["model"]})
            dataset = build_dataset(data_run.train.data)
        else:
            dataset = build_dataset(cfg.data)
        embedder = FrozenConvEmbedder(
            cfg.model.resolutions[-1], EVAL_EMBEDDER_DIM, EVAL_EMBEDDER_SEED, name="eval-embedder"
        )
        if args.stats_cache and Path(args.stats_cache).exists():
            data_stats = load_stats(args.stats_cache)
        else:
            data_stats = embed_and_stats(dataset[:512], embedder)
            if args.stats_cache:
                save_stats(data_stats, args.stats_cache)
        meta = dataset if cfg.model.use_metadata else None
        rng = _eval_rng(args.seed)
        tops = sample_images(state, cfg.model, args.n, rng, meta_images=meta)[-1]
        score = frechet_distance(embed_and_stats(tops, embedder), data_stats)
        mean_sym = float(np.mean([symmetry_score(img) for img in tops]))
    print(f"frechet_lite={score:.6f} mean_symmetry={mean_sym:.6f} over {args.n} samples")
    return 0


def cmd_ablate(args):
    run = load_run_config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ConfigError(f"modes: unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    base = Path(run.out_dir)
    summary = []
    for mode in modes:
        cfg = run.train
        mode_model = cfg.model.with_mode(mode)
        mode_cfg = replace(cfg, model=mode_model, out_dir=str(base / mode))
        doc = json.loads(json.dumps(run.effective))
        doc["model"].update(
            use_metadata=mode_model.use_metadata,
            use_lrm=mode_model.use_lrm,
            lrm_replacement=mode_model.lrm_replacement,
        )
        doc["out_dir"] = str(base / mode)
        (base / mode).mkdir(parents=True, exist_ok=True)
        with open(base / mode / "effective_config.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _, rows = train(mode_cfg)
        final = next((r["frechet_lite"] for r in reversed(rows) if r["frechet_lite"] != ""), "")
        summary.append((mode, final))
        print(f"mode {mode}: final frechet_lite={final}")
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "ablation_summary.csv", "w", encoding="utf-8") as fh:
        fh.write("mode,final_frechet_lite\n")
        for mode, final in summary:
            fh.write(f"{mode},{final}\n")
    width = max(len(m) for m, _ in summary)
    print(f"{'mode'.ljust(width)}  final_frechet_lite")
    for mode, final in summary:
        print(f"{mode.ljust(width)}  {final}")
    return 0


def cmd_gradcheck(args):
    results = run_gradcheck_suite()
    failed = False
    for name, err in results:
        status = "ok" if err <= GRAD_TOL else "FAIL"
        if err > GRAD_TOL:
            failed = True
        print(f"{name:<24} max_rel_err={err:.3e}  {status}")
    print(f"tolerance {GRAD_TOL:.0e}: {'FAILED' if failed else 'all passed'}")
    return 1 if failed else 0


def cmd_inspect(args):
    entries, _, epoch = read_checkpoint_entries(args.ckpt)
    groups = {}
    for name, arr in entries.items():
        if name.startswith("adam."):
            continue
        top = name.split(".", 1)[0]
        groups.setdefault(top, 0)
        groups[top] += arr.size
    print(f"checkpoint epoch {epoch}")
    print(f"{'component':<16} parameters")
    total = 0
    for top in sorted(groups):
        print(f"{top:<16} {groups[top]}")
        total += groups[top]
    lrm = sum(arr.size for name, arr in entries.items() if name.startswith("gen.longrange"))
    if lrm:
        print(f"{'gen.longrange':<16} {lrm} (included in gen)")
    print(f"{'total':<16} {total}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lrgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate samples from a checkpoint")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="frechet-lite and symmetry score of a checkpoint")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None, help="data section as inline JSON or a JSON file")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stats-cache", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train ablation modes and summarize")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--modes", default=",".join(ABLATION_MODES))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the float64 gradient-check suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="parameter counts of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (NumericsError, TrainingError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
