"""Alternating generator/discriminator training with deterministic state.

All randomness (noise, shuffling) flows through one PCG64 generator owned by
TrainState, so a run is reproducible from its seed and a resumed run is
bit-identical to an uninterrupted one in float64 mode. Checkpoints round-trip
parameters, optimizer moments, the RNG state, and the epoch counter exactly.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .datasets import build_dataset
from .frechet import embed_and_stats, frechet_distance
from .imageio import write_grid
from .model import FrozenConvEmbedder, Generator, ModelConfig, build_discriminators
from .objectives import LossWeights, color_consistency_loss, discriminator_loss, generator_loss
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .tensor import NumericsError, Tensor, precision

EVAL_EMBEDDER_SEED = 1000003
EVAL_EMBEDDER_DIM = 16
CHECKPOINT_MAGIC = b"LRGN"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
METRIC_FIELDS = ("epoch", "step", "d_loss", "g_loss", "color_loss", "frechet_lite")


class TrainingError(RuntimeError):
    """Training aborted; message carries epoch/step context."""


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


@dataclass
class TrainConfig:
    epochs: int
    model: ModelConfig = field(default_factory=ModelConfig)
    data: object = None
    batch_size: int = 16
    lr: float = 0.0002
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 10
    eval_every: int = 5
    eval_samples: int = 256
    out_dir: str | None = None
    precision: str = "float32"
    # GAN training is markedly more stable with a low first-moment decay
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")


@dataclass
class TrainState:
    generator: Generator
    discriminators: list
    embedder: FrozenConvEmbedder | None
    gen_params: dict
    disc_params: list
    adam_gen: AdamState
    adam_discs: list
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


def _train_rng(seed):
    ss = np.random.SeedSequence([int(seed), zlib.crc32(b"train-stream")])
    return np.random.Generator(np.random.PCG64(ss))


def init_train_state(config):
    mc = config.model
    generator = Generator(mc)
    discriminators = build_discriminators(mc)
    embedder = (
        FrozenConvEmbedder(mc.resolutions[-1], mc.metadata_dim, mc.seed) if mc.use_metadata else None
    )
    gen_params = generator.params()
    disc_params = [d.params() for d in discriminators]
    return TrainState(
        generator=generator,
        discriminators=discriminators,
        embedder=embedder,
        gen_params=gen_params,
        disc_params=disc_params,
        adam_gen=AdamState.for_params(
            list(gen_params.values()), lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2
        ),
        adam_discs=[
            AdamState.for_params(list(p.values()), lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2)
            for p in disc_params
        ],
        rng=_train_rng(config.seed),
    )


def downsample_reals(batch, resolutions):
    """Average-pool the top-resolution real batch down to every stage size."""
    stacks = {resolutions[-1]: np.asarray(batch)}
    cur = stacks[resolutions[-1]]
    side = resolutions[-1]
    while side > resolutions[0]:
        n, c, h, w = cur.shape
        cur = cur.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        side //= 2
        stacks[side] = cur
    return [stacks[r] for r in resolutions]


def train_step(state, config, real_batch, meta_batch):
    """One discriminator update then one generator update; returns step metrics."""
    mc = config.model
    reals = downsample_reals(real_batch, mc.resolutions)
    n = real_batch.shape[0]
    noise = Tensor(state.rng.standard_normal((n, mc.noise_dim)))
    metadata = None
    if mc.use_metadata:
        if meta_batch is None:
            raise TrainingError("model uses metadata but no meta batch was provided")
        metadata = Tensor(state.embedder.embed_batch(meta_batch))
    outs = state.generator(noise, metadata)

    real_logits = [disc(Tensor(r)) for disc, r in zip(state.discriminators, reals)]
    fake_detached = [disc(T.detach(img)) for disc, img in zip(state.discriminators, outs.images)]
    d_loss = discriminator_loss(real_logits, fake_detached)
    for params in state.disc_params:
        zero_grads(params.values())
    T.backward(d_loss)
    for params, adam in zip(state.disc_params, state.adam_discs):
        tensors = list(params.values())
        adam_step(tensors, collect_grads(tensors), adam)

    fake_logits = [disc(img) for disc, img in zip(state.discriminators, outs.images)]
    color_losses = [
        color_consistency_loss(outs.images[i], outs.images[i - 1], config.weights)
        for i in range(1, mc.stages)
    ]
    g_loss = generator_loss(fake_logits, color_losses, config.weights)
    zero_grads(state.gen_params.values())
    T.backward(g_loss)
    gen_tensors = list(state.gen_params.values())
    adam_step(gen_tensors, collect_grads(gen_tensors), state.adam_gen)

    color_total = float(sum(c.item() for c in color_losses)) if color_losses else 0.0
    return {"d_loss": d_loss.item(), "g_loss": g_loss.item(), "color_loss": color_total}


def sample_images(state, model_config, n, rng, meta_images=None, batch=64):
    """Generate n samples per stage; returns a list of (n, 3, R, R) arrays."""
    mc = model_config
    per_stage = [[] for _ in range(mc.stages)]
    done = 0
    while done < n:
        m = min(batch, n - done)
        noise = Tensor(rng.standard_normal((m, mc.noise_dim)))
        metadata = None
        if mc.use_metadata:
            if meta_images is None:
                raise TrainingError("model uses metadata but no meta images were provided")
            idx = (done + np.arange(m)) % len(meta_images)
            metadata = Tensor(state.embedder.embed_batch(meta_images[idx]))
        outs = state.generator(noise, metadata)
        for k, img in enumerate(outs.images):
            per_stage[k].append(img.data)
        done += m
    return [np.concatenate(chunks) for chunks in per_stage]


def _eval_rng(seed, epoch):
    ss = np.random.SeedSequence([int(seed), zlib.crc32(b"eval-stream"), int(epoch)])
    return np.random.Generator(np.random.PCG64(ss))


def evaluate_frechet_lite(state, config, dataset, eval_embedder, train_stats):
    rng = _eval_rng(config.seed, state.epoch)
    n = max(2, min(config.eval_samples, 4 * len(dataset)))
    tops = sample_images(state, config.model, n, rng, meta_images=dataset)[-1]
    return frechet_distance(embed_and_stats(tops, eval_embedder), train_stats), tops


def train(config, dataset=None, resume_from=None):
    """Run the training loop; returns (final state, metric rows).

    Metric rows mirror the CSV schema: one row per step, with frechet_lite
    filled on the last step of evaluation epochs and blank elsewhere.
    """
    with precision(config.precision):
        if dataset is None:
            if config.data is None:
                raise ValueError("train needs a dataset or a data spec in the config")
            dataset = build_dataset(config.data)
        dataset = np.asarray(dataset)
        top = config.model.resolutions[-1]
        if dataset.ndim != 4 or dataset.shape[1] != 3 or dataset.shape[2:] != (top, top):
            raise ValueError(f"dataset must be (N, 3, {top}, {top}), got {dataset.shape}")
        steps = len(dataset) // config.batch_size
        if steps < 1:
            raise ValueError(
                f"dataset of {len(dataset)} images is smaller than one batch of {config.batch_size}"
            )

        if resume_from is not None:
            state = load_checkpoint(resume_from, config)
        else:
            state = init_train_state(config)

        eval_embedder = FrozenConvEmbedder(top, EVAL_EMBEDDER_DIM, EVAL_EMBEDDER_SEED, name="eval-embedder")
        train_stats = embed_and_stats(dataset[:512], eval_embedder)

        out_dir = Path(config.out_dir) if config.out_dir else None
        writer = None
        csv_file = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            fresh = resume_from is None or not (out_dir / "metrics.csv").exists()
            csv_file = open(out_dir / "metrics.csv", "w" if fresh else "a", newline="")
            writer = csv.DictWriter(csv_file, fieldnames=METRIC_FIELDS)
            if fresh:
                writer.writeheader()

        rows = []
        try:
            for epoch in range(state.epoch + 1, config.epochs + 1):
                order = state.rng.permutation(len(dataset))
                meta_order = state.rng.permutation(len(dataset))
                for step in range(steps):
                    sl = slice(step * config.batch_size, (step + 1) * config.batch_size)
                    try:
                        metrics = train_step(state, config, dataset[order[sl]], dataset[meta_order[sl]])
                    except NumericsError as err:
                        raise TrainingError(f"aborted at epoch {epoch} step {step + 1}: {err}") from err
                    rows.append(
                        {
                            "epoch": epoch,
                            "step": step + 1,
                            "d_loss": f"{metrics['d_loss']:.6f}",
                            "g_loss": f"{metrics['g_loss']:.6f}",
                            "color_loss": f"{metrics['color_loss']:.6f}",
                            "frechet_lite": "",
                        }
                    )
                state.epoch = epoch
                if epoch == 1 or epoch == config.epochs or epoch % config.eval_every == 0:
                    score, tops = evaluate_frechet_lite(state, config, dataset, eval_embedder, train_stats)
                    rows[-1]["frechet_lite"] = f"{score:.6f}"
                    if out_dir is not None:
                        write_grid(tops[:16], out_dir / f"samples_epoch{epoch:04d}.ppm")
                if out_dir is not None and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
                    save_checkpoint(state, out_dir / f"ckpt_epoch{epoch:04d}.lrgn")
                if writer is not None:
                    start = len(state.history)
                    for row in rows[start:]:
                        writer.writerow(row)
                    csv_file.flush()
                state.history = list(rows)
            if out_dir is not None:
                save_checkpoint(state, out_dir / "ckpt_final.lrgn")
        finally:
            if csv_file is not None:
                csv_file.close()
        return state, rows


# -- checkpoint format ---------------------------------------------------------


def _state_entries(state):
    entries = {}
    for name, p in state.gen_params.items():
        entries[f"gen.{name}"] = p.data
    for k, params in enumerate(state.disc_params):
        for name, p in params.items():
            entries[f"disc{k}.{name}"] = p.data
    dtype = T.default_dtype()
    for group, params, adam in [("gen", state.gen_params, state.adam_gen)] + [
        (f"disc{k}", state.disc_params[k], state.adam_discs[k]) for k in range(len(state.disc_params))
    ]:
        for i, name in enumerate(params.keys()):
            entries[f"adam.{group}.m.{name}"] = adam.m[i]
            entries[f"adam.{group}.v.{name}"] = adam.v[i]
        entries[f"adam.{group}.t"] = np.array([adam.t], dtype=dtype)
    return entries


def save_checkpoint(state, path):
    """Serialize parameters, optimizer moments, RNG state, and epoch."""
    entries = _state_entries(state)
    blob = json.dumps(state.rng.bit_generator.state).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries.items():
            encoded = name.encode("utf-8")
            tag = _TAG_FOR_DTYPE.get(arr.dtype)
            if tag is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<B", tag))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", state.epoch))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated while reading {what} at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint_entries(path):
    """Raw (entries, rng_state, epoch) from a checkpoint file."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    version, count = reader.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "name").decode("utf-8")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        (tag,) = reader.unpack("<B", f"dtype of {name}")
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for tensor {name}")
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        raw = reader.take(nbytes, f"data of {name}")
        entries[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    (blob_len,) = reader.unpack("<I", "rng blob length")
    rng_state = json.loads(reader.take(blob_len, "rng blob").decode("utf-8"))
    (epoch,) = reader.unpack("<I", "epoch")
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: trailing data at offset {reader.pos}")
    return entries, rng_state, epoch


def load_checkpoint(path, config):
    """Rebuild a TrainState from a checkpoint; bit-exact inverse of save."""
    entries, rng_state, epoch = read_checkpoint_entries(path)
    state = init_train_state(config)
    expected = _state_entries(state)
    missing = sorted(set(expected) - set(entries))
    unexpected = sorted(set(entries) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: checkpoint does not match the configured model "
            f"(missing {missing[:3]}, unexpected {unexpected[:3]})"
        )
    dtype = T.default_dtype()
    for name, arr in entries.items():
        if arr.dtype != dtype:
            raise CheckpointError(
                f"{path}: tensor {name} stored as {arr.dtype} but run precision is {dtype}"
            )
        if arr.shape != expected[name].shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {arr.shape}, expected {expected[name].shape}"
            )

    for name, p in state.gen_params.items():
        p.data = entries[f"gen.{name}"]
    for k, params in enumerate(state.disc_params):
        for name, p in params.items():
            p.data = entries[f"disc{k}.{name}"]
    for group, params, adam in [("gen", state.gen_params, state.adam_gen)] + [
        (f"disc{k}", state.disc_params[k], state.adam_discs[k]) for k in range(len(state.disc_params))
    ]:
        for i, name in enumerate(params.keys()):
            adam.m[i] = entries[f"adam.{group}.m.{name}"]
            adam.v[i] = entries[f"adam.{group}.v.{name}"]
        adam.t = int(entries[f"adam.{group}.t"][0])
    state.rng = np.random.Generator(np.random.PCG64())
    state.rng.bit_generator.state = rng_state
    state.epoch = epoch
    return state
