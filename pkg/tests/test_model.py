"""Model assembly: metadata encoding, generator/discriminator contracts, counts."""

import numpy as np
import pytest

import lrgan.tensor as T
from lrgan.gradcheck import grad_check
from lrgan.model import (
    Discriminator,
    FrozenConvEmbedder,
    Generator,
    ModelConfig,
    PrecomputedMetadata,
    build_discriminators,
    encode_metadata,
    param_breakdown,
    save_metadata_file,
)
from lrgan.layers import Conv2d
from lrgan.longrange import LongRangePair
from lrgan.tensor import ShapeError, Tensor, precision

SMALL = dict(stages=2, resolutions=(8, 16), channels=16, noise_dim=8, metadata_dim=4, lrm_resolution=8)


class _MapEmbedder:
    """Test double returning a fixed final feature map."""

    def __init__(self, feature_map):
        self.map = np.asarray(feature_map)

    def features(self, image):
        return self.map


def test_encode_metadata_averages_constant_map():
    emb = _MapEmbedder(np.stack([np.full((3, 3), 2.0), np.full((3, 3), -1.0)]))
    vec = encode_metadata(np.zeros((3, 8, 8)), emb)
    assert np.allclose(vec, [2.0, -1.0])


def test_encode_metadata_permutation_invariant():
    rng = np.random.default_rng(0)
    fmap = rng.standard_normal((4, 2, 3))
    flat = fmap.reshape(4, -1)
    perm = rng.permutation(6)
    emb_a = _MapEmbedder(fmap)
    emb_b = _MapEmbedder(flat[:, perm].reshape(4, 2, 3))
    img = np.zeros((3, 8, 8))
    assert np.allclose(encode_metadata(img, emb_a), encode_metadata(img, emb_b))


def test_frozen_embedder_deterministic_and_frozen():
    img = np.random.default_rng(1).uniform(-1, 1, (3, 32, 32)).astype(np.float32)
    a = FrozenConvEmbedder(32, 16, seed=5).embed(img)
    b = FrozenConvEmbedder(32, 16, seed=5).embed(img)
    assert np.array_equal(a, b)
    c = FrozenConvEmbedder(32, 16, seed=6).embed(img)
    assert not np.array_equal(a, c)


def test_frozen_embedder_resolution_check():
    emb = FrozenConvEmbedder(32, 8, seed=0)
    with pytest.raises(ShapeError):
        emb.embed(np.zeros((3, 16, 16)))


def test_frozen_embedder_batch_matches_single():
    rng = np.random.default_rng(2)
    batch = rng.uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)
    emb = FrozenConvEmbedder(16, 8, seed=3)
    stacked = emb.embed_batch(batch)
    for i in range(3):
        assert np.allclose(stacked[i], emb.embed(batch[i]), atol=1e-6)


def test_generator_stage_shapes_and_range():
    cfg = ModelConfig(**SMALL, seed=0)
    gen = Generator(cfg)
    rng = np.random.default_rng(3)
    z = Tensor(rng.standard_normal((2, cfg.noise_dim)))
    m = Tensor(rng.standard_normal((2, cfg.metadata_dim)))
    outs = gen(z, m)
    assert [img.shape for img in outs.images] == [(2, 3, 8, 8), (2, 3, 16, 16)]
    assert [f.shape[2] for f in outs.features] == [8, 16]
    for img in outs.images:
        assert np.all(img.data >= -1.0) and np.all(img.data <= 1.0)


def test_generator_deterministic_per_seed():
    cfg = ModelConfig(**SMALL, seed=9)
    z = np.random.default_rng(4).standard_normal((1, cfg.noise_dim))
    m = np.random.default_rng(5).standard_normal((1, cfg.metadata_dim))
    a = Generator(cfg)(Tensor(z), Tensor(m)).images[-1].data
    b = Generator(cfg)(Tensor(z), Tensor(m)).images[-1].data
    assert np.array_equal(a, b)


def test_generator_metadata_toggle_changes_only_stem_width():
    with_meta = Generator(ModelConfig(**SMALL, seed=0))
    without = Generator(ModelConfig(**{**SMALL, "use_metadata": False}, seed=0))
    delta = with_meta.param_count() - without.param_count()
    cfg = ModelConfig(**SMALL, seed=0)
    assert delta == cfg.metadata_dim * cfg.channels * 16


def test_generator_requires_metadata_when_configured():
    gen = Generator(ModelConfig(**SMALL, seed=0))
    z = Tensor(np.zeros((1, 8)))
    with pytest.raises(ShapeError, match="metadata"):
        gen(z, None)


def test_generator_lrm_insertion_and_replacements():
    cfg = ModelConfig(**SMALL, seed=0)
    assert isinstance(Generator(cfg).longrange, LongRangePair)
    none_cfg = ModelConfig(**{**SMALL, "use_lrm": False}, seed=0)
    assert Generator(none_cfg).longrange is None
    res_cfg = ModelConfig(**{**SMALL, "use_lrm": False, "lrm_replacement": "residual"}, seed=0)
    assert Generator(res_cfg).longrange is not None


def test_self_attention_replacement_at_zero_mix_equals_no_lrm():
    sa_cfg = ModelConfig(**{**SMALL, "use_lrm": False, "lrm_replacement": "self_attention"}, seed=4)
    no_cfg = ModelConfig(**{**SMALL, "use_lrm": False}, seed=4)
    rng = np.random.default_rng(6)
    z = Tensor(rng.standard_normal((2, 8)))
    m = Tensor(rng.standard_normal((2, 4)))
    sa_out = Generator(sa_cfg)(z, m).images[-1].data
    no_out = Generator(no_cfg)(z, m).images[-1].data
    assert np.array_equal(sa_out, no_out)


def test_discriminator_zero_head_gives_half_probability():
    disc = Discriminator(0, "t.disc", 16)
    disc.head.weight.data = np.zeros_like(disc.head.weight.data)
    disc.head.bias.data = np.zeros_like(disc.head.bias.data)
    logits = disc(Tensor(np.random.default_rng(7).standard_normal((3, 3, 16, 16))))
    assert np.allclose(logits.data, 0.0)
    assert np.allclose(1 / (1 + np.exp(-logits.data)), 0.5)


def test_discriminator_batch_shape_and_resolution_check():
    disc = Discriminator(1, "t.disc", 8)
    logits = disc(Tensor(np.zeros((5, 3, 8, 8))))
    assert logits.shape == (5,)
    with pytest.raises(ShapeError):
        disc(Tensor(np.zeros((1, 3, 16, 16))))


def test_discriminator_gradients_tiny_config():
    with precision("float64"):
        disc = Discriminator(2, "t.disc", 8, base=4, cap=8)
        x = Tensor(np.random.default_rng(8).standard_normal((2, 3, 8, 8)) * 0.5, requires_grad=True)
        params = list(disc.params().values()) + [x]
        err = grad_check(lambda: T.tsum(disc(x)), params)
    assert err <= 1e-5


def test_param_count_conv_hand_case():
    conv = Conv2d(0, "t.conv", 3, 8, k=3, bias=True)
    assert conv.param_count() == 3 * 8 * 9 + 8


def test_param_count_lrm_hand_case():
    pair = LongRangePair(0, "t.pair", 32, 16, proj_channels=4)
    assert pair.spatial.param_count() == 256 + 2 * (32 * 4)
    assert pair.spatial.param_count() == 512


def test_lrm_fraction_below_ten_percent_at_default():
    cfg = ModelConfig(seed=0)
    gen = Generator(cfg)
    counts = param_breakdown(gen, build_discriminators(cfg))
    assert counts["generator.longrange"] > 0
    assert counts["generator.longrange"] < 0.10 * counts["generator"]
    assert counts["total"] == counts["generator"] + sum(
        v for k, v in counts.items() if k.startswith("discriminator.")
    )


def test_model_config_validation():
    with pytest.raises(ValueError, match="double"):
        ModelConfig(stages=2, resolutions=(8, 24))
    with pytest.raises(ValueError, match="lrm_resolution"):
        ModelConfig(lrm_resolution=12)
    with pytest.raises(ValueError, match="lrm_replacement"):
        ModelConfig(use_lrm=True, lrm_replacement="residual")
    with pytest.raises(ValueError):
        ModelConfig(stages=1, resolutions=())


def test_metadata_file_roundtrip(tmp_path):
    vectors = np.random.default_rng(9).standard_normal((5, 7)).astype(np.float32)
    path = tmp_path / "meta.bin"
    save_metadata_file(vectors, path)
    loaded = PrecomputedMetadata.load(path)
    assert loaded.count == 5 and loaded.out_dim == 7
    assert np.array_equal(loaded.vectors, vectors)
    assert np.array_equal(loaded.vector(6), vectors[1])


def test_metadata_file_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMETA0" + b"\x00" * 8)
    with pytest.raises(ValueError, match="magic"):
        PrecomputedMetadata.load(path)
    good = tmp_path / "short.bin"
    vectors = np.zeros((2, 3), dtype=np.float32)
    save_metadata_file(vectors, good)
    good.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(ValueError, match="bytes"):
        PrecomputedMetadata.load(good)
