import dataclasses

import numpy as np
import pytest

from m2mclip import autograd as ag
from m2mclip.encoders import (
    EOT_ID,
    ModelConfig,
    Temperature,
    Variant,
    count_parameters,
    encode_image_cls,
    encode_image_mlp,
    encode_image_vanilla,
    encode_images,
    encode_text,
    encode_texts,
    init_params,
    pad_tokens,
    parameter_shapes,
)
from m2mclip.errors import SequenceTooLong, ShapeMismatch, TokenOutOfRange

from conftest import tiny_config


def _images(rng, cfg, n=2):
    return rng.uniform(0, 1, (n, 3, cfg.image_size, cfg.image_size))


def _enumerate(cfg):
    return sum(p.data.size for p in init_params(cfg, 0).values())


def test_image_outputs_are_deterministic_unit_rows(tiny_model, rng):
    cfg, params = tiny_model
    x = _images(rng, cfg, 3)
    with ag.no_grad():
        a = encode_images(x, cfg, params).data
        b = encode_images(x, cfg, init_params(cfg, seed=7)).data
    assert a.shape == (3, cfg.branch_count, cfg.embed_dim)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=-1), 1.0, atol=1e-12)


def test_batched_equals_single(tiny_model, rng):
    cfg, params = tiny_model
    x = _images(rng, cfg, 3)
    with ag.no_grad():
        batch = encode_images(x, cfg, params).data
        one = encode_images(x[1:2], cfg, params).data
    np.testing.assert_allclose(batch[1:2], one, atol=1e-12)


def test_text_unit_norm_and_token_sensitivity(rng):
    cfg = tiny_config()
    params = init_params(cfg, 3)
    t1 = encode_text([5, 6, 7, EOT_ID], cfg, params)
    t2 = encode_text([5, 6, 8, EOT_ID], cfg, params)
    assert np.linalg.norm(t1) == pytest.approx(1.0, abs=1e-12)
    assert not np.allclose(t1, t2)


def test_text_padding_does_not_change_embedding():
    cfg = tiny_config()
    params = init_params(cfg, 3)
    with ag.no_grad():
        padded = encode_texts(pad_tokens([[5, 6, EOT_ID], [4, 4, 4, 4, EOT_ID]]), cfg, params).data
    np.testing.assert_allclose(padded[0], encode_text([5, 6, EOT_ID], cfg, params), atol=1e-12)


def test_text_is_causal():
    # the pooled token only sees its prefix, so trailing positions after it are irrelevant
    cfg = tiny_config()
    params = init_params(cfg, 3)
    with ag.no_grad():
        a = encode_texts(np.array([[5, 6, EOT_ID, 0]]), cfg, params).data
        b = encode_texts(np.array([[5, 6, EOT_ID]]), cfg, params).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_cls_with_one_branch_is_vanilla(rng):
    van = tiny_config("vanilla", 1)
    cls = tiny_config("cls", 1)
    assert parameter_shapes(van) == parameter_shapes(cls)
    params = init_params(van, 11)
    img = _images(rng, van, 1)[0]
    np.testing.assert_array_equal(encode_image_vanilla(img, van, params), encode_image_cls(img, cls, params)[0])


def test_mlp_with_one_branch_is_vanilla(rng):
    van = tiny_config("vanilla", 1)
    mlp = tiny_config("mlp", 1)
    assert count_parameters(mlp)["total"] == count_parameters(van)["total"] == _enumerate(mlp)
    params = init_params(van, 11)
    mlp_params = {}
    for name, shape in parameter_shapes(mlp).items():
        mlp_params[name] = ag.Parameter(params[name].data.reshape(shape), name)
    img = _images(rng, van, 1)[0]
    np.testing.assert_allclose(encode_image_vanilla(img, van, params), encode_image_mlp(img, mlp, mlp_params)[0], atol=1e-12)


def test_permuting_class_tokens_permutes_outputs(rng):
    cfg = tiny_config("cls", 3)
    params = init_params(cfg, 5)
    img = _images(rng, cfg, 1)[0]
    perm = [2, 0, 1]
    swapped = dict(params)
    swapped["image.cls"] = ag.Parameter(params["image.cls"].data[perm], "image.cls")
    np.testing.assert_allclose(encode_image_cls(img, cfg, swapped), encode_image_cls(img, cfg, params)[perm], atol=1e-12)


def _mlp_with_shared_replicas(cfg, seed):
    params = init_params(cfg, seed)
    for name, p in params.items():
        if ".mlp.fc2." in name and p.data.ndim == (3 if name.endswith("weight") else 2):
            p.data[:] = p.data[0]
    return params


def test_identical_mlp_replicas_give_identical_branches(rng):
    cfg = tiny_config("mlp", 3)
    params = _mlp_with_shared_replicas(cfg, 5)
    out = encode_image_mlp(_images(rng, cfg, 1)[0], cfg, params)
    np.testing.assert_allclose(out[1], out[0], atol=1e-12)
    np.testing.assert_allclose(out[2], out[0], atol=1e-12)


def test_perturbing_one_replica_changes_only_its_branch(rng):
    cfg = tiny_config("mlp", 3)
    params = _mlp_with_shared_replicas(cfg, 5)
    img = _images(rng, cfg, 1)[0]
    before = encode_image_mlp(img, cfg, params)
    params[f"image.blocks.{cfg.depth - 1}.mlp.fc2.weight"].data[1] += 0.05 * rng.standard_normal((cfg.ffn_dim, cfg.width))
    after = encode_image_mlp(img, cfg, params)
    np.testing.assert_array_equal(after[[0, 2]], before[[0, 2]])
    assert not np.allclose(after[1], before[1])


@pytest.mark.parametrize(
    "variant,H,kw",
    [("vanilla", 1, {}), ("cls", 4, {}), ("mlp", 2, {}), ("mlp", 3, dict(depth=4)), ("mlp", 2, dict(depth=2))],
)
def test_count_parameters_matches_enumeration(variant, H, kw):
    cfg = tiny_config(variant, H, **kw)
    assert count_parameters(cfg)["total"] == _enumerate(cfg)


def test_overhead_closed_forms():
    cls = ModelConfig(width=64, branch_count=4, variant="cls", vocab_size=50)
    mlp = ModelConfig(width=64, branch_count=2, variant="mlp", vocab_size=50)
    assert count_parameters(cls)["branch_overhead"] == 192
    assert count_parameters(mlp)["branch_overhead"] == 49_344
    assert count_parameters(mlp)["branch_overhead"] == 1 * 3 * (256 * 64 + 64)
    for w in (64, 128):
        cfg = ModelConfig(width=w, heads=4, branch_count=4, variant="cls", vocab_size=50)
        assert count_parameters(cfg)["overhead_fraction"] < 0.001


def test_init_is_seeded():
    cfg = tiny_config("cls", 2)
    a, b, c = init_params(cfg, 0), init_params(cfg, 0), init_params(cfg, 1)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not np.array_equal(a["image.proj"].data, c["image.proj"].data)
    assert a["logit_scale"].data == pytest.approx(np.log(1 / 0.07))


def test_input_errors(rng):
    cfg = tiny_config()
    params = init_params(cfg, 0)
    with pytest.raises(TokenOutOfRange):
        encode_text([cfg.vocab_size], cfg, params)
    with pytest.raises(TokenOutOfRange):
        encode_text([-1], cfg, params)
    with pytest.raises(SequenceTooLong):
        encode_text([3] * 78, cfg, params)
    with pytest.raises(ShapeMismatch):
        encode_images(rng.uniform(size=(1, 3, 12, 12)), cfg, params)
    with pytest.raises(ShapeMismatch):
        encode_image_cls(rng.uniform(size=(3, 8, 8)), cfg, params)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config("vanilla", 2)
    with pytest.raises(ValueError):
        tiny_config(image_size=10)
    cfg = tiny_config("mlp", 2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.expanded_blocks == 2
    assert dataclasses.replace(cfg, depth=5).expanded_blocks == 3


def test_temperature_clamp():
    t = Temperature(ag.Parameter(np.array(10.0), "logit_scale"), clamp_max=100.0)
    t.clamp()
    assert t.tau == pytest.approx(0.01)
    t = Temperature(ag.Parameter(np.array(np.log(1 / 0.07)), "logit_scale"))
    assert t.tau == pytest.approx(0.07)
