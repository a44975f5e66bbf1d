import numpy as np
import pytest

from m2mclip.encoders import ModelConfig, Variant, init_params


def unit_rows(rng, *shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def tiny_config(variant="vanilla", branches=1, **kw):
    base = dict(
        image_size=8,
        patch_size=4,
        width=16,
        depth=2,
        heads=2,
        embed_dim=8,
        branch_count=branches,
        variant=variant,
        vocab_size=12,
        ffn_dim=16,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[("vanilla", 1), ("cls", 3), ("mlp", 3)], ids=["vanilla", "cls", "mlp"])
def tiny_model(request):
    variant, H = request.param
    cfg = tiny_config(variant, H)
    return cfg, init_params(cfg, seed=7)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.report_lines():
        terminalreporter.write_line(line)
