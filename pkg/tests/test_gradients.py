import itertools
import time

import pytest

from m2mclip.losses import Reduction

from oracles import LOSSES, VARIANTS, model_gradient_error


@pytest.mark.parametrize("loss_kind,variant", list(itertools.product(LOSSES, VARIANTS)))
@pytest.mark.parametrize("reduction", [Reduction.SUM, Reduction.MEAN])
def test_end_to_end_gradients(loss_kind, variant, reduction):
    assert model_gradient_error(loss_kind, variant, reduction, seed=1) < 1e-4


def test_gradient_probe_detects_corruption(monkeypatch):
    # negative control: a wrong backward in one primitive must be caught
    from m2mclip import kernels

    real = kernels.gelu_backward
    monkeypatch.setattr(kernels, "gelu_backward", lambda x, dy: 1.5 * real(x, dy))
    assert model_gradient_error("o2o", "vanilla", seed=1, max_entries=8) > 1e-3
