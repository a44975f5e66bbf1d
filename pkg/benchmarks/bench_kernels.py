"""Time the jitted kernels against their numpy twins, then one full training step per path.

    python benchmarks/bench_kernels.py            # kernels + end-to-end step
    python benchmarks/bench_kernels.py --kernels  # kernels only

Shapes match the desk configuration: width 64, 64 images of 65 tokens, 4 heads.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from m2mclip import kernels

STEP_SNIPPET = """
import time, tempfile
import numpy as np
from m2mclip.data import generate_dataset, Vocabulary
from m2mclip.experiments import desk_model_config, DESK_VIEWS
from m2mclip.training import TrainConfig, TrainingData, train
d = tempfile.mkdtemp()
views = [v.value for v in DESK_VIEWS]
m = generate_dataset(64, views, 0, d)
data = TrainingData.from_manifest(m)
mc = desk_model_config("cls", 4, len(Vocabulary.load(d + "/vocab.json")))
tc = TrainConfig(manifest=str(m), batch_size=64, max_steps=1, views=views)
train(tc, mc, data=data)  # compile and warm caches
t = time.perf_counter()
for _ in range(3):
    train(tc, mc, data=data)
print((time.perf_counter() - t) / 3)
"""


def kernel_cases(rng):
    act = rng.standard_normal((64 * 65, 64))
    hidden = rng.standard_normal((64 * 65, 256))
    att = rng.standard_normal((64 * 4 * 65, 65))
    g, b = np.ones(64), np.zeros(64)
    _, xhat, rstd = kernels._ln_fwd_np(act, g, b, 1e-5)
    y = kernels._softmax_fwd_np(att)
    sim = rng.standard_normal((40, 40))
    scores = rng.standard_normal((500, 500))
    acc = rng.random((500, 500)) < 0.02
    return {
        "layer_norm fwd": ("ln_fwd", (act, g, b, 1e-5)),
        "layer_norm bwd": ("ln_bwd", (act, xhat, rstd, g)),
        "gelu fwd": ("gelu_fwd", (hidden,)),
        "gelu bwd": ("gelu_bwd", (hidden, hidden)),
        "softmax fwd": ("softmax_fwd", (att,)),
        "softmax bwd": ("softmax_bwd", (y, att)),
        "agglomerate 40->4": ("agglomerate", (sim + sim.T, 4)),
        "best_ranks 500x500": ("best_ranks", (scores, acc)),
    }


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for label, (name, args) in kernel_cases(rng).items():
        nb, np_ = getattr(kernels, f"_{name}_nb"), getattr(kernels, f"_{name}_np")
        nb(*args)  # compile
        t_np = min(timeit.repeat(lambda: np_(*args), number=1, repeat=repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb(*args), number=1, repeat=repeat)) * 1e3
        print(f"{label:<22}{t_np:>11.3f}{t_nb:>11.3f}{t_np / t_nb:>8.2f}x")


def bench_step() -> None:
    print("\nfull training step, K=64, class-token model with 4 branches")
    for flag in ("0", "1"):
        env = dict(os.environ, M2M_NUMBA=flag, M2M_THREADS="1")
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
        print(f"  M2M_NUMBA={flag}: {float(out.stdout.strip()):.3f} s/step")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--kernels", action="store_true", help="skip the end-to-end step timing")
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    bench_kernels(args.repeat)
    if not args.kernels:
        bench_step()


if __name__ == "__main__":
    main()
