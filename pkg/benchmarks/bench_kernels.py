"""Compare the compiled kernels with the numpy fallback.

Times each kernel on desk-profile shapes and one forward/backward pass of the
desk network on a training batch, once per backend.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spkrobust.kernels import backends


def kernel_cases(rng):
    x = rng.standard_normal((32, 66, 102, 8)).astype(np.float32)    # padded layer-1 input
    cols_shape = (32 * 64 * 100, 72)
    g = rng.standard_normal((32 * 64 * 100, 8)).astype(np.float32)
    xhat = rng.standard_normal(g.shape).astype(np.float32)
    ones = np.ones(8, dtype=np.float32)
    zeros = np.zeros(8, dtype=np.float32)
    cols = rng.standard_normal(cols_shape).astype(np.float32)
    return {
        "im2col": lambda k: k.im2col(x, 3, 3, 1, 64, 100),
        "col2im": lambda k: k.col2im(cols, 32, 66, 102, 8, 3, 3, 1, 64, 100),
        "bn_stats": lambda k: k.bn_stats(g),
        "bn_apply": lambda k: k.bn_apply(g, zeros, ones, ones, zeros),
        "bn_grad_sums": lambda k: k.bn_grad_sums(g, xhat),
        "bn_backward_input": lambda k: k.bn_backward_input(g, xhat, ones, zeros, zeros),
    }


def time_kernels(repeat):
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    impls = backends()
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for name, fn in cases.items():
        ms = {b: 1e3 * min(timeit.repeat(lambda: fn(k), number=1, repeat=repeat)) for b, k in impls.items()}
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{name:<20}" + "".join(f"{ms[b]:>10.2f}ms" for b in impls) + f"{speed:>9.1f}x")


NETWORK_SNIPPET = """
import timeit, numpy as np
from spkrobust.kernels import BACKEND
from spkrobust.network import NetConfig, SpeakerNet
net = SpeakerNet(NetConfig(), seed=0)
x = np.random.default_rng(0).standard_normal((32, 100, 64)).astype(np.float32)
def step():
    emb = net.embed(x, train=True)
    net.backward_embed(np.ones_like(emb))
step()
t = min(timeit.repeat(step, number=1, repeat={repeat}))
print(f"{{BACKEND:<10}} forward+backward, batch 32 x 100 frames: {{1e3 * t:.1f}} ms")
"""


def time_network(repeat):
    # backend selection happens at import, so each backend runs in its own process
    for backend in backends():
        env = dict(os.environ, SPKROBUST_KERNELS=backend)
        sys.stdout.flush()
        subprocess.run([sys.executable, "-c", NETWORK_SNIPPET.format(repeat=repeat)], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "cython" not in backends():
        print("compiled kernels are not built; only the fallback is timed")
    time_kernels(args.repeat)
    time_network(args.repeat)


if __name__ == "__main__":
    main()
