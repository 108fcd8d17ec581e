"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on both
backends in-process; the end-to-end rollout is timed in subprocesses so the
backend is chosen at import exactly as in normal use.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from emaml import kernels

ROLLOUT = """
import time, numpy as np
from emaml import envs, kernels, nn, ppo
env = envs.make_env("cartpole")
th = nn.init_params(nn.NetworkSpec((4, 64, 64, 1), "sigmoid"), np.random.default_rng(0))
t = time.perf_counter()
ppo.collect(env, th, {steps}, np.random.default_rng(1))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def kernel_cases():
    rng = np.random.default_rng(0)
    sizes = (4, 64, 64, 1)
    n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    values = rng.normal(size=n) * 0.1
    x = rng.normal(size=4)
    levels = rng.uniform(0, 100, 6)
    is_open = np.array([1, 1, 0, 1, 0, 1], bool)
    res = np.full(6, 100.0)
    pumps = np.full(6, 0.1)
    rewards = rng.normal(size=2000)
    terminal = np.zeros(2000, bool)
    terminal[::100] = True
    return {
        "mlp_forward_one": lambda m: m.mlp_forward_one(values, sizes, x, True),
        "cartpole_step": lambda m: m.cartpole_step(0.01, 0.02, 0.03, 0.04, 1.0, 0.1, 0.5, 10.0, 1),
        "manifold_flows": lambda m: m.manifold_flows(levels, is_open, res, pumps),
        "discounted_returns[2000]": lambda m: m.discounted_returns(rewards, terminal, 0.99),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--number", type=int, default=2000, help="calls per timing")
    parser.add_argument("--steps", type=int, default=5000, help="rollout length")
    args = parser.parse_args(argv)

    found = kernels.backends()
    names = sorted(found)
    print(f"{'kernel':<26}" + "".join(f"{n + ' us/call':>18}" for n in names) + f"{'speedup':>10}")
    for label, call in kernel_cases().items():
        times = {n: min(timeit.repeat(lambda m=found[n]: call(m), number=args.number, repeat=3))
                 / args.number * 1e6 for n in names}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<26}" + "".join(f"{times[n]:>18.2f}" for n in names) + f"{speed:>9.1f}x")

    rollout = {}
    for pure in ("1", "0"):
        env = dict(os.environ, EMAML_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", ROLLOUT.format(steps=args.steps)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        rollout[out[0]] = float(out[1])
    line = ", ".join(f"{k} {v:.2f}s" for k, v in rollout.items())
    if len(rollout) == 2:
        line += f" ({rollout['python'] / rollout['cython']:.1f}x)"
    print(f"rollout {args.steps} cart-pole steps: {line}")


if __name__ == "__main__":
    main()
