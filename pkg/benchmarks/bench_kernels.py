"""Compare the compiled and numpy kernel backends on Tang-sized workloads.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 50]

Kernel rows call each backend module directly.  The training-step row runs
one forward/backward/update of the Tang network on a batch of 42x42 crops
in a subprocess per backend (the backend is fixed at import time).
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from exprbench import kernels

STEP_SCRIPT = """
import json, sys, time
import numpy as np
from exprbench import architectures as arch, kernels
from exprbench.layers import softmax_xent
from exprbench.tensor import Rng
from exprbench.trainer import TrainConfig, sgd_step
batch, repeat = int(sys.argv[1]), int(sys.argv[2])
spec = arch.builtin("tang")
net = arch.build_network(spec)
rng = Rng(0)
params = arch.init_params(spec, rng)
vel = {}
x = np.random.default_rng(0).normal(size=(batch, 1, 42, 42)).astype(np.float32)
y = np.arange(batch) % 7
cfg = TrainConfig()
times = []
for _ in range(repeat + 1):
    t = time.perf_counter()
    loss, g = softmax_xent(net.forward(x, params, True, rng), y)
    sgd_step(params, net.backward(g, params), vel, cfg)
    times.append(time.perf_counter() - t)
print(json.dumps({"backend": kernels.BACKEND, "best": min(times[1:])}))
"""


def best_of(fn, repeat):
    fn()  # warm up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(batch):
    r = np.random.default_rng(0)
    x1 = r.normal(size=(batch, 1, 46, 46)).astype(np.float32)     # conv1 input, pad 2
    a1 = np.abs(r.normal(size=(batch, 32, 44, 44))).astype(np.float32)  # pool1 input, pad 1
    x2 = r.normal(size=(batch, 32, 23, 23)).astype(np.float32)    # conv2 input, pad 1
    cols2 = r.normal(size=(batch * 20 * 20, 32 * 16)).astype(np.float32)
    g1 = r.normal(size=(batch, 32, 21, 21)).astype(np.float32)
    u = r.random((batch, 32, 21, 21))
    return {
        "im2col conv1 5x5": lambda k: k.im2col(x1, 5, 5, 1),
        "im2col conv2 4x4": lambda k: k.im2col(x2, 4, 4, 1),
        "col2im conv2 4x4": lambda k: k.col2im(cols2, x2.shape, 4, 4, 1),
        "max_pool 3x3/2": lambda k: k.max_pool(a1, 3, 3, 2),
        "avg_pool 3x3/2": lambda k: k.avg_pool(a1, 3, 3, 2),
        "avg_pool backward": lambda k: k.avg_pool_backward(g1, a1.shape, 3, 3, 2),
        "stoch_pool train": lambda k: k.stoch_pool(a1, 3, 3, 2, u),
        "stoch_pool eval": lambda k: k.stoch_pool(a1, 3, 3, 2, None),
    }


def train_step(backend, batch, repeat):
    env = dict(os.environ, EXPRBENCH_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SCRIPT, str(batch), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)["best"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=50)
    ap.add_argument("--json", action="store_true", help="print raw timings as JSON")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    names = [n for n in ("python", "cython") if n in backends]
    rows = {}
    for label, fn in kernel_cases(args.batch).items():
        rows[label] = {n: best_of(lambda: fn(backends[n]), args.repeat) for n in names}
    rows[f"tang train step (batch {args.batch})"] = {n: train_step(n, args.batch, args.repeat) for n in names}

    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    head = f"{'workload':<30}" + "".join(f"{n + ' ms':>12}" for n in names)
    if len(names) == 2:
        head += f"{'speedup':>10}"
    print(head)
    for label, t in rows.items():
        line = f"{label:<30}" + "".join(f"{1e3 * t[n]:>12.2f}" for n in names)
        if len(names) == 2:
            line += f"{t['python'] / t['cython']:>9.1f}x"
        print(line)
    if "cython" not in names:
        print("compiled extension not built; only the numpy backend was timed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
