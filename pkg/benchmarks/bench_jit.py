"""Compare the numba kernels against the pure-Python fallback.

Each workload runs in a fresh interpreter so the ``RLTRANSPORT_PURE_PYTHON``
switch is read at import time.  Numba timings exclude compilation (one warm-up
call first).

    python benchmarks/bench_jit.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from rltransport.render import ExperimentConfig, path_trace_reference
from rltransport.scenes import cornell
from rltransport.nn import TinyMLP
from rltransport.qmc import sample

repeat = int(sys.argv[1])
scene = cornell()
cfg = ExperimentConfig(spp=2, width=8, height=8, max_length=6)
net = TinyMLP([9, 64, 64, 8], ["relu", "relu", "identity"], seed=0)
x = np.random.default_rng(0).random((256, 9))

def render():
    path_trace_reference(scene, cfg)

def halton():
    sum(sample(i, d, 0) for i in range(2000) for d in range(8))

def mlp():
    net(x)

out = {}
for name, fn in (("render 8x8x2", render), ("halton 16k", halton), ("mlp batch 256", mlp)):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps(out))
"""


def run(pure: bool, repeat: int) -> dict:
    env = dict(os.environ, RLTRANSPORT_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    jit = run(False, args.repeat)
    py = run(True, args.repeat)
    print(f"{'workload':<16}{'numba [s]':>12}{'python [s]':>12}{'speedup':>10}")
    for name in jit:
        print(f"{name:<16}{jit[name]:>12.4f}{py[name]:>12.4f}{py[name] / jit[name]:>10.1f}")


if __name__ == "__main__":
    main()
