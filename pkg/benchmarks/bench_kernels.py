"""Compare the compiled (numba) and interpreted (numpy) kernel backends.

Each backend runs in its own subprocess because the choice is made at import
time from ``ZSON_NUMBA``. Usage::

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from zson import _accel, kernels
from zson.worldsim import AgentPose, KinematicsConfig, generate_world, observe

repeat = int(sys.argv[1])
w = generate_world(1)
kin = KinematicsConfig()
rng = np.random.default_rng(0)
free = w.free_cells
poses = [AgentPose(*w.cell_center(*free[i]), 30 * int(rng.integers(12))) for i in rng.integers(len(free), size=200)]
occ = rng.random((64, 64)) < 0.25
occ[0, 0] = False
r = rng.normal(size=(64, 8)); v = rng.normal(size=(64, 8)); d = (rng.random((64, 8)) < 0.05).astype(float)

def bench(fn):
    fn()  # warm-up (includes JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t)
    return best

out = {
    "backend": _accel.backend(),
    "distance_field 64x64": bench(lambda: kernels.distance_field(occ, np.array([0]), np.array([0]))),
    "observe x200": bench(lambda: [observe(w, p, kin) for p in poses]),
    "gae 64x8": bench(lambda: kernels.gae(r, v, d, np.zeros(8), 0.99, 0.95)),
}
print(json.dumps(out))
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, ZSON_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    fast = run("1", a.repeat)
    slow = run("0", a.repeat)
    print(f"{'kernel':<22} {fast['backend']:>12} {slow['backend']:>12} {'speed-up':>9}")
    for k in fast:
        if k == "backend":
            continue
        print(f"{k:<22} {fast[k] * 1e3:>10.2f}ms {slow[k] * 1e3:>10.2f}ms {slow[k] / fast[k]:>8.1f}x")


if __name__ == "__main__":
    main()
