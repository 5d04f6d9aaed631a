"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter because ``ENSVERIFY_NO_NUMBA`` is
read at import time. Usage::

    python benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from ensverify._accel import BACKEND
from ensverify.nn import classify, random_network
from ensverify.composition import compose_side_by_side
from ensverify.verifier import FULL, encode_mutual_error_query, solve
from ensverify.verifier.simplex import lp_solve

repeats = int(sys.argv[1])
rng = np.random.default_rng(0)
lps = []
for _ in range(20):
    n, m = 30, 40
    A = rng.normal(size=(m, n))
    lps.append((rng.normal(size=n), A, A @ rng.uniform(0, 1, n) + 1.0))
pairs = []
while len(pairs) < 5:
    members = [random_network(rng, [6, 12, 3]) for _ in range(2)]
    x0 = rng.uniform(0, 1, 6)
    label = classify(members[0], x0)
    if classify(members[1], x0) == label:
        pairs.append((compose_side_by_side(members), x0, label))

def lp_batch():
    for c, A, b in lps:
        lp_solve(c, A, b, bounds=[(0.0, 1.0)] * len(c))

def verify_batch():
    for comp, x0, label in pairs:
        solve(comp, *encode_mutual_error_query(comp, x0, 0.5, label, FULL))

out = {"backend": BACKEND}
for name, fn in (("lp_solve x20", lp_batch), ("verify x5", verify_batch)):
    t0 = time.perf_counter(); fn(); out[name + " first"] = time.perf_counter() - t0
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def run(no_numba: bool, repeats: int) -> dict:
    env = dict(os.environ)
    env.pop("ENSVERIFY_NO_NUMBA", None)
    if no_numba:
        env["ENSVERIFY_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeats)], env=env,
                         capture_output=True, text=True)
    if res.returncode:
        sys.exit(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run(False, args.repeats), run(True, args.repeats)
    print(f"{'workload':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<22}{fast[key]:>11.4f}s{slow[key]:>11.4f}s{slow[key] / fast[key]:>9.1f}x")


if __name__ == "__main__":
    main()
