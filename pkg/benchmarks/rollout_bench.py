"""Timing comparison of the jitted episode kernel against the numpy fallback.

Runs the same batch of seeded episodes twice: once in-process (numba path,
unless already disabled) and once in a subprocess with
TJUNCTION_DISABLE_NUMBA=1, then checks both paths emit bit-identical episode
records before reporting timings.

Usage: python3 benchmarks/rollout_bench.py [--episodes N] [--seed N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

WORKER = """
import hashlib, json, sys, time
from tjunction import _kernels
from tjunction.simulator import ScenarioConfig, rollout
from tjunction.policies import tabular_policy, meta_policy

n, seed = int(sys.argv[1]), int(sys.argv[2])
scenario = ScenarioConfig()
ego = tabular_policy(scenario.n_actions)
meta = meta_policy(scenario.n_actions)
rollout(scenario, ego, meta, [1.0, 1.0], 0)  # warm any compile cache
t0 = time.perf_counter()
digest = 0.0
lines = []
for i in range(n):
    rec = rollout(scenario, ego, meta, [0.5, 2.0], seed + i)
    digest += rec.discounted_return
    if i < 50:
        lines.append(rec.to_jsonl())
elapsed = time.perf_counter() - t0
print(json.dumps({
    "numba": _kernels.USING_NUMBA,
    "elapsed_s": elapsed,
    "per_episode_us": 1e6 * elapsed / n,
    "digest": digest,
    "sample_hash": hashlib.sha256(chr(10).join(lines).encode()).hexdigest(),
}))
"""


def run_worker(n, seed, disable_numba):
    env = dict(os.environ)
    env["TJUNCTION_DISABLE_NUMBA"] = "1" if disable_numba else ""
    env["PYTHONPATH"] = os.pathsep.join(
        [os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "src"),
         env.get("PYTHONPATH", "")])
    out = subprocess.run([sys.executable, "-c", WORKER, str(n), str(seed)],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--episodes", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    jit = run_worker(args.episodes, args.seed, disable_numba=False)
    plain = run_worker(args.episodes, args.seed, disable_numba=True)

    if not jit["numba"]:
        print("note: numba unavailable; both runs used the numpy fallback")
    if jit["digest"] != plain["digest"] or jit["sample_hash"] != plain["sample_hash"]:
        print("FAIL: kernel paths disagree"); raise SystemExit(1)

    print(f"episodes:            {args.episodes}")
    print(f"jit path numba:      {jit['numba']}")
    print(f"jit per episode:     {jit['per_episode_us']:9.1f} us")
    print(f"fallback per episode:{plain['per_episode_us']:9.1f} us")
    if jit["numba"]:
        print(f"speedup:             {plain['per_episode_us'] / jit['per_episode_us']:9.1f}x")
    print("paths bit-identical: True")


if __name__ == "__main__":
    main()
