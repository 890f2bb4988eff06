import argparse
import hashlib
import os
import subprocess
import sys
import time

import matplotlib.pyplot as plt

SCENARIO = "scenarios/ph_null.ini"


def run_benchmark(procs, scenario, replicates, seed):
    out = f"results/bench_P{procs}.csv"
    cmd = ["mpiexec", "-n", str(procs), sys.executable, "main.py", "simulate", scenario,
           "--replicates", str(replicates), "--seed", str(seed), "--out", out]
    try:
        start = time.time()
        subprocess.run(cmd, check=True, capture_output=True)
    except (subprocess.CalledProcessError, FileNotFoundError) as e:
        print(f"Failed to run with {procs} procs: {e}")
        return None, None
    end = time.time()

    with open(out, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return end - start, digest


def main():
    parser = argparse.ArgumentParser(description="Worker-count scaling and determinism check")
    parser.add_argument("--scenario", default=SCENARIO)
    parser.add_argument("--replicates", type=int, default=400)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--procs", type=int, nargs="+", default=[1, 2, 4])
    args = parser.parse_args()

    os.makedirs("results", exist_ok=True)

    times, digests = [], []
    print("Running Benchmarks...")
    for p in args.procs:
        print(f"Testing with {p} processes...")
        t, digest = run_benchmark(p, args.scenario, args.replicates, args.seed)
        times.append(t)
        digests.append(digest)
        if t is not None:
            print(f"  -> {t:.2f}s, sha256 {digest[:16]}")

    finished = {d for d in digests if d is not None}
    if len(finished) == 1:
        print("SUCCESS: identical output for every process count.")
    elif finished:
        print("FAILURE: output depends on the process count.")

    measured = [(p, t) for p, t in zip(args.procs, times) if t is not None]
    if not measured:
        return
    procs, seconds = zip(*measured)

    plt.figure()
    plt.plot(procs, seconds, 'o-', label=f"{args.replicates} replicates")
    plt.xlabel('Number of Processes')
    plt.ylabel('Time (s)')
    plt.title('Monte Carlo Scaling')
    plt.legend()
    plt.grid(True)
    plt.savefig('results/scaling.png')

    print("Benchmark saved to results/scaling.png")


if __name__ == "__main__":
    main()
