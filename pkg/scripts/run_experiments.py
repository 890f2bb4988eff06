import argparse
import itertools
import json
import math
import os
import subprocess
import sys
import time

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.keyvalue import dump

RESULTS_DIR = "results"
SCENARIO_DIR = os.path.join(RESULTS_DIR, "scenarios")
RESULTS_FILE = os.path.join(RESULTS_DIR, "final_results.json")

# name, alpha0, alpha1
HAZARDS = [("PH", 1.0, 0.0), ("NPH", 2.0, -1.0)]
CENSORING = {"none": 0.0, "5pct": -math.log(0.95)}
PHIS = {"phi0": 0.0, "phi1.5": math.log(1.5), "phi2": math.log(2.0)}


def scenario_pairs(name, n, tau, censor, accrual, covariates, phi, hazard, hypothesis, replicates, seed):
    _, alpha0, alpha1 = hazard
    pairs = [
        ("name", name), ("n0", n), ("n1", n), ("tau", tau),
        ("alpha0", alpha0), ("alpha1", alpha1),
        ("covariate_scheme", covariates), ("phi", phi),
        ("accrual", accrual), ("censor_rate", censor),
        ("info_fractions", (0.5, 0.75, 1.0)), ("spending", "power:3"),
        ("replicates", replicates), ("seed", seed),
    ]
    if hypothesis == "null":
        pairs.append(("beta_w", "null"))
    else:
        pairs.append(("target_power", 0.8))
    return pairs


def generate_suite(suite, replicates):
    if suite == "test":
        grid = [(200, 1.0, "none", 2.0, "normal1", "phi1.5", HAZARDS[0], "null"),
                (200, 1.0, "5pct", 2.0, "bernoulli2", "phi2", HAZARDS[1], "null")]
    else:
        grid = itertools.product([200, 400], [1.0, 3.0], list(CENSORING), [2.0, 4.0],
                                 ["normal1", "bernoulli2"], list(PHIS), HAZARDS, ["null", "alt"])

    experiments = []
    for seed, (n, tau, censor, accrual, covariates, phi, hazard, hypothesis) in enumerate(grid, start=1):
        name = (f"{hazard[0]}_{hypothesis}_n{n}_tau{tau:g}_{censor}_A{accrual:g}"
                f"_{covariates}_{phi}")
        pairs = scenario_pairs(name, n, tau, CENSORING[censor], accrual, covariates, PHIS[phi],
                               hazard, hypothesis, replicates, seed)
        experiments.append({"name": name, "pairs": pairs})
    return experiments


def run_scenario(name, path, procs):
    out = os.path.join(RESULTS_DIR, f"{name}_oc.csv")
    plot = os.path.join(RESULTS_DIR, f"{name}_plot.csv")
    cmd = ["mpiexec", "-n", str(procs), sys.executable, "main.py", "simulate", path,
           "--out", out, "--plot-data", plot]
    print(f"Running {name} on {procs} procs...")

    start_time = time.time()
    try:
        subprocess.run(cmd, check=True, capture_output=True)
    except subprocess.CalledProcessError as e:
        print(f"Error running {name}: {e.stderr.decode(errors='replace').strip()}")
        return None
    duration = time.time() - start_time
    print(f"  -> Finished in {duration:.2f}s")
    return {"oc": out, "plot": plot, "seconds": duration}


def main():
    parser = argparse.ArgumentParser(description="Run the scenario grid through 'main.py simulate'")
    parser.add_argument("--suite", choices=["test", "full"], default="test")
    parser.add_argument("--procs", type=int, default=4)
    parser.add_argument("--replicates", type=int, default=2000)
    args = parser.parse_args()

    os.makedirs(SCENARIO_DIR, exist_ok=True)

    final_data = {}
    if os.path.exists(RESULTS_FILE):
        with open(RESULTS_FILE, "r") as f:
            final_data = {r["name"]: r for r in json.load(f)}

    for exp in generate_suite(args.suite, args.replicates):
        path = os.path.join(SCENARIO_DIR, exp["name"] + ".ini")
        with open(path, "w") as f:
            f.write(dump(exp["pairs"], header="generated by scripts/run_experiments.py"))
        outcome = run_scenario(exp["name"], path, args.procs)
        if outcome is not None:
            final_data[exp["name"]] = {"name": exp["name"], "scenario": path, "procs": args.procs,
                                       **outcome}

    with open(RESULTS_FILE, "w") as f:
        json.dump(list(final_data.values()), f, indent=4)
    print(f"Results saved to {RESULTS_FILE}")


if __name__ == "__main__":
    main()
