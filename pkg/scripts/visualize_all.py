import argparse
import glob
import os

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

PLOT_GLOB = "results/*_plot.csv"
OUTPUT_FILE = "results/comprehensive_plots.png"
METHOD_STYLE = {"adjusted": ("o-", "tab:red"), "km": ("s--", "tab:blue"), "cox": ("^:", "tab:green")}


def load_plot_data(pattern):
    files = sorted(glob.glob(pattern))
    if not files:
        print(f"Error: no plot data matching {pattern}. Run 'main.py simulate --plot-data'.")
        return None
    return pd.concat([pd.read_csv(f) for f in files], ignore_index=True)


def plot_scenario(ax, frame, name):
    for method, rows in frame.groupby("method", sort=False):
        style, color = METHOD_STYLE.get(method, ("x-", "black"))
        ax.errorbar(rows["info_fraction"], rows["cum_rejection"], yerr=1.96 * rows["se"],
                    fmt=style, color=color, capsize=3, label=method)
    nominal = frame.drop_duplicates("stage")
    ax.plot(nominal["info_fraction"], nominal["nominal_alpha"], color="gray", linestyle="-.",
            label="nominal alpha")
    if "nominal_power" in nominal and nominal["nominal_power"].notna().all():
        ax.plot(nominal["info_fraction"], nominal["nominal_power"], color="gray", linestyle="--",
                label="nominal power")

    delta = frame["true_difference"].iloc[0] if "true_difference" in frame else np.nan
    ax.set_title(name if np.isnan(delta) else f"{name} (true difference {delta:.3f})")
    ax.set_xlabel('Information fraction')
    ax.set_ylabel('Cumulative rejection')
    ax.set_xlim(0, 1.05)
    ax.legend()
    ax.grid(True)


def plot_all(data, output):
    scenarios = list(dict.fromkeys(data["scenario"]))
    cols = min(2, len(scenarios))
    rows = int(np.ceil(len(scenarios) / cols))
    fig, axs = plt.subplots(rows, cols, figsize=(9 * cols, 6 * rows), squeeze=False)
    fig.suptitle('Cumulative type I error / power by analysis', fontsize=16)

    for ax, name in zip(axs.flat, scenarios):
        plot_scenario(ax, data[data["scenario"] == name], name)
    for ax in axs.flat[len(scenarios):]:
        ax.set_visible(False)

    plt.tight_layout(rect=[0, 0.03, 1, 0.95])
    plt.savefig(output)
    plt.close(fig)
    print(f"Comprehensive plots saved to {output}")


def main():
    parser = argparse.ArgumentParser(description="Plot the plot-data CSVs written by 'simulate'")
    parser.add_argument("--pattern", default=PLOT_GLOB)
    parser.add_argument("--out", default=OUTPUT_FILE)
    args = parser.parse_args()

    data = load_plot_data(args.pattern)
    if data is not None:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        plot_all(data, args.out)


if __name__ == "__main__":
    main()
