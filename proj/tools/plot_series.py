#!/usr/bin/env python3
"""Plot the series files a training run leaves in its output directory.

    python3 tools/plot_series.py RUN_DIR [RUN_DIR ...] [--out curves.png]

Reads loss.tsv, churn.tsv and recall.tsv from each run directory and draws
one panel per file, one line per run and column. Needs matplotlib.
"""

import argparse
import csv
from pathlib import Path


def read_tsv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    cols = {}
    for row in rows:
        for key, value in row.items():
            cols.setdefault(key, []).append(float("nan") if value == "NA" else float(value))
    return cols


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("runs", nargs="+", type=Path)
    parser.add_argument("--out", type=Path, default=Path("curves.png"))
    args = parser.parse_args()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = ["loss.tsv", "churn.tsv", "recall.tsv"]
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
    for ax, name in zip(axes, panels):
        for run in args.runs:
            path = run / name
            if not path.exists():
                continue
            cols = read_tsv(path)
            epochs = cols.pop("epoch")
            for key, values in cols.items():
                label = key if len(args.runs) == 1 else f"{run.name}:{key}"
                ax.plot(epochs, values, label=label)
        ax.set_title(name.removesuffix(".tsv"))
        ax.set_xlabel("epoch")
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
