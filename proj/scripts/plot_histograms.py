#!/usr/bin/env python3
"""Plot the *_cdf.csv / *_hist.csv files written by `hgpose report`."""
import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("report_dir", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, help="figure directory (default: report_dir)")
    args = ap.parse_args()
    out = args.out or args.report_dir
    out.mkdir(parents=True, exist_ok=True)

    for kind, ylabel in (("cdf", "fraction of frames"), ("hist", "frames")):
        for axis, xlabel in (("t", "translation error (m)"), ("q", "orientation error (deg)")):
            files = sorted(args.report_dir.glob(f"*_{axis}_{kind}.csv"))
            if not files:
                continue
            fig, ax = plt.subplots(figsize=(6, 4))
            for path in files:
                df = pd.read_csv(path)
                ax.step(df["edge"], df["value"], where="post", label=path.name[: -len(f"_{axis}_{kind}.csv")])
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            ax.legend(fontsize="small")
            fig.tight_layout()
            fig.savefig(out / f"{axis}_{kind}.png", dpi=120)
            plt.close(fig)


if __name__ == "__main__":
    main()
