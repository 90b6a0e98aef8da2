#!/usr/bin/env python3
"""Render the simulator's CSV outputs as publication-style figures.

One image per metric: BER vs SNR on a log axis (one curve per config),
hitrate vs SNR, or the three estimation-error CDFs side by side.  Rendering
is a pure function of the CSV: fixed style, no timestamps, so re-running on
the same input reproduces the same file.

Usage: plot.py --metric ber|hitrate|cdf --in PATH --out PATH.png
"""

from __future__ import annotations

import argparse
import csv
import re
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SCHEMAS = {
    "ber": ["config_id", "scheme", "snr_db", "bits", "errors", "ber"],
    "hitrate": ["config_id", "snr_db", "presented", "hits", "hitrate"],
    "cdf": ["config_id", "quantity", "error", "cum_prob"],
}
CDF_UNITS = {"range": "m", "velocity": "m/s", "azimuth": "deg"}


class SchemaError(RuntimeError):
    pass


def config_label(config_id: str) -> str:
    """Turn an id like B640_Tc51.2 into the legend text B=640 MHz, Tc=51.2 us."""
    m = re.match(r"^B(?P<b>[0-9.]+)_Tc(?P<tc>[0-9.]+)$", config_id)
    if not m:
        return config_id
    return f"B={m.group('b')} MHz, Tc={m.group('tc')} µs"


def read_rows(path: str, metric: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        want = SCHEMAS[metric]
        if header != want:
            offending = next((h for h, w in zip(header, want) if h != w),
                             header[len(want):] or want[len(header):])
            raise SchemaError(
                f"{path}: header {header} does not match the {metric} schema "
                f"{want} (first offending column: {offending})")
        rows = [dict(zip(want, row)) for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def ordered_configs(rows):
    seen = []
    for r in rows:
        if r["config_id"] not in seen:
            seen.append(r["config_id"])
    return seen


def render_ber(rows, out):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for cid in ordered_configs(rows):
        pts = [(float(r["snr_db"]), float(r["ber"])) for r in rows
               if r["config_id"] == cid]
        pts.sort()
        snr = [p[0] for p in pts]
        ber = [max(p[1], 0.5e-4 / 2) for p in pts]   # keep zeros visible on log axis
        ax.semilogy(snr, ber, marker="o", markersize=3.5, label=config_label(cid))
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def render_hitrate(rows, out):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for cid in ordered_configs(rows):
        pts = sorted((float(r["snr_db"]), float(r["hitrate"])) for r in rows
                     if r["config_id"] == cid)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                markersize=3.5, label=config_label(cid))
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("hitrate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def render_cdf(rows, out):
    quantities = [q for q in CDF_UNITS if any(r["quantity"] == q for r in rows)]
    if not quantities:
        raise SchemaError("no known quantities (range/velocity/azimuth) in CDF data")
    fig, axes = plt.subplots(1, len(quantities), figsize=(4.0 * len(quantities), 3.6))
    if len(quantities) == 1:
        axes = [axes]
    for ax, q in zip(axes, quantities):
        for cid in ordered_configs(rows):
            pts = [(float(r["error"]), float(r["cum_prob"])) for r in rows
                   if r["config_id"] == cid and r["quantity"] == q
                   and r["error"] != "nan"]
            if not pts:
                continue
            pts.sort()
            ax.step([p[0] for p in pts], [p[1] for p in pts], where="post",
                    label=config_label(cid))
        ax.set_xlabel(f"{q} error ({CDF_UNITS[q]})")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


RENDERERS = {"ber": render_ber, "hitrate": render_hitrate, "cdf": render_cdf}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--metric", choices=sorted(RENDERERS), required=True)
    ap.add_argument("--in", dest="inp", required=True, help="input CSV")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        rows = read_rows(args.inp, args.metric)
        RENDERERS[args.metric](rows, args.out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
