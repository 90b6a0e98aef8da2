"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness
from .cfg import (DDM, TDM, ConfigError, data_rate, load_system, preset_by_id,
                  preset_systems)
from .channel import LinkGeometry, Target, synthesize_at_cube, synthesize_pt_cube
from .chirpdma import ForeignEmitter, allocate_slot, sense_occupancy
from .rxdsp import compute_rdm, power_map
from .txmod import build_reference_frame


def _load_systems(paths: list[str] | None):
    if not paths:
        return preset_systems()
    out = []
    for p in paths:
        try:
            out.append(preset_by_id(p))
            continue
        except ConfigError:
            pass
        if not os.path.exists(p):
            raise ConfigError(f"{p!r} is neither a preset id nor a config file; "
                              f"presets: {', '.join(s.config_id for s in preset_systems())}")
        out.append(load_system(p))
    return out


def _parse_snr(text: str) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) == 1:
        return (float(parts[0]),)
    if len(parts) != 3:
        raise ConfigError(f"--snr expects A:B:S or a single value, got {text!r}")
    a, b, s = (float(x) for x in parts)
    if s <= 0:
        raise ConfigError("--snr step must be positive")
    n = int(np.floor((b - a) / s + 1e-9)) + 1
    if n < 1:
        raise ConfigError(f"empty sweep {text!r}")
    return tuple(a + i * s for i in range(n))


def _cmd_rates(args) -> int:
    systems = _load_systems(args.config)
    rows = []
    for s in systems:
        ddm = data_rate(DDM, s.derived, s.chirp)
        tdm = data_rate(TDM, s.derived, s.chirp)
        rows.append((s.config_id, ddm, tdm))
        print(f"{s.config_id:14s}  ddm {ddm:12.6f} bps ({ddm/1e3:.2f} kbps)   "
              f"tdm {tdm:12.3f} bps ({tdm/1e3:.2f} kbps)")
    if args.out:
        harness.write_rates_csv(systems, args.out)
    return 0


def _cmd_sim(args) -> int:
    systems = _load_systems(args.config)
    spec = harness.ExperimentSpec(
        systems=tuple(systems),
        snr_db=_parse_snr(args.snr),
        metric=args.metric,
        scheme=args.scheme,
        trials=args.trials,
        seed=args.seed,
        engine=args.engine,
        workers=args.workers,
    )
    records = harness.run(spec)
    if args.metric == "ber":
        harness.write_ber_csv(records, args.out)
        root, ext = os.path.splitext(args.out)
        harness.write_ber_fields_csv(records, f"{root}_fields{ext or '.csv'}")
    elif args.metric == "hitrate":
        harness.write_hit_csv(records, args.out)
    else:
        harness.write_cdf_csv(records, args.out)
    for r in records:
        if args.metric == "ber":
            print(f"{r.config_id:14s} {r.scheme} snr {r.snr_db:6.1f}  "
                  f"ber {r.ber:.6g} ({r.errors}/{r.bits})")
        elif args.metric == "hitrate":
            print(f"{r.config_id:14s} snr {r.snr_db:6.1f}  "
                  f"hitrate {r.hitrate:.4f} ({r.hits}/{r.presented})")
    return 0


def _cmd_chirpdma(args) -> int:
    systems = _load_systems([args.config] if args.config else None)
    system = systems[0]
    par, cfg = system.derived, system.chirp
    slot_s = 2.0 * par.dedicated_chirp_s
    emitters = []
    if args.occupied:
        for tok in args.occupied.split(","):
            k = int(tok)
            if not 0 <= k < par.pair_capacity:
                raise ConfigError(f"occupied slot {k} outside [0, {par.pair_capacity})")
            emitters.append(ForeignEmitter(slot_delay=k * slot_s))
    occ = sense_occupancy(emitters, cfg, par, noise_snr_db=args.snr,
                          threshold_factor=args.threshold, rng_seed=args.seed)
    assignment = allocate_slot(occ)
    harness.write_chirpdma_csv(occ, assignment, args.out)
    busy = [k for k in range(len(occ)) if occ.slot_busy[k]]
    print(f"capacity {par.pair_capacity}; busy slots {busy}; "
          f"assigned {assignment.slot_index if assignment else 'none'}")
    return 0


def _read_scenario(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    targets = [
        Target(range_m=float(t["range_m"]),
               velocity_mps=float(t["vel_mps"]),
               azimuth_deg=float(t["az_deg"]),
               elevation_deg=float(t.get("el_deg", 0.0)),
               amplitude=np.exp(1j * np.deg2rad(float(t.get("amp_phase_deg", 0.0)))))
        for t in doc.get("targets", [])
    ]
    link = None
    if "link" in doc:
        l = doc["link"]
        link = LinkGeometry(range_m=float(l["range_m"]),
                            velocity_mps=float(l["vel_mps"]),
                            aod_deg=float(l["aod_deg"]),
                            aoa_deg=float(l["aoa_deg"]))
    return targets, link


def _cmd_rdm(args) -> int:
    systems = _load_systems([args.config] if args.config else None)
    system = systems[0]
    targets, link = _read_scenario(args.scenario)
    tx = build_reference_frame(DDM, system.array, system.derived, system.chirp)
    if targets:
        cube = synthesize_at_cube(targets, tx, system, args.snr, rng_seed=args.seed)
        rdm = compute_rdm(cube)
    elif link is not None:
        cube = synthesize_pt_cube(link, tx, system, args.snr, rng_seed=args.seed)
        rdm = compute_rdm(cube, keep_bins=system.derived.samples_per_pri)
    else:
        raise ConfigError(f"{args.scenario}: scenario has neither targets nor a link")
    mag = np.sqrt(power_map(rdm))
    with open(args.out, "w") as fh:
        for r in range(mag.shape[1]):          # rows = range bins
            fh.write(",".join(format(float(x), ".8g") for x in mag[:, r]))
            fh.write("\n")
    print(f"wrote {mag.shape[1]} range rows x {mag.shape[0]} Doppler columns")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="isac",
        description="Chirp-based integrated sensing and communication simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", help="closed-form payload data rates")
    p.add_argument("--config", action="append",
                   help="config file or preset id (repeatable; default: all presets)")
    p.add_argument("--out", help="also write rates.csv here")
    p.set_defaults(fn=_cmd_rates)

    p = sub.add_parser("sim", help="Monte Carlo link/sensing experiments")
    p.add_argument("--config", action="append")
    p.add_argument("--scheme", choices=[DDM, TDM], default=DDM)
    p.add_argument("--metric", choices=["ber", "hitrate", "cdf"], required=True)
    p.add_argument("--snr", required=True, help="sweep A:B:S in dB, or one value")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--engine", choices=["auto", "cube", "rdm"], default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sim)

    p = sub.add_parser("chirpdma", help="dedicated-chirp slot sensing and allocation")
    p.add_argument("--config")
    p.add_argument("--occupied", help="comma-separated occupied slot indices")
    p.add_argument("--snr", type=float, default=None,
                   help="sensing SNR in dB (omit for noiseless)")
    p.add_argument("--threshold", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_chirpdma)

    p = sub.add_parser("rdm", help="dump a |RDM| magnitude map as CSV")
    p.add_argument("--config")
    p.add_argument("--scenario", required=True, help="JSON scenario file")
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_rdm)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
