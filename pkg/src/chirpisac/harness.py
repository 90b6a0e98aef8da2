"""Monte Carlo experiment runner: scenario generation, deterministic
per-trial seeding, metric accumulation (BER, hitrate, error CDFs) and CSV
emission.

Determinism contract: trial i of an experiment uses the random stream seeded
with mix64(base_seed, i), where i enumerates (config, SNR, trial) in a fixed
order, so results are byte-identical across runs and worker counts; workers
only change how trials are scheduled, never what they compute.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cfg import DDM, TDM, ConfigError, System, data_rate, frame_bits
from .channel import LinkGeometry, Target, synthesize_at_cube, synthesize_pt_cube
from .demod import LinkSession, TdmLinkSession, at_sense, detect_cube, sense_combs
from .rdmsim import synthesize_at_rdm, synthesize_pt_rdm
from .txmod import build_reference_frame, build_tx_frame, default_ddm_offsets, pack_bits

_MASK64 = (1 << 64) - 1


def mix64(base_seed: int, index: int) -> int:
    """SplitMix64 of the trial index against the base seed; the stated
    64-bit mix that keeps every trial on its own stream."""
    z = (base_seed + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment grid: metric x configs x SNR sweep x trials."""

    systems: tuple[System, ...]
    snr_db: tuple[float, ...]
    metric: str = "ber"            # ber | hitrate | cdf
    scheme: str = DDM
    trials: int = 500
    seed: int = 1
    engine: str = "auto"           # auto | cube | rdm
    n_targets: int = 2
    data_cpis: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_db:
            raise ConfigError("empty SNR sweep")
        if self.metric not in ("ber", "hitrate", "cdf"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.scheme not in (DDM, TDM):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.engine not in ("auto", "cube", "rdm"):
            raise ConfigError(f"unknown engine {self.engine!r}")


FIELDS = ("delay", "amplitude", "doppler")


@dataclass
class MetricRecord:
    """Accumulated results for one (config, scheme, snr) grid point."""

    config_id: str
    scheme: str
    snr_db: float
    bits: int = 0
    errors: int = 0
    field_bits: dict = field(default_factory=lambda: {f: 0 for f in FIELDS})
    field_errors: dict = field(default_factory=lambda: {f: 0 for f in FIELDS})
    presented: int = 0
    hits: int = 0
    range_err: list = field(default_factory=list)
    velocity_err: list = field(default_factory=list)
    azimuth_err: list = field(default_factory=list)

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    @property
    def hitrate(self) -> float:
        return self.hits / self.presented if self.presented else 0.0

    def merge(self, other: "MetricRecord") -> None:
        self.bits += other.bits
        self.errors += other.errors
        for f in FIELDS:
            self.field_bits[f] += other.field_bits[f]
            self.field_errors[f] += other.field_errors[f]
        self.presented += other.presented
        self.hits += other.hits
        self.range_err.extend(other.range_err)
        self.velocity_err.extend(other.velocity_err)
        self.azimuth_err.extend(other.azimuth_err)


def hit_judge(truth: tuple[float, float, float], est: tuple[float, float, float],
              params) -> bool:
    """Hit: range, velocity and azimuth errors inside (resolution,
    resolution, 3 degrees)."""
    return (abs(est[0] - truth[0]) < params.range_resolution
            and abs(est[1] - truth[1]) < params.velocity_resolution
            and abs(est[2] - truth[2]) < 3.0)


def cdf_points(samples) -> list[tuple[float, float]]:
    """Empirical CDF: sorted sample i carries probability (i+1)/N."""
    s = sorted(float(x) for x in samples)
    n = len(s)
    return [(x, (i + 1) / n) for i, x in enumerate(s)]


# scenario generation ---------------------------------------------------------

def _max_link_range(system: System) -> float:
    par = system.derived
    return min(100.0, (par.max_range_bins - 2) * 2.0 * par.range_resolution)


def _max_target_range(system: System) -> float:
    par = system.derived
    return min(100.0, (par.max_range_bins - 2) * par.range_resolution)


def draw_link(rng: np.random.Generator, system: System) -> LinkGeometry:
    fov = system.array.fov_az_deg
    return LinkGeometry(
        range_m=float(rng.uniform(5.0, _max_link_range(system))),
        velocity_mps=float(rng.uniform(-15.0, 15.0)),
        aod_deg=float(rng.uniform(-fov, fov)),
        aoa_deg=float(rng.uniform(-fov, fov)),
    )


def draw_targets(rng: np.random.Generator, system: System, n: int) -> list[Target]:
    fov = system.array.fov_az_deg
    r_max = _max_target_range(system)
    return [
        Target(
            range_m=float(rng.uniform(5.0, r_max)),
            velocity_mps=float(rng.uniform(-15.0, 15.0)),
            azimuth_deg=float(rng.uniform(-fov, fov)),
            elevation_deg=0.0,
            amplitude=np.exp(2j * np.pi * rng.random()),
        )
        for _ in range(n)
    ]


# per-trial procedures --------------------------------------------------------

def _count_field_errors(rec: MetricRecord, system: System, scheme: str,
                        sent: np.ndarray | None, got: np.ndarray | None) -> None:
    """Accumulate total and per-field bit errors; got=None marks a detection
    failure, which errors every payload bit."""
    par, cfg = system.derived, system.chirp
    d, a, v = (par.delay_alphabet_bits, par.amplitude_alphabet_bits,
               par.doppler_alphabet_bits)
    n_sym = 1 if scheme == DDM else cfg.chirps_per_cpi
    spans = {"delay": (0, n_sym * d), "amplitude": (n_sym * d, n_sym * (d + a)),
             "doppler": (n_sym * (d + a), n_sym * (d + a) + v)}
    total = n_sym * (d + a) + v
    rec.bits += total
    for f, (lo, hi) in spans.items():
        rec.field_bits[f] += hi - lo
        if got is None:
            rec.field_errors[f] += hi - lo
            rec.errors += hi - lo
        else:
            e = int(np.sum(sent[lo:hi] != got[lo:hi]))
            rec.field_errors[f] += e
            rec.errors += e


def run_ber_trial(system: System, scheme: str, snr_db: float, seed: int,
                  engine: str, data_cpis: int, rec: MetricRecord) -> None:
    rng = np.random.default_rng(seed)
    link = draw_link(rng, system)
    cfg, arr, par = system.chirp, system.array, system.derived
    ref = build_reference_frame(scheme, arr, par, cfg)
    use_rdm = engine == "rdm" and scheme == DDM

    def make(tx, cpi):
        s = mix64(seed, 1 + cpi)
        if use_rdm:
            return synthesize_pt_rdm(link, tx, system, snr_db, rng_seed=s,
                                     cpi_index=cpi)
        return synthesize_pt_cube(link, tx, system, snr_db, rng_seed=s,
                                  cpi_index=cpi, dtype=np.complex64)

    session = LinkSession(system) if scheme == DDM else TdmLinkSession(system)
    initialized = session.initialize(make(ref, 0))
    for c in range(1, data_cpis + 1):
        bits = rng.integers(0, 2, frame_bits(scheme, par, cfg))
        if not initialized:
            _count_field_errors(rec, system, scheme, bits, None)
            continue
        frame = pack_bits(bits, scheme, par, cfg)
        tx = build_tx_frame(frame, arr, par, cfg)
        result = session.demodulate_cpi(make(tx, c))
        _count_field_errors(rec, system, scheme, bits,
                            result.bits if result.detected else None)


def run_sensing_trial(system: System, snr_db: float, seed: int, engine: str,
                      n_targets: int, rec: MetricRecord) -> None:
    """One hitrate/CDF trial: unmodulated initialization CPI, then sensing on
    a modulated CPI with the transceiver's own data stripped."""
    rng = np.random.default_rng(seed)
    targets = draw_targets(rng, system, n_targets)
    cfg, arr, par = system.chirp, system.array, system.derived
    offsets = default_ddm_offsets(arr.n_tx, cfg.chirps_per_cpi)
    bits = rng.integers(0, 2, frame_bits(DDM, par, cfg))
    frame = pack_bits(bits, DDM, par, cfg)

    if engine == "rdm":
        # the strip restores the unmodulated cube exactly, so both CPIs are
        # synthesized post-strip; the init CPI still runs for flow parity
        _ = detect_cube(synthesize_at_rdm(targets, system, snr_db,
                                          rng_seed=mix64(seed, 1)), system)
        fast = synthesize_at_rdm(targets, system, snr_db,
                                 rng_seed=mix64(seed, 2), cpi_index=1)
        dets, rdm = detect_cube(fast, system)
        sensed = sense_combs(dets, rdm, system, offsets)
    else:
        ref = build_reference_frame(DDM, arr, par, cfg)
        cube0 = synthesize_at_cube(targets, ref, system, snr_db,
                                   rng_seed=mix64(seed, 1), dtype=np.complex64)
        _ = at_sense(cube0, ref, system, with_azimuth=False)
        tx = build_tx_frame(frame, arr, par, cfg)
        cube1 = synthesize_at_cube(targets, tx, system, snr_db,
                                   rng_seed=mix64(seed, 2), cpi_index=1,
                                   dtype=np.complex64)
        sensed = at_sense(cube1, tx, system)

    t_cpi = cfg.chirps_per_cpi * cfg.pri_s
    truths = [(t.range_m + t.velocity_mps * t_cpi, t.velocity_mps, t.azimuth_deg)
              for t in targets]
    rec.presented += len(truths)
    est = [e for _, e in sensed]
    used = [False] * len(est)
    for truth in truths:
        best, best_d = -1, np.inf
        for j, e in enumerate(est):
            if used[j]:
                continue
            d = (abs(e[0] - truth[0]) / par.range_resolution
                 + abs(e[1] - truth[1]) / par.velocity_resolution)
            if d < best_d:
                best, best_d = j, d
        if best < 0 or best_d > 4.0:
            continue
        used[best] = True
        e = est[best]
        rec.range_err.append(abs(e[0] - truth[0]))
        rec.velocity_err.append(abs(e[1] - truth[1]))
        rec.azimuth_err.append(abs(e[2] - truth[2]))
        if hit_judge(truth, e, par):
            rec.hits += 1


# experiment driver -----------------------------------------------------------

def _resolve_engine(spec: ExperimentSpec) -> str:
    if spec.engine != "auto":
        return spec.engine
    return "cube" if spec.scheme == TDM else "rdm"


def _run_chunk(args) -> tuple[int, int, MetricRecord]:
    spec, sys_idx, snr_idx, lo, hi = args
    system = spec.systems[sys_idx]
    snr = spec.snr_db[snr_idx]
    engine = _resolve_engine(spec)
    rec = MetricRecord(system.config_id, spec.scheme, snr)
    n_snr = len(spec.snr_db)
    for trial in range(lo, hi):
        gidx = (sys_idx * n_snr + snr_idx) * spec.trials + trial
        seed = mix64(spec.seed, gidx)
        if spec.metric == "ber":
            run_ber_trial(system, spec.scheme, snr, seed, engine,
                          spec.data_cpis, rec)
        else:
            run_sensing_trial(system, snr, seed, engine, spec.n_targets, rec)
    return sys_idx, snr_idx, rec


def run(spec: ExperimentSpec) -> list[MetricRecord]:
    """Execute the grid and return records ordered by (config, snr)."""
    chunk = max(1, min(spec.trials, 64))
    tasks = []
    for sys_idx in range(len(spec.systems)):
        for snr_idx in range(len(spec.snr_db)):
            for lo in range(0, spec.trials, chunk):
                tasks.append((spec, sys_idx, snr_idx, lo,
                              min(lo + chunk, spec.trials)))
    results: dict[tuple[int, int], MetricRecord] = {}

    def absorb(sys_idx, snr_idx, rec):
        key = (sys_idx, snr_idx)
        if key in results:
            results[key].merge(rec)
        else:
            results[key] = rec

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            done = list(pool.map(_run_chunk, tasks, chunksize=1))
        # fixed reduction order regardless of completion schedule
        for sys_idx, snr_idx, rec in done:
            absorb(sys_idx, snr_idx, rec)
    else:
        for t in tasks:
            absorb(*_run_chunk(t))
    return [results[(i, j)] for i in range(len(spec.systems))
            for j in range(len(spec.snr_db))]


# CSV emission ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_ber_csv(records: list[MetricRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "scheme", "snr_db", "bits", "errors", "ber"])
        for r in records:
            w.writerow([r.config_id, r.scheme, _fmt(r.snr_db), r.bits,
                        r.errors, _fmt(r.ber)])


def write_ber_fields_csv(records: list[MetricRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "scheme", "snr_db", "field", "bits",
                    "errors", "ber"])
        for r in records:
            for f in FIELDS:
                b, e = r.field_bits[f], r.field_errors[f]
                w.writerow([r.config_id, r.scheme, _fmt(r.snr_db), f, b, e,
                            _fmt(e / b if b else 0.0)])


def write_hit_csv(records: list[MetricRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "snr_db", "presented", "hits", "hitrate"])
        for r in records:
            w.writerow([r.config_id, _fmt(r.snr_db), r.presented, r.hits,
                        _fmt(r.hitrate)])


def write_cdf_csv(records: list[MetricRecord], path: str) -> None:
    quantities = (("range", "range_err"), ("velocity", "velocity_err"),
                  ("azimuth", "azimuth_err"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "quantity", "error", "cum_prob"])
        for r in records:
            for name, attr in quantities:
                samples = getattr(r, attr)
                if not samples:
                    w.writerow([r.config_id, name, "nan", "nan"])
                    continue
                for x, p in cdf_points(samples):
                    w.writerow([r.config_id, name, _fmt(x), _fmt(p)])


def write_rates_csv(systems, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "scheme", "bps", "kbps"])
        for s in systems:
            for scheme in (DDM, TDM):
                bps = data_rate(scheme, s.derived, s.chirp)
                w.writerow([s.config_id, scheme, _fmt(bps),
                            format(bps / 1e3, ".2f")])


def write_chirpdma_csv(occupancy, assignment, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot_index", "busy", "energy", "assigned"])
        for k in range(len(occupancy)):
            assigned = 1 if assignment is not None and assignment.slot_index == k else 0
            w.writerow([k, int(occupancy.slot_busy[k]),
                        _fmt(occupancy.energy[k]), assigned])


def default_sweep() -> tuple[float, ...]:
    """The stock SNR grid: -40 to -10 dB in 2 dB steps."""
    return tuple(float(x) for x in range(-40, -8, 2))
