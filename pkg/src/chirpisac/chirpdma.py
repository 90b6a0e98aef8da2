"""Dedicated-chirp sensing of occupied time-frequency slots and slot allocation.

A transceiver pair occupies one tilted-bar resource: a chirp of duration one
time unit T_u = Tc * fcut / B plus a trailing guard of the same length, i.e.
one slot of width 2 T_u on the PRI grid.  Before transmitting, a pair mixes
the air signal with short dedicated chirps (same slope, duration T_u, swept
band fcut) at every candidate start k * 2 T_u; band-limited IF energy in a
window marks that slot busy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .cfg import ChirpConfig, ConfigError, DerivedParams


@dataclass(frozen=True)
class ForeignEmitter:
    """A chirp transmitter already on the air.

    slot_delay  start offset of its chirp train within the PRI grid, [0, Tc)
    power       linear amplitude of its signal at our receiver
    """

    slot_delay: float
    power: float = 1.0


@dataclass
class OccupancyMap:
    slot_busy: np.ndarray          # bool, one flag per 2*T_u slot
    energy: np.ndarray             # mean in-band IF power per slot
    dedicated_chirp_s: float       # T_u

    def __len__(self) -> int:
        return len(self.slot_busy)


@dataclass(frozen=True)
class SlotAssignment:
    slot_index: int
    start_delay: float             # = slot_index * 2 * T_u


def capacity(params: DerivedParams) -> int:
    """Number of transceiver pairs one PRI can host: floor(Tc / (2 T_u))."""
    return params.pair_capacity


def sense_occupancy(
    emitters: list[ForeignEmitter],
    config: ChirpConfig,
    params: DerivedParams,
    noise_snr_db: float | None = None,
    threshold_factor: float = 4.0,
    rng_seed: int | None = None,
) -> OccupancyMap:
    """Signal-level occupancy sensing over one PRI.

    For each candidate start t0 = k * 2 T_u the received chirps are mixed
    with a local dedicated chirp over [t0, t0 + T_u), brick-wall limited to
    |f| < fcut, and the mean in-band power is compared against
    threshold_factor times the estimated noise floor (median slot energy).
    In the noiseless limit a slot is busy exactly when some emitter's delay
    is within T_u of t0 (cyclically), i.e. its beat lands inside the band.

    noise_snr_db of None means noiseless; otherwise complex white noise with
    per-sample variance 10**(-snr/10) is added at the simulation rate.
    """
    if threshold_factor <= 1.0:
        raise ConfigError(f"threshold_factor must exceed 1, got {threshold_factor}")
    tc = config.pri_s
    tu = params.dedicated_chirp_s
    slope = params.chirp_slope
    fcut = config.lpf_cutoff_hz
    cap = params.pair_capacity
    for e in emitters:
        if not 0.0 <= e.slot_delay < tc:
            raise ConfigError(f"emitter slot_delay {e.slot_delay:g} outside [0, Tc)")

    # oversample 2x above the swept band so any beat in (-B, B) is alias-free
    sim_rate = 2.0 * config.bandwidth_hz
    nw = int(round(tu * sim_rate))
    rng = np.random.default_rng(rng_seed)
    sigma = 0.0 if noise_snr_db is None else 10.0 ** (-noise_snr_db / 20.0)

    freqs = sfft.fftfreq(nw, d=1.0 / sim_rate)
    band = np.abs(freqs) < fcut
    # Hann window: a slot-aligned beat spans exactly three bins, and the
    # leakage of out-of-band beats decays fast enough that the in-band energy
    # threshold separates occupied from free slots cleanly
    window = np.hanning(nw)
    win_gain = np.sum(window**2)
    energies = np.empty(cap)
    for k in range(cap):
        t0 = k * 2.0 * tu
        t = t0 + np.arange(nw) / sim_rate
        mixed = np.zeros(nw, dtype=np.complex128)
        for e in emitters:
            # chirp trains restart every PRI; the quadratic phase wraps with them
            te = np.mod(t - e.slot_delay, tc)
            mixed += e.power * np.exp(1j * np.pi * slope * te * te)
        mixed *= np.exp(-1j * np.pi * slope * (t - t0) ** 2)
        if sigma > 0.0:
            noise = rng.standard_normal(2 * nw).view(np.complex128)
            mixed += (sigma / np.sqrt(2.0)) * noise
        spec = sfft.fft(mixed * window)
        energies[k] = np.sum(np.abs(spec[band]) ** 2) / (nw * win_gain)

    # absolute floor: far sidelobes of strong out-of-band beats must not
    # trip the detector when the median floor is leakage- rather than
    # noise-limited (noiseless maps); inert once real noise is present
    abs_floor = 1e-4 * float(np.mean(energies))
    noise_floor = float(np.median(energies))
    busy = (energies > threshold_factor * noise_floor) & (energies > abs_floor)
    return OccupancyMap(slot_busy=busy, energy=energies, dedicated_chirp_s=tu)


def allocate_slot(occupancy: OccupancyMap) -> SlotAssignment | None:
    """Lowest free slot whose trailing guard (first half of the next slot,
    cyclically) is also free; None when the map is saturated."""
    busy = occupancy.slot_busy
    cap = len(busy)
    for k in range(cap):
        if not busy[k] and not busy[(k + 1) % cap]:
            return SlotAssignment(slot_index=k,
                                  start_delay=k * 2.0 * occupancy.dedicated_chirp_s)
    return None
