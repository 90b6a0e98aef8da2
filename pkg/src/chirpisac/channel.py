"""Post-dechirp data-cube synthesis for the echo and one-way link paths.

The simulation never touches the RF-rate waveform: after mixing, low-pass
filtering and sampling, each propagation path is exactly a 2D complex
exponential across fast time (beat frequency, i.e. delay) and slow time
(Doppler), scaled by the slow-time code of its transmit antenna and by the
planar-array phases.  A cube is (rx_channels, Nc, Ns).

Conventions (documented, self-consistent end to end):
  * radial velocity is the range rate dR/dt, positive while the range grows;
    the Doppler shift is 2 v / lambda round trip and v / lambda one way, so a
    positive velocity moves the peak to a positive Doppler bin;
  * the beat phase starts at zero at each PRI's first sample; slow-time
    carrier evolution appears only through the Doppler term, which also
    carries the CPI start phase 2 pi f_d Tc Nc cpi_index;
  * noise is circular complex Gaussian with per-sample variance
    (B / f_s) * 10**(-snr/10) for a unit-amplitude single path: the SNR is
    referenced to the full swept band at the antenna, so the processing gain
    of one CPI is 10 log10(Ns * Nc * f_s / B).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfg import C0, System
from .txmod import TxFrame, data_code


@dataclass(frozen=True)
class Target:
    """Point scatterer seen by the active transceiver (round trip)."""

    range_m: float
    velocity_mps: float            # range rate, positive receding
    azimuth_deg: float
    elevation_deg: float = 0.0
    amplitude: complex | None = None   # unit magnitude, random phase if None


@dataclass(frozen=True)
class LinkGeometry:
    """One-way geometry from the active to the passive transceiver."""

    range_m: float
    velocity_mps: float            # range rate of the link
    aod_deg: float                 # departure azimuth at the transmitter
    aoa_deg: float                 # arrival azimuth at the receiver
    aod_el_deg: float = 0.0
    aoa_el_deg: float = 0.0


def check_target(target: Target, system: System) -> None:
    """Reject geometry outside the field of view or the unambiguous span."""
    arr, par, cfg = system.array, system.derived, system.chirp
    if not -arr.fov_az_deg < target.azimuth_deg < arr.fov_az_deg:
        raise ValueError(f"azimuth {target.azimuth_deg:g} outside FoV")
    if not -arr.fov_el_deg < target.elevation_deg < arr.fov_el_deg:
        raise ValueError(f"elevation {target.elevation_deg:g} outside FoV")
    if abs(target.velocity_mps) >= par.wavelength / (4.0 * cfg.pri_s):
        raise ValueError(f"velocity {target.velocity_mps:g} is Doppler-ambiguous")
    if not 0.0 < target.range_m < par.max_range_bins * par.range_resolution:
        raise ValueError(f"range {target.range_m:g} outside the design budget")


def _array_phases(system: System, az_deg: float, el_deg: float, side: str) -> np.ndarray:
    """Per-element phase factors for a plane wave at (az, el)."""
    az = np.deg2rad(az_deg)
    el = np.deg2rad(el_deg)
    pos = (system.array.tx_positions_wl() if side == "tx"
           else system.array.rx_positions_wl())
    phase = 2.0 * np.pi * (pos[:, 0] * np.sin(az) * np.cos(el)
                           + pos[:, 1] * np.sin(el))
    return np.exp(1j * phase)


def _noise_sigma(system: System, snr_db: float | None) -> float:
    if snr_db is None:
        return 0.0
    band_factor = system.chirp.bandwidth_hz / system.chirp.adc_rate_hz
    return float(np.sqrt(band_factor * 10.0 ** (-snr_db / 10.0)))


def _add_noise(cube: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0.0:
        return cube
    if cube.dtype == np.complex64:
        noise = rng.standard_normal(2 * cube.size, dtype=np.float32).view(np.complex64)
        scale = np.float32(sigma / np.sqrt(2.0))
    else:
        noise = rng.standard_normal(2 * cube.size).view(np.complex128)
        scale = sigma / np.sqrt(2.0)
    cube += scale * noise.reshape(cube.shape)
    return cube


def _accumulate_path(cube: np.ndarray, system: System, tx: TxFrame,
                     delay_s: float, doppler_hz: float, amp: complex,
                     aod_deg: float, aod_el_deg: float,
                     aoa_deg: float, aoa_el_deg: float,
                     cpi_index: int) -> None:
    """Add one propagation path (all TX antennas) into the cube in place."""
    cfg, par = system.chirp, system.derived
    nc, ns = cfg.chirps_per_cpi, par.samples_per_pri
    m = np.arange(nc)
    n = np.arange(ns)

    tx_ph = _array_phases(system, aod_deg, aod_el_deg, "tx")
    rx_ph = _array_phases(system, aoa_deg, aoa_el_deg, "rx")
    # slow-time factor: code summed over antennas, Doppler ramp, CPI start phase
    slow = (tx_ph @ tx.code) * np.exp(
        2j * np.pi * doppler_hz * cfg.pri_s * (m + nc * cpi_index))

    beat_hz = par.chirp_slope * (delay_s + tx.extra_delay_s)
    if np.ptp(tx.extra_delay_s) == 0.0:
        fast = np.exp(2j * np.pi * beat_hz[0] / cfg.adc_rate_hz * n)
        sheet = np.outer(amp * slow, fast).astype(cube.dtype)
    else:
        fast = np.exp(2j * np.pi * np.outer(beat_hz / cfg.adc_rate_hz, n))
        sheet = (amp * slow[:, None] * fast).astype(cube.dtype)
    cube += rx_ph.astype(cube.dtype)[:, None, None] * sheet[None, :, :]


def synthesize_at_cube(targets: list[Target], tx: TxFrame, system: System,
                       snr_db: float | None, rng_seed=None, cpi_index: int = 0,
                       dtype=np.complex128) -> np.ndarray:
    """Echo cube of the active transceiver for one CPI.

    Geometry is given at CPI 0; range and carrier phase advance internally
    with cpi_index under the constant-velocity model.
    """
    cfg, par = system.chirp, system.derived
    rng = np.random.default_rng(rng_seed)
    cube = np.zeros((system.array.n_rx, cfg.chirps_per_cpi, par.samples_per_pri),
                    dtype=dtype)
    t_cpi = cfg.chirps_per_cpi * cfg.pri_s
    for tgt in targets:
        check_target(tgt, system)
        amp = tgt.amplitude
        if amp is None:
            amp = np.exp(2j * np.pi * rng.random())
        r = tgt.range_m + tgt.velocity_mps * t_cpi * cpi_index
        _accumulate_path(
            cube, system, tx,
            delay_s=2.0 * r / C0,
            doppler_hz=2.0 * tgt.velocity_mps / par.wavelength,
            amp=amp,
            aod_deg=tgt.azimuth_deg, aod_el_deg=tgt.elevation_deg,
            aoa_deg=tgt.azimuth_deg, aoa_el_deg=tgt.elevation_deg,
            cpi_index=cpi_index,
        )
    return _add_noise(cube, _noise_sigma(system, snr_db), rng)


def synthesize_pt_cube(link: LinkGeometry, tx: TxFrame, system: System,
                       snr_db: float | None, rng_seed=None, cpi_index: int = 0,
                       dtype=np.complex128) -> np.ndarray:
    """One-way received cube of the passive transceiver for one CPI.

    The passive side dechirps with its own slot-aligned local chirp under
    ideal synchronization, so the line-of-sight path appears at the one-way
    beat slope * (R / c + extra_delay).
    """
    cfg, par = system.chirp, system.derived
    rng = np.random.default_rng(rng_seed)
    cube = np.zeros((system.array.n_rx, cfg.chirps_per_cpi, par.samples_per_pri),
                    dtype=dtype)
    t_cpi = cfg.chirps_per_cpi * cfg.pri_s
    r = link.range_m + link.velocity_mps * t_cpi * cpi_index
    _accumulate_path(
        cube, system, tx,
        delay_s=r / C0,
        doppler_hz=link.velocity_mps / par.wavelength,
        amp=1.0 + 0.0j,
        aod_deg=link.aod_deg, aod_el_deg=link.aod_el_deg,
        aoa_deg=link.aoa_deg, aoa_el_deg=link.aoa_el_deg,
        cpi_index=cpi_index,
    )
    return _add_noise(cube, _noise_sigma(system, snr_db), rng)


def strip_known_modulation(cube: np.ndarray, tx: TxFrame, system: System) -> np.ndarray:
    """Remove the transceiver's own data modulation from its echo cube.

    The extra delay becomes a fast-time phase ramp (a cyclic range-bin shift)
    and the common data code a slow-time rotation; the per-antenna Doppler
    offsets are left in place for MIMO separation.
    """
    cfg, par = system.chirp, system.derived
    nc, ns = cfg.chirps_per_cpi, par.samples_per_pri
    n = np.arange(ns)
    shift_bins = par.chirp_slope * tx.extra_delay_s * cfg.pri_s  # = delay symbols
    fast = np.exp(-2j * np.pi * np.outer(shift_bins, n) / ns)
    common = data_code(tx.frame, nc, cfg.qam_order)
    return cube * (np.conj(common)[None, :, None] * fast[None, :, :]).astype(cube.dtype)
