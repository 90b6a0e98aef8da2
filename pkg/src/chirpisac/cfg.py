"""Waveform, array and experiment configuration plus all derived radar quantities.

Everything downstream (slot sensing, modulation, channel synthesis, receiver
processing) pulls its numerology from :class:`DerivedParams`, which is computed
once by :func:`derive` and then treated as immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

C0 = 299_792_458.0  # speed of light, m/s

DDM = "ddm"
TDM = "tdm"
SCHEMES = (DDM, TDM)


class ConfigError(ValueError):
    """Raised for invalid waveform/array configuration (CLI exit code 2)."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ChirpConfig:
    """Chirp waveform numerology.

    carrier_hz      carrier frequency
    bandwidth_hz    swept bandwidth of one chirp
    pri_s           pulse repetition interval (one chirp)
    chirps_per_cpi  slow-time length, power of two
    adc_rate_hz     complex IF sampling rate
    lpf_cutoff_hz   low-pass cutoff of the IF chain (= adc rate by default)
    qam_order       phase-modulation order for the amplitude symbol
    """

    carrier_hz: float = 80e9
    bandwidth_hz: float = 640e6
    pri_s: float = 51.2e-6
    chirps_per_cpi: int = 128
    adc_rate_hz: float = 20e6
    lpf_cutoff_hz: float = 20e6
    qam_order: int = 4


@dataclass(frozen=True)
class ArrayConfig:
    """Planar TX/RX layouts, spacings in wavelengths, and the field of view.

    The stock geometry (2x2 TX, 8x2 RX, TX horizontal pitch 4 wl, RX pitch
    half wl) synthesizes a 16-element half-wavelength horizontal virtual ULA
    and a 4-element vertical one.
    """

    tx_h: int = 2
    tx_v: int = 2
    rx_h: int = 8
    rx_v: int = 2
    tx_dh_wl: float = 4.0
    tx_dv_wl: float = 1.0
    rx_d_wl: float = 0.5
    fov_az_deg: float = 60.0
    fov_el_deg: float = 15.0

    @property
    def n_tx(self) -> int:
        return self.tx_h * self.tx_v

    @property
    def n_rx(self) -> int:
        return self.rx_h * self.rx_v

    def tx_positions_wl(self):
        """(n_tx, 2) horizontal/vertical element positions in wavelengths."""
        import numpy as np

        h = np.arange(self.tx_h) * self.tx_dh_wl
        v = np.arange(self.tx_v) * self.tx_dv_wl
        hh, vv = np.meshgrid(h, v, indexing="ij")
        return np.stack([hh.ravel(), vv.ravel()], axis=1)

    def rx_positions_wl(self):
        import numpy as np

        h = np.arange(self.rx_h) * self.rx_d_wl
        v = np.arange(self.rx_v) * self.rx_d_wl
        hh, vv = np.meshgrid(h, v, indexing="ij")
        return np.stack([hh.ravel(), vv.ravel()], axis=1)


@dataclass(frozen=True)
class DerivedParams:
    samples_per_pri: int          # N_s = T_c * f_s
    chirp_slope: float            # Hz/s
    wavelength: float             # m
    range_resolution: float       # m, c / (2 B)
    velocity_resolution: float    # m/s, lambda / (2 Nc Tc)
    max_range_bins: int           # N_s / 2, the designed delay alphabet span
    delay_alphabet_bits: int      # floor(log2(Tc fs / 2))
    doppler_alphabet_bits: int    # floor(log2(Nc))
    amplitude_alphabet_bits: int  # floor(log2(N_Q))
    dedicated_chirp_s: float      # T_u = Tc fcut / B
    pair_capacity: int            # floor(Tc / (2 Tu))


def derive(config: ChirpConfig, array: ArrayConfig | None = None) -> DerivedParams:
    """Validate a configuration and compute every derived quantity.

    Raises ConfigError for: non power-of-two N_s or N_c, non-integer B/fs
    ratio (or ratio < 2), f_cut > f_s, unsupported QAM order, or a PRI/CPI
    combination that would migrate a max-speed target by more than one range
    bin within a CPI.
    """
    c = config
    if c.lpf_cutoff_hz > c.adc_rate_hz:
        raise ConfigError(
            f"lpf_cutoff_hz={c.lpf_cutoff_hz:g} exceeds adc_rate_hz={c.adc_rate_hz:g}"
        )
    ratio = c.bandwidth_hz / c.adc_rate_hz
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
        raise ConfigError(
            f"bandwidth/adc_rate ratio must be an integer >= 2, got {ratio:g}"
        )
    ns_f = c.pri_s * c.adc_rate_hz
    ns = round(ns_f)
    if abs(ns_f - ns) > 1e-6:
        raise ConfigError(f"pri_s * adc_rate_hz = {ns_f:g} is not an integer")
    if not _is_pow2(ns):
        raise ConfigError(f"samples per PRI N_s={ns} is not a power of two")
    if not _is_pow2(c.chirps_per_cpi):
        raise ConfigError(f"chirps_per_cpi={c.chirps_per_cpi} is not a power of two")
    if c.qam_order not in (2, 4, 8, 16):
        raise ConfigError(f"qam_order must be one of 2,4,8,16, got {c.qam_order}")

    wavelength = C0 / c.carrier_hz
    range_res = C0 / (2.0 * c.bandwidth_hz)
    vel_res = wavelength / (2.0 * c.chirps_per_cpi * c.pri_s)
    tu = c.pri_s * c.lpf_cutoff_hz / c.bandwidth_hz

    # one range bin per CPI is the migration budget for the fastest in-scope
    # target (|v| < lambda / (4 Tc))
    v_max = wavelength / (4.0 * c.pri_s)
    if v_max * c.chirps_per_cpi * c.pri_s >= range_res:
        raise ConfigError(
            "range migration exceeds one bin per CPI for in-scope velocities; "
            "shorten the CPI or reduce bandwidth"
        )

    return DerivedParams(
        samples_per_pri=ns,
        chirp_slope=c.bandwidth_hz / c.pri_s,
        wavelength=wavelength,
        range_resolution=range_res,
        velocity_resolution=vel_res,
        max_range_bins=ns // 2,
        delay_alphabet_bits=int(math.floor(math.log2(ns / 2))),
        doppler_alphabet_bits=int(math.floor(math.log2(c.chirps_per_cpi))),
        amplitude_alphabet_bits=int(math.floor(math.log2(c.qam_order))),
        dedicated_chirp_s=tu,
        pair_capacity=int(math.floor(c.pri_s / (2.0 * tu))),
    )


def frame_bits(scheme: str, params: DerivedParams, config: ChirpConfig) -> int:
    """Payload capacity of one CPI frame in bits."""
    d = params.delay_alphabet_bits
    a = params.amplitude_alphabet_bits
    v = params.doppler_alphabet_bits
    if scheme == DDM:
        return d + a + v
    if scheme == TDM:
        return config.chirps_per_cpi * (d + a) + v
    raise ConfigError(f"unknown scheme {scheme!r}")


def data_rate(scheme: str, params: DerivedParams, config: ChirpConfig) -> float:
    """Payload data rate in bits/s.

    DDM sends one delay, one amplitude and one Doppler symbol per CPI; TDM
    sends delay and amplitude symbols every PRI and the Doppler symbol once
    per CPI.
    """
    d = params.delay_alphabet_bits
    a = params.amplitude_alphabet_bits
    v = params.doppler_alphabet_bits
    tc = config.pri_s
    nc = config.chirps_per_cpi
    if scheme == DDM:
        return (d + a + v) / (nc * tc)
    if scheme == TDM:
        return d / tc + a / tc + v / (nc * tc)
    raise ConfigError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class System:
    """Convenience bundle of one fully derived configuration."""

    config_id: str
    chirp: ChirpConfig
    array: ArrayConfig
    derived: DerivedParams


def make_system(chirp: ChirpConfig, array: ArrayConfig | None = None,
                config_id: str | None = None) -> System:
    array = array or ArrayConfig()
    if config_id is None:
        config_id = f"B{chirp.bandwidth_hz / 1e6:g}_Tc{chirp.pri_s * 1e6:g}"
    return System(config_id, chirp, array, derive(chirp, array))


def _preset(bandwidth_hz: float, pri_s: float) -> System:
    fs = bandwidth_hz / 32.0
    return make_system(
        ChirpConfig(bandwidth_hz=bandwidth_hz, pri_s=pri_s,
                    adc_rate_hz=fs, lpf_cutoff_hz=fs)
    )


def preset_systems() -> list[System]:
    """The four stock bandwidth/PRI operating points, widest first."""
    return [
        _preset(640e6, 51.2e-6),
        _preset(320e6, 51.2e-6),
        _preset(160e6, 51.2e-6),
        _preset(640e6, 25.6e-6),
    ]


def preset_by_id(config_id: str) -> System:
    for s in preset_systems():
        if s.config_id == config_id:
            return s
    raise ConfigError(f"unknown preset {config_id!r}; known: "
                      + ", ".join(s.config_id for s in preset_systems()))


# config-file ingestion ------------------------------------------------------

_CHIRP_KEYS = {
    "carrier_hz": float,
    "bandwidth_hz": float,
    "pri_s": float,
    "chirps_per_cpi": int,
    "adc_rate_hz": float,
    "lpf_cutoff_hz": float,
    "qam_order": int,
}
_ARRAY_KEYS = {
    "tx_h": int, "tx_v": int, "rx_h": int, "rx_v": int,
    "tx_dh_wl": float, "tx_dv_wl": float, "rx_d_wl": float,
    "fov_az_deg": float, "fov_el_deg": float,
}


def load_system(path: str) -> System:
    """Read a flat ``key = value`` text config file.

    Unknown keys are rejected outright.  The seven waveform keys are
    required; array keys fall back to the stock geometry.
    """
    values: dict[str, float] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        if key in _CHIRP_KEYS:
            typ = _CHIRP_KEYS[key]
        elif key in _ARRAY_KEYS:
            typ = _ARRAY_KEYS[key]
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            num = float(val.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val.strip()!r}") from exc
        if typ is int and not num.is_integer():
            raise ConfigError(f"{path}:{lineno}: {key} must be an integer, got {val.strip()!r}")
        values[key] = typ(num)

    missing = sorted(set(_CHIRP_KEYS) - set(values))
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")
    chirp = ChirpConfig(**{k: values[k] for k in _CHIRP_KEYS})
    array = ArrayConfig(**{k: values[k] for k in _ARRAY_KEYS if k in values})
    return make_system(chirp, array)
