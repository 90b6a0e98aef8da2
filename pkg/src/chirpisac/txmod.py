"""Payload bit packing and per-CPI transmit frame construction.

Data rides on three knobs of the chirp train, all relative to the receiver's
tracked reference: an extra delay (range-bin shift), a slow-time phase ramp
(Doppler-bin shift) and a constant-modulus phase rotation.  DDM modulates all
three once per CPI on top of the per-antenna Doppler offsets; TDM modulates
delay and phase every PRI while antennas fire in turn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfg import DDM, TDM, ArrayConfig, ChirpConfig, DerivedParams, frame_bits


class FrameError(ValueError):
    """Wrong payload size or symbol outside its alphabet."""


@dataclass(frozen=True)
class SymbolFrame:
    """One CPI worth of symbols.

    DDM carries a single delay/amplitude/Doppler triple; TDM carries one
    delay and one amplitude symbol per PRI plus a per-CPI Doppler symbol.
    """

    scheme: str
    delay_symbols: np.ndarray      # int, len 1 (DDM) or Nc (TDM), in [0, Ns/2)
    amplitude_symbols: np.ndarray  # int, len 1 (DDM) or Nc (TDM), in [0, N_Q)
    doppler_symbol: int            # in [0, Nc)


@dataclass(frozen=True)
class TxFrame:
    """Transmit-side description of one CPI.

    code[t, m] is antenna t's slow-time sample at PRI m: the Doppler-offset
    ramp times the data code (and 0 on PRIs where a TDM antenna is silent).
    extra_delay_s[m] is the deliberate delay added to every antenna at PRI m.
    """

    scheme: str
    code: np.ndarray               # complex, (n_tx, Nc)
    extra_delay_s: np.ndarray      # (Nc,)
    ddm_offsets: tuple[int, ...]
    frame: SymbolFrame | None      # None for an unmodulated reference frame

    @property
    def n_tx(self) -> int:
        return self.code.shape[0]


def default_ddm_offsets(n_tx: int, nc: int) -> tuple[int, ...]:
    """Doppler-bin offsets assigned to the transmit antennas.

    Uniform spacing nc/n_tx would make the replica comb invariant under
    shifts of nc/n_tx, silently shrinking the Doppler alphabet; nudging the
    middle offsets breaks every nontrivial cyclic symmetry so the full
    [0, nc) shift alphabet stays decodable.
    """
    if n_tx == 1:
        return (0,)
    if n_tx == 2:
        base = [0, nc // 2 - 1]
    else:
        base = [round(nc * t / n_tx) for t in range(n_tx)]
        for t in range(1, n_tx - 1):
            base[t] -= 1
    offsets = tuple(o % nc for o in base)
    if len(set(offsets)) != n_tx:
        raise FrameError(f"degenerate Doppler offsets for n_tx={n_tx}, nc={nc}")
    ref = sorted(offsets)
    for s in range(1, nc):
        if sorted((o + s) % nc for o in offsets) == ref:
            raise FrameError(f"Doppler offsets {offsets} repeat under shift {s}; "
                             "the Doppler alphabet would be ambiguous")
    return offsets


def _bits_to_int(bits: np.ndarray) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _int_to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def pack_bits(bits, scheme: str, params: DerivedParams,
              config: ChirpConfig) -> SymbolFrame:
    """Map a bit sequence onto one frame of symbols.

    Natural binary, MSB first, field order delay -> amplitude -> Doppler
    (TDM packs all Nc delay symbols, then all Nc amplitude symbols).
    """
    bits = np.asarray(list(bits), dtype=np.int64)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise FrameError("payload must be a 0/1 sequence")
    expect = frame_bits(scheme, params, config)
    if bits.size != expect:
        raise FrameError(f"{scheme} frame needs {expect} bits, got {bits.size}")
    d, a, v = (params.delay_alphabet_bits, params.amplitude_alphabet_bits,
               params.doppler_alphabet_bits)
    n_sym = 1 if scheme == DDM else config.chirps_per_cpi
    pos = 0
    delays = np.empty(n_sym, dtype=np.int64)
    for i in range(n_sym):
        delays[i] = _bits_to_int(bits[pos:pos + d])
        pos += d
    amps = np.empty(n_sym, dtype=np.int64)
    for i in range(n_sym):
        amps[i] = _bits_to_int(bits[pos:pos + a])
        pos += a
    doppler = _bits_to_int(bits[pos:pos + v])
    return SymbolFrame(scheme=scheme, delay_symbols=delays,
                       amplitude_symbols=amps, doppler_symbol=doppler)


def unpack_bits(frame: SymbolFrame, params: DerivedParams,
                config: ChirpConfig) -> np.ndarray:
    """Inverse of pack_bits."""
    d, a, v = (params.delay_alphabet_bits, params.amplitude_alphabet_bits,
               params.doppler_alphabet_bits)
    out: list[int] = []
    for s in frame.delay_symbols:
        out.extend(_int_to_bits(int(s), d))
    for s in frame.amplitude_symbols:
        out.extend(_int_to_bits(int(s), a))
    out.extend(_int_to_bits(int(frame.doppler_symbol), v))
    return np.array(out, dtype=np.int64)


def amplitude_gain(symbol: int, qam_order: int) -> complex:
    """Unit-modulus constellation point at phase (2k+1) pi / N_Q."""
    return np.exp(1j * (2.0 * np.pi * symbol / qam_order + np.pi / qam_order))


def data_code(frame: SymbolFrame | None, nc: int, qam_order: int) -> np.ndarray:
    """The common (antenna-independent) slow-time data code of a frame."""
    if frame is None:
        return np.ones(nc, dtype=np.complex128)
    m = np.arange(nc)
    ramp = np.exp(2j * np.pi * frame.doppler_symbol * m / nc)
    if frame.scheme == DDM:
        return ramp * amplitude_gain(int(frame.amplitude_symbols[0]), qam_order)
    gains = np.array([amplitude_gain(int(s), qam_order)
                      for s in frame.amplitude_symbols])
    return ramp * gains


def build_tx_frame(frame: SymbolFrame, array: ArrayConfig,
                   params: DerivedParams, config: ChirpConfig,
                   ddm_offsets: tuple[int, ...] | None = None) -> TxFrame:
    """Turn a symbol frame into per-antenna slow-time codes and delays."""
    nc = config.chirps_per_cpi
    n_tx = array.n_tx
    if np.any(frame.delay_symbols < 0) or np.any(frame.delay_symbols >= params.max_range_bins):
        raise FrameError("delay symbol outside [0, Ns/2)")
    if np.any(frame.amplitude_symbols < 0) or np.any(frame.amplitude_symbols >= config.qam_order):
        raise FrameError("amplitude symbol outside [0, N_Q)")
    if not 0 <= frame.doppler_symbol < nc:
        raise FrameError("Doppler symbol outside [0, Nc)")
    n_sym = 1 if frame.scheme == DDM else nc
    if len(frame.delay_symbols) != n_sym or len(frame.amplitude_symbols) != n_sym:
        raise FrameError(f"{frame.scheme} frame expects {n_sym} delay/amplitude symbols")

    common = data_code(frame, nc, config.qam_order)
    m = np.arange(nc)
    if frame.scheme == DDM:
        offsets = default_ddm_offsets(n_tx, nc) if ddm_offsets is None else tuple(ddm_offsets)
        if len(offsets) != n_tx:
            raise FrameError(f"need {n_tx} Doppler offsets, got {len(offsets)}")
        code = np.exp(2j * np.pi * np.outer(offsets, m) / nc) * common[None, :]
        extra = np.full(nc, frame.delay_symbols[0] / config.bandwidth_hz)
    else:
        offsets = ()
        code = np.zeros((n_tx, nc), dtype=np.complex128)
        for t in range(n_tx):
            sel = (m % n_tx) == t
            code[t, sel] = common[sel]
        extra = frame.delay_symbols.astype(np.float64) / config.bandwidth_hz
    return TxFrame(scheme=frame.scheme, code=code, extra_delay_s=extra,
                   ddm_offsets=offsets, frame=frame)


def build_reference_frame(scheme: str, array: ArrayConfig, params: DerivedParams,
                          config: ChirpConfig,
                          ddm_offsets: tuple[int, ...] | None = None) -> TxFrame:
    """Unmodulated frame (zero delay/Doppler shift, unit gain) used for the
    initial sensing stage that establishes the receiver's reference."""
    nc = config.chirps_per_cpi
    n_tx = array.n_tx
    m = np.arange(nc)
    if scheme == DDM:
        offsets = default_ddm_offsets(n_tx, nc) if ddm_offsets is None else tuple(ddm_offsets)
        code = np.exp(2j * np.pi * np.outer(offsets, m) / nc)
    elif scheme == TDM:
        offsets = ()
        code = np.zeros((n_tx, nc), dtype=np.complex128)
        for t in range(n_tx):
            code[t, (m % n_tx) == t] = 1.0
    else:
        raise FrameError(f"unknown scheme {scheme!r}")
    return TxFrame(scheme=scheme, code=code, extra_delay_s=np.zeros(nc),
                   ddm_offsets=offsets, frame=None)
