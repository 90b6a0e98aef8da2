"""RDM-domain equivalent of the cube pipeline for Monte Carlo throughput.

Every propagation path in the post-dechirp model is a 2D complex exponential,
so its unnormalized 2D DFT is a closed-form product of two Dirichlet kernels,
and the DFT of the white cube noise is again white with variance Ns * Nc per
cell.  This module builds the per-channel range-Doppler stack directly in
that domain: exact closed-form signal values plus per-channel complex noise
on the cells where the signal is non-negligible, and a channel-summed
Gamma(n_rx) power draw everywhere else (the exact marginal of the noncoherent
sum).  Downstream processing (CFAR, clustering, comb separation, anchored
phase reads) is byte-for-byte the same code as the cube path: a FastRdm
quacks like the (n_rx, Nc, Ns) complex stack it replaces.

The construction is distribution-exact apart from dropping signal skirts
below ``hot_eps`` of the per-cell noise power (default -25 dB), and it
requires noise to be present; noiseless studies use the cube path, against
which this engine is validated in the test suite.
"""

from __future__ import annotations

import numpy as np

from .cfg import C0, System
from .rxdsp import dirichlet
from .txmod import TxFrame
from .channel import LinkGeometry, Target, _array_phases, _noise_sigma, check_target

HOT_EPS = 3e-3


class FastRdm:
    """Channel-summed power map plus on-demand per-channel complex values."""

    ndim = 3

    def __init__(self, power: np.ndarray, hot_index: np.ndarray,
                 hot_values: np.ndarray, noise_var_cell: float,
                 n_channels: int, rng: np.random.Generator):
        self.power = power                    # (Nd, Nr)
        self._hot_index = hot_index           # (Nd, Nr) int32, -1 where cold
        self._hot_values = hot_values         # (n_ch, n_hot)
        self._noise_var = noise_var_cell
        self._rng = rng
        self._lazy: dict[tuple[int, int], np.ndarray] = {}
        self.shape = (n_channels, power.shape[0], power.shape[1])

    def __getitem__(self, key) -> np.ndarray:
        _, d, r = key
        d = int(d)
        r = int(r)
        j = int(self._hot_index[d, r])
        if j >= 0:
            return self._hot_values[:, j]
        cell = (d, r)
        out = self._lazy.get(cell)
        if out is None:
            # noise-only cell: complex vector conditioned on the already
            # drawn summed power (uniform on the sphere of that radius)
            u = self._rng.standard_normal(2 * self.shape[0]).view(np.complex128)
            nrm = np.linalg.norm(u)
            out = u * (np.sqrt(self.power[d, r]) / nrm if nrm > 0 else 0.0)
            self._lazy[cell] = out
        return out


def _build(paths, shape, fft_ns, noise_sigma_sample, n_samples_total, n_ch,
           rng: np.random.Generator) -> FastRdm:
    """Assemble a FastRdm from (amp_per_channel, doppler_pos, range_pos)
    path triples; the map keeps `shape` cells, but the range kernel belongs
    to the full fft_ns-point transform."""
    nd, nr = shape
    if noise_sigma_sample <= 0.0:
        raise ValueError("the RDM-domain engine needs a finite SNR; "
                         "use the cube path for noiseless runs")
    var_cell = n_samples_total * noise_sigma_sample**2

    kd = np.arange(nd)
    kr = np.arange(nr)
    bound_d = np.zeros(nd)
    bound_r = np.zeros(nr)
    terms = []
    for amps, p_d, p_r in paths:
        dd = np.stack([dirichlet(p - kd, nd) for p in np.atleast_1d(p_d)])
        dr = dirichlet(p_r - kr, fft_ns)
        terms.append((np.atleast_2d(amps), dd, dr))
        bound_d += np.abs(dd).sum(axis=0)
        bound_r = np.maximum(bound_r, np.abs(dr))

    hot = np.outer(bound_d**2, bound_r**2) > HOT_EPS * var_cell
    for ax, wrap in ((0, True), (1, False)):
        grown = hot.copy()
        if wrap:
            grown |= np.roll(hot, 1, axis=ax) | np.roll(hot, -1, axis=ax)
        else:
            grown[:, 1:] |= hot[:, :-1]
            grown[:, :-1] |= hot[:, 1:]
        hot = grown

    hd, hr = np.nonzero(hot)
    n_hot = hd.size
    sig = np.zeros((n_ch, n_hot), dtype=np.complex128)
    for amps, dd, dr in terms:
        sig += (amps @ dd[:, hd]) * dr[hr]

    power = var_cell * rng.standard_gamma(n_ch, size=(nd, nr))
    noise = (rng.standard_normal(2 * n_ch * n_hot).view(np.complex128)
             .reshape(n_ch, n_hot)) * np.sqrt(var_cell / 2.0)
    vals = sig + noise
    power[hd, hr] = np.einsum("cj,cj->j", vals, vals.conj()).real

    hot_index = np.full((nd, nr), -1, dtype=np.int32)
    hot_index[hd, hr] = np.arange(n_hot, dtype=np.int32)
    return FastRdm(power, hot_index, vals, var_cell, n_ch, rng)


def synthesize_pt_rdm(link: LinkGeometry, tx: TxFrame, system: System,
                      snr_db: float, rng_seed=None, cpi_index: int = 0) -> FastRdm:
    """One-way link RDM stack over the full fast-time band (the data delay
    shift can push the beat past Ns/2)."""
    cfg, par = system.chirp, system.derived
    nc, ns = cfg.chirps_per_cpi, par.samples_per_pri
    rng = np.random.default_rng(rng_seed)
    sigma = _noise_sigma(system, snr_db)

    t_cpi = nc * cfg.pri_s
    r = link.range_m + link.velocity_mps * t_cpi * cpi_index
    f_d = link.velocity_mps / par.wavelength
    frame = tx.frame
    v_sym = 0 if frame is None else frame.doppler_symbol
    gain = 1.0 + 0.0j
    if frame is not None:
        from .txmod import amplitude_gain
        gain = amplitude_gain(int(frame.amplitude_symbols[0]), cfg.qam_order)

    p_r = par.chirp_slope * (r / C0 + tx.extra_delay_s[0]) * cfg.pri_s
    offsets = np.asarray(tx.ddm_offsets)
    p_d = (f_d * cfg.pri_s * nc + offsets + v_sym) % nc
    tx_ph = _array_phases(system, link.aod_deg, link.aod_el_deg, "tx")
    rx_ph = _array_phases(system, link.aoa_deg, link.aoa_el_deg, "rx")
    start = np.exp(2j * np.pi * f_d * cfg.pri_s * nc * cpi_index)
    amps = np.outer(rx_ph, tx_ph) * gain * start     # (n_rx, n_tx)

    paths = [(amps, p_d, p_r % ns)]
    return _build(paths, (nc, ns), ns, sigma, ns * nc, system.array.n_rx, rng)


def synthesize_at_rdm(targets: list[Target], system: System, snr_db: float,
                      rng_seed=None, cpi_index: int = 0,
                      ddm_offsets: tuple[int, ...] | None = None) -> FastRdm:
    """Echo-path RDM stack after the transceiver has stripped its own data
    modulation (the strip restores the unmodulated cube exactly, so the
    stripped map is synthesized directly); fast-time axis keeps Ns/2 bins."""
    from .txmod import default_ddm_offsets

    cfg, par = system.chirp, system.derived
    nc, ns = cfg.chirps_per_cpi, par.samples_per_pri
    keep = par.max_range_bins
    rng = np.random.default_rng(rng_seed)
    sigma = _noise_sigma(system, snr_db)
    offsets = np.asarray(ddm_offsets
                         if ddm_offsets is not None
                         else default_ddm_offsets(system.array.n_tx, nc))
    t_cpi = nc * cfg.pri_s

    paths = []
    for tgt in targets:
        check_target(tgt, system)
        amp = tgt.amplitude
        if amp is None:
            amp = np.exp(2j * np.pi * rng.random())
        r = tgt.range_m + tgt.velocity_mps * t_cpi * cpi_index
        f_d = 2.0 * tgt.velocity_mps / par.wavelength
        p_r = par.chirp_slope * (2.0 * r / C0) * cfg.pri_s
        p_d = (f_d * cfg.pri_s * nc + offsets) % nc
        tx_ph = _array_phases(system, tgt.azimuth_deg, tgt.elevation_deg, "tx")
        rx_ph = _array_phases(system, tgt.azimuth_deg, tgt.elevation_deg, "rx")
        start = np.exp(2j * np.pi * f_d * cfg.pri_s * nc * cpi_index)
        paths.append((np.outer(rx_ph, tx_ph) * amp * start, p_d, p_r))
    return _build(paths, (nc, keep), ns, sigma, ns * nc, system.array.n_rx, rng)
