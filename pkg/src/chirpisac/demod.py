"""Reference tracking across CPIs and payload extraction from the
detection-vs-reference discrepancies.

The receiver learns the link's unmodulated position (range bin, Doppler comb
base, peak phase) during an initial sensing stage, predicts how that
reference moves between CPIs, and reads each data CPI relative to the
prediction: the range-bin discrepancy is the delay symbol, the comb shift is
the Doppler symbol and the phase rotation at an anchored cell is the
amplitude symbol.  An alpha-beta tracker keeps the reference locked while
symbols are stripped.

Phase bookkeeping: all phases are measured as arg(v_ref^H v), where v_ref is
the per-channel reference vector captured at initialization (a matched filter
across the array) and v is read at integer cells anchored to the reference,
shifted only by the demodulated integer symbols.  Between CPIs the phase
advances by 2 pi f_d Nc Tc (only its fractional-bin part matters modulo 2 pi)
plus a small predictable term from the range-bin drift under the anchored
read cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .cfg import DDM, TDM, System, frame_bits
from .rxdsp import (Detection, SeparatedTarget, circ_dist, cluster_and_centroid,
                    compute_rdm, cfar_detect, ddm_separate, dirichlet, fine_offset,
                    music_azimuth, power_map)
from .txmod import SymbolFrame, default_ddm_offsets, unpack_bits


def wrap_phase(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def signed_doppler_bin(doppler_bin: float, nc: int) -> float:
    """Map a cyclic Doppler bin to the signed unambiguous interval."""
    return (doppler_bin + nc / 2.0) % nc - nc / 2.0


def anchor_drift_phase(range_rate_bins: float, ns: int) -> float:
    """Phase slope of the fast-time DFT under a fixed read cell while the
    tone drifts range_rate_bins per CPI."""
    return np.pi * (ns - 1) / ns * range_rate_bins


@dataclass
class TrackState:
    """Per-link (or per-target) reference state."""

    range_bin: float              # tracked unmodulated tone position, full band
    doppler_bin: float            # comb base (antenna 0 offset removed), [0, Nc)
    azimuth_deg: float
    phase: float                  # arg(v_ref^H v) expected at the anchor cells
    phase_advance: float          # rad per CPI
    range_rate: float             # bins per CPI
    anchor_dopp: int              # antenna-0 read cell
    anchor_range: int
    ref_vector: np.ndarray        # (n_rx,) complex matched-filter weights
    ref_phase: float              # peak phase of the strongest replica at init
    cpi_index: int = 0
    coast_count: int = 0
    alpha: float = 0.5
    beta: float = 0.25

    @property
    def dropped(self) -> bool:
        return self.coast_count >= 3


@dataclass
class DemodResult:
    detected: bool
    bits: np.ndarray | None = None          # None marks the all-error frame
    n_bits: int = 0
    delay_symbol_hat: int | None = None
    doppler_symbol_hat: int | None = None
    amplitude_symbol_hat: int | None = None
    residual_range_bin: float = np.nan
    residual_doppler_bin: float = np.nan
    residual_phase: float = np.nan
    measured_phase: float = np.nan          # arg(v_ref^H v) minus the data phase
    read_cell: tuple[int, int] | None = None


@dataclass(frozen=True)
class Predicted:
    range_bin: float
    doppler_bin: float
    phase: float


class InitializationError(RuntimeError):
    """No complete comb to initialize a reference from."""


def _beamformed(rdm: np.ndarray, ref_vector: np.ndarray, d: int, r: int) -> complex:
    return complex(np.vdot(ref_vector, rdm[:, d, r]))


def _fine_doppler(rdm: np.ndarray, ref_vector: np.ndarray, d: int, r: int) -> float:
    nd = rdm.shape[1]
    vals = [
        _beamformed(rdm, ref_vector, (d - 1) % nd, r),
        _beamformed(rdm, ref_vector, d, r),
        _beamformed(rdm, ref_vector, (d + 1) % nd, r),
    ]
    return fine_offset(*vals, nd)


def _comb_fine_doppler(rdm: np.ndarray, ref_vector: np.ndarray, d0: int, r0: int,
                       offsets: tuple[int, ...], iterations: int = 3) -> float:
    """Common fractional Doppler offset of a replica comb.

    A plain three-point interpolation at one replica is biased by the
    sidelobes of the other replicas (about a percent of their peaks), which
    is too much for the phase-advance prediction.  Estimating all replica
    gains and subtracting the cross-leakage for a couple of rounds leaves
    the estimator essentially exact on noiseless data.
    """
    nd = rdm.shape[1]
    cells = np.array([(d0 + o - offsets[0]) % nd for o in offsets])
    ks = np.array([-1, 0, 1])
    vals = np.array([
        [_beamformed(rdm, ref_vector, int((c + k) % nd), r0) for k in ks]
        for c in cells
    ])
    delta = 0.0
    corr = vals.copy()
    for _ in range(iterations):
        ests = [fine_offset(*corr[t], nd) for t in range(len(cells))]
        delta = float(np.mean(ests))
        gains = corr[:, 1] / dirichlet(delta, nd)
        corr = vals.copy()
        for t in range(len(cells)):
            for tp in range(len(cells)):
                if tp == t:
                    continue
                # circular offset of replica tp's tone from replica t's cells
                x = (cells[tp] + delta - cells[t] - ks + nd / 2.0) % nd - nd / 2.0
                corr[t] -= gains[tp] * dirichlet(x, nd)
    return delta


def _fine_range(rdm: np.ndarray, ref_vector: np.ndarray, d: int, r: int) -> float:
    nr = rdm.shape[2]
    if r == 0 or r == nr - 1:
        return 0.0
    vals = [
        _beamformed(rdm, ref_vector, d, r - 1),
        _beamformed(rdm, ref_vector, d, r),
        _beamformed(rdm, ref_vector, d, r + 1),
    ]
    return fine_offset(*vals, rdm.shape[2])


def init_reference(separated: SeparatedTarget, rdm: np.ndarray, system: System,
                   offsets: tuple[int, ...], azimuth_deg: float = np.nan) -> TrackState:
    """Build the reference from an unmodulated CPI's separated comb.

    The Doppler fractional part is refined with a cross-leakage-corrected
    three-point DFT interpolator because the phase-advance prediction needs
    it to a small fraction of a bin, which leakage centroids cannot deliver.
    """
    cfg, par = system.chirp, system.derived
    nc = cfg.chirps_per_cpi
    d0, r0 = separated.anchor_cell
    ref_vec = separated.snapshot[0].copy()
    nrm = np.linalg.norm(ref_vec)
    if nrm == 0:
        raise InitializationError("empty reference snapshot")
    ref_vec /= nrm

    rdm = rdm if rdm.ndim == 3 else rdm[None]
    dopp_fine = d0 + _comb_fine_doppler(rdm, ref_vec, d0, r0, tuple(offsets))
    range_fine = r0 + _fine_range(rdm, ref_vec, d0, r0)
    base_fine = (dopp_fine - offsets[0]) % nc

    signed = signed_doppler_bin(base_fine, nc)
    rate = signed * cfg.bandwidth_hz / cfg.carrier_hz  # bins per CPI
    advance = wrap_phase(2.0 * np.pi * dopp_fine
                         + anchor_drift_phase(rate, par.samples_per_pri))
    strongest = separated.replicas[0].peak_value
    return TrackState(
        range_bin=range_fine,
        doppler_bin=base_fine,
        azimuth_deg=azimuth_deg,
        phase=0.0,
        phase_advance=advance,
        range_rate=rate,
        anchor_dopp=d0,
        anchor_range=r0,
        ref_vector=ref_vec,
        ref_phase=float(np.angle(strongest[np.argmax(np.abs(strongest))])),
    )


def predict(state: TrackState, system: System) -> Predicted:
    """Constant-velocity advance to the next CPI: the range bin moves by the
    tracked rate, the Doppler bin stays, the phase gains one advance step."""
    return Predicted(
        range_bin=state.range_bin + state.range_rate,
        doppler_bin=state.doppler_bin,
        phase=state.phase + state.phase_advance,
    )


def demodulate(detections: list[Detection], rdm: np.ndarray, state: TrackState,
               system: System, offsets: tuple[int, ...]) -> DemodResult:
    """Extract one DDM frame from the detections of a data CPI."""
    cfg, par = system.chirp, system.derived
    nc = cfg.chirps_per_cpi
    nd = rdm.shape[1]
    ns2 = par.max_range_bins
    n_bits = (par.delay_alphabet_bits + par.amplitude_alphabet_bits
              + par.doppler_alphabet_bits)
    if state.dropped:
        return DemodResult(detected=False, n_bits=n_bits)
    pred = predict(state, system)
    rdm = rdm if rdm.ndim == 3 else rdm[None]

    # symbol decisions use the peak-interpolated positions; leakage centroids
    # wander by up to a bin, far too coarse next to a one-bin symbol spacing
    best = None
    order = sorted(range(len(detections)), key=lambda i: -detections[i].power)
    for i in order:
        det0 = detections[i]
        raw = (det0.fine_doppler_bin - offsets[0] - pred.doppler_bin) % nc
        shift = int(round(raw)) % nc
        if circ_dist(raw, shift, nc) > 0.49:
            continue
        members = [det0]
        dist_sum = circ_dist(det0.fine_doppler_bin,
                             (pred.doppler_bin + offsets[0] + shift) % nc, nc)
        ok = True
        for t in range(1, len(offsets)):
            expected = (pred.doppler_bin + offsets[t] + shift) % nc
            cand, cand_key = None, None
            for det in detections:
                if det in members:
                    continue
                if abs(det.fine_range_bin - det0.fine_range_bin) > 0.35:
                    continue
                d = circ_dist(det.fine_doppler_bin, expected, nc)
                if d > 0.49:
                    continue
                key = (det.power, -d)
                if cand_key is None or key > cand_key:
                    cand, cand_key = det, key
            if cand is None:
                ok = False
                break
            members.append(cand)
            dist_sum += cand_key[1] * -1.0
        if not ok:
            continue
        score = (sum(d.power for d in members), -dist_sum)
        if best is None or score > best[0]:
            best = (score, shift, members)
    if best is None:
        return DemodResult(detected=False, n_bits=n_bits)

    _, shift, members = best
    fine_pos = members[0].fine_doppler_bin
    r_star = members[0].fine_range_bin
    delay_hat = int(round(r_star - pred.range_bin)) % ns2
    residual_dopp = float(wrap_phase(2 * np.pi * (fine_pos - offsets[0] - shift
                                                  - pred.doppler_bin) / nc)
                          * nc / (2 * np.pi))
    residual_range = float(r_star - pred.range_bin - delay_hat)

    read_d = (state.anchor_dopp + shift) % nd
    read_r = state.anchor_range + delay_hat + int(round(pred.range_bin - state.range_bin))
    read_r = min(max(read_r, 0), rdm.shape[2] - 1)
    z = _beamformed(rdm, state.ref_vector, read_d, read_r)
    psi = wrap_phase(np.angle(z) - pred.phase)
    nq = cfg.qam_order
    points = (2.0 * np.arange(nq) + 1.0) * np.pi / nq
    amp_hat = int(np.argmin(np.abs(wrap_phase(psi - points))))
    residual_phase = float(wrap_phase(psi - points[amp_hat]))

    frame = SymbolFrame(scheme=DDM,
                        delay_symbols=np.array([delay_hat]),
                        amplitude_symbols=np.array([amp_hat]),
                        doppler_symbol=shift)
    bits = unpack_bits(frame, par, cfg)
    return DemodResult(
        detected=True, bits=bits, n_bits=n_bits,
        delay_symbol_hat=delay_hat, doppler_symbol_hat=shift,
        amplitude_symbol_hat=amp_hat,
        residual_range_bin=residual_range,
        residual_doppler_bin=residual_dopp,
        residual_phase=residual_phase,
        measured_phase=float(np.angle(z) - points[amp_hat]),
        read_cell=(read_d, read_r),
    )


def update(state: TrackState, result: DemodResult, system: System) -> TrackState:
    """Alpha-beta blend of the prediction with the symbol-stripped residuals;
    a failed detection coasts on the prediction and counts toward the
    three-coast drop rule."""
    cfg, par = system.chirp, system.derived
    nc = cfg.chirps_per_cpi
    ns = par.samples_per_pri
    pred = predict(state, system)
    state.cpi_index += 1
    if not result.detected:
        state.coast_count += 1
        state.range_bin = pred.range_bin
        state.phase = wrap_phase(pred.phase)
        return state

    state.coast_count = 0
    state.range_bin = pred.range_bin + state.alpha * result.residual_range_bin
    state.range_rate += state.beta * result.residual_range_bin
    state.doppler_bin = (pred.doppler_bin
                         + state.alpha * result.residual_doppler_bin) % nc

    err = wrap_phase(result.measured_phase - pred.phase)
    state.phase = wrap_phase(pred.phase + err)       # re-anchor on measurement
    state.phase_advance = wrap_phase(state.phase_advance + state.beta * err)

    # keep the read anchor centered on the drifting tone; shifting the anchor
    # by k cells steps the expected Dirichlet phase by -pi (N-1)/N per cell
    new_anchor = int(round(state.range_bin))
    shift_r = new_anchor - state.anchor_range
    if shift_r:
        state.anchor_range = new_anchor
        state.phase = wrap_phase(state.phase - anchor_drift_phase(float(shift_r), ns))
    return state


def sensing_estimates(range_bin: float, doppler_bin: float, system: System,
                      snapshot: np.ndarray | None = None,
                      azimuth_deg: float | None = None) -> tuple[float, float, float]:
    """Convert stripped echo-path bins to physical units, with the azimuth
    taken from the matched-filter search when a snapshot is given."""
    par = system.derived
    nc = system.chirp.chirps_per_cpi
    rng_m = range_bin * par.range_resolution
    vel = signed_doppler_bin(doppler_bin, nc) * par.velocity_resolution
    if azimuth_deg is None:
        if snapshot is None:
            raise ValueError("need a snapshot or an azimuth")
        azimuth_deg = music_azimuth(snapshot, system.array)
    return rng_m, vel, float(azimuth_deg)


# receive-chain orchestration -------------------------------------------------


_CFAR_GUARD = (2, 2)
_CFAR_TRAIN = (8, 8)
_CFAR_PFA = 1e-4


def detect_cube(cube, system: System, keep_bins: int | None = None,
                pfa: float = _CFAR_PFA) -> tuple[list[Detection], np.ndarray]:
    """RDM -> CA-CFAR -> leakage clustering for one cube.

    Also accepts an already RDM-domain stack (anything exposing .power and
    per-cell channel vectors), in which case the transform is skipped."""
    if hasattr(cube, "power"):
        rdm, p = cube, cube.power
    else:
        rdm = compute_rdm(cube, keep_bins=keep_bins)
        p = power_map(rdm)
    mask = cfar_detect(p, n_channels=cube.shape[0], guard=_CFAR_GUARD,
                       train=_CFAR_TRAIN, pfa=pfa)
    return cluster_and_centroid(mask, p, rdm), rdm


def sense_combs(dets: list[Detection], rdm, system: System,
                offsets: tuple[int, ...],
                with_azimuth: bool = True) -> list[tuple[SeparatedTarget, tuple]]:
    """Separate detections into antenna combs and convert to physical units."""
    nc = system.chirp.chirps_per_cpi
    combs = ddm_separate(dets, rdm, offsets, nc)
    out = []
    for sep in combs:
        az = music_azimuth(sep.snapshot, system.array) if with_azimuth else np.nan
        est = sensing_estimates(sep.range_bin, sep.base_doppler_bin, system,
                                azimuth_deg=az)
        out.append((sep, est))
    return out


def at_sense(cube: np.ndarray, tx_frame, system: System,
             with_azimuth: bool = True) -> list[tuple[SeparatedTarget, tuple]]:
    """Active-side sensing of one CPI: strip the transceiver's own
    modulation, separate the Doppler combs and convert to physical units."""
    from .channel import strip_known_modulation

    nc = system.chirp.chirps_per_cpi
    offsets = tx_frame.ddm_offsets or default_ddm_offsets(system.array.n_tx, nc)
    stripped = strip_known_modulation(cube, tx_frame, system)
    dets, rdm = detect_cube(stripped, system)
    return sense_combs(dets, rdm, system, offsets, with_azimuth)


class LinkSession:
    """Passive-side receive chain for one link under the DDM scheme.

    Call initialize() with the unmodulated CPI's cube, then demodulate_cpi()
    for each data CPI; the internal track state carries the reference."""

    def __init__(self, system: System, offsets: tuple[int, ...] | None = None):
        self.system = system
        nc = system.chirp.chirps_per_cpi
        self.offsets = offsets or default_ddm_offsets(system.array.n_tx, nc)
        self.state: TrackState | None = None
        self.n_bits = frame_bits(DDM, system.derived, system.chirp)

    def _detect(self, cube):
        return detect_cube(cube, self.system,
                           keep_bins=self.system.derived.samples_per_pri)

    def initialize(self, cube: np.ndarray) -> bool:
        dets, rdm = self._detect(cube)
        nc = self.system.chirp.chirps_per_cpi
        combs = ddm_separate(dets, rdm, self.offsets, nc)
        if not combs:
            self.state = None
            return False
        sep = max(combs, key=lambda s: sum(r.power for r in s.replicas))
        self.state = init_reference(sep, rdm, self.system, self.offsets)
        return True

    def demodulate_cpi(self, cube: np.ndarray) -> DemodResult:
        if self.state is None or self.state.dropped:
            return DemodResult(detected=False, n_bits=self.n_bits)
        dets, rdm = self._detect(cube)
        result = demodulate(dets, rdm, self.state, self.system, self.offsets)
        update(self.state, result, self.system)
        return result


class TdmLinkSession:
    """Passive-side receive chain for the TDM scheme.

    The link is detected per antenna on decimated slow-time maps (only every
    n_tx-th PRI carries a given antenna).  Data demodulation is per PRI for
    the delay symbol (beamformed envelope peak) and joint over the CPI for
    the Doppler/amplitude phases: the per-PRI phase-modulation folds away
    under a fourth power, which pins the Doppler shift modulo Nc/n_tx and the
    cross-antenna phase slope supplies the next two bits.  The remaining
    quotient is not observable through per-PRI phases and is taken as zero.
    """

    def __init__(self, system: System):
        self.system = system
        self.state_phase: np.ndarray | None = None     # per antenna
        self.ref_vectors: np.ndarray | None = None     # (n_tx, n_rx)
        self.anchor_range: int = 0
        self.range_fine: float = 0.0
        self.range_rate: float = 0.0
        self.phase_advance: float = 0.0
        self.dec_dopp: float = 0.0                     # decimated-axis bin
        self.cpi_step: int = 0
        self.n_bits = frame_bits(TDM, system.derived, system.chirp)

    def _per_antenna_rdms(self, cube: np.ndarray) -> np.ndarray:
        n_tx = self.system.array.n_tx
        fast = sfft.fft(cube, axis=-1)
        return np.stack([sfft.fft(fast[:, t::n_tx, :], axis=-2)
                         for t in range(n_tx)])   # (n_tx, n_rx, Nc/n_tx, Ns)

    def initialize(self, cube: np.ndarray) -> bool:
        sysm = self.system
        cfg = sysm.chirp
        nc = cfg.chirps_per_cpi
        n_tx = sysm.array.n_tx
        if cfg.qam_order != 4 or (nc // n_tx) % 4:
            raise ValueError("TDM demodulation implemented for QPSK with "
                             "Nc/n_tx divisible by 4")
        rdms = self._per_antenna_rdms(cube)
        cells = []
        for t in range(n_tx):
            p = power_map(rdms[t])
            mask = cfar_detect(p, n_channels=cube.shape[0], guard=_CFAR_GUARD,
                               train=_CFAR_TRAIN, pfa=_CFAR_PFA)
            dets = cluster_and_centroid(mask, p, rdms[t])
            if not dets:
                self.ref_vectors = None
                return False
            cells.append(dets[0].peak_cell)
        r0 = cells[0][1]
        vecs = np.stack([rdms[t][:, cells[t][0], r0] for t in range(n_tx)])
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if not norms.all():
            self.ref_vectors = None
            return False
        self.ref_vectors = vecs / norms
        self.anchor_range = r0

        rdm0 = rdms[0]
        frac_d = _fine_doppler(rdm0, self.ref_vectors[0], cells[0][0], r0)
        frac_r = _fine_range(rdm0, self.ref_vectors[0], cells[0][0], r0)
        self.range_fine = r0 + frac_r
        nd_dec = rdm0.shape[1]
        self.dec_dopp = (cells[0][0] + frac_d) % nd_dec
        # the decimated Doppler is ambiguous modulo Nc/n_tx; the smallest
        # signed representative serves for ramp removal and range drift
        signed = signed_doppler_bin(self.dec_dopp, nd_dec)
        self.base_ramp = signed          # bins on the full slow-time axis
        self.range_rate = signed * cfg.bandwidth_hz / cfg.carrier_hz
        self.phase_advance = wrap_phase(
            2.0 * np.pi * (self.dec_dopp % 1.0)
            + anchor_drift_phase(self.range_rate, sysm.derived.samples_per_pri))

        # per-antenna phase constants calibrated in the per-PRI domain, where
        # the data CPIs are read
        fast = sfft.fft(cube, axis=-1)
        m = np.arange(nc)
        ant = m % n_tx
        z0 = np.einsum("mr,rm->m", self.ref_vectors[ant].conj(), fast[:, :, r0])
        resid = np.angle(z0) - 2.0 * np.pi * self.base_ramp * m / nc
        self.state_phase = np.array([
            np.angle(np.mean(np.exp(1j * resid[ant == t]))) for t in range(n_tx)
        ])
        self.cpi_step = 0
        return True

    def demodulate_cpi(self, cube: np.ndarray) -> DemodResult:
        sysm = self.system
        cfg, par = sysm.chirp, sysm.derived
        nc, ns = cfg.chirps_per_cpi, par.samples_per_pri
        n_tx = sysm.array.n_tx
        nq = cfg.qam_order
        if self.ref_vectors is None:
            return DemodResult(detected=False, n_bits=self.n_bits)
        self.cpi_step += 1

        fast = sfft.fft(cube, axis=-1)              # (n_rx, Nc, Ns)
        drift = self.range_rate * self.cpi_step
        base_cell = self.anchor_range + int(round(drift))
        n_cand = par.max_range_bins
        cand = (base_cell + np.arange(n_cand)) % ns

        m = np.arange(nc)
        ant = m % n_tx
        beams = np.einsum("mr,rmn->mn", self.ref_vectors[ant].conj(),
                          fast[:, :, cand])         # (Nc, Ns/2)
        stats = np.abs(beams) ** 2
        k = np.argmax(stats, axis=1)
        kc = np.clip(k, 1, n_cand - 2)
        num = beams[m, kc - 1] - beams[m, kc + 1]
        den = 2.0 * beams[m, kc] - beams[m, kc - 1] - beams[m, kc + 1]
        frac = np.where(np.abs(den) > 0, (num / np.where(den == 0, 1, den)).real, 0.0)
        frac = np.clip(frac * np.tan(np.pi / n_cand) / (np.pi / n_cand), -0.5, 0.5)
        pos = kc + frac
        offset = (self.range_fine - self.anchor_range) + drift - int(round(drift))
        delay_hat = np.clip(np.round(pos - offset).astype(np.int64), 0, n_cand - 1)

        z = beams[m, k]
        pred = self.state_phase[ant] + self.phase_advance * self.cpi_step
        psi = wrap_phase(np.angle(z) - pred
                         - 2.0 * np.pi * self.base_ramp * m / nc)

        # raising to the 4th power folds QPSK away: per antenna a decimated
        # tone at 4 v mod Nc/n_tx, across antennas a phase slope 8 pi v t / Nc
        nd_dec = nc // n_tx
        fold = np.exp(4j * psi)
        spec = np.stack([sfft.fft(fold[t::n_tx]) for t in range(n_tx)])
        n_u = nd_dec // 4
        bins4 = (4 * np.arange(n_u)) % nd_dec
        pow4 = np.abs(spec[:, bins4]) ** 2
        u_hat = int(np.argmax(pow4.sum(axis=0)))         # v mod Nc/(4 n_tx)
        sel = spec[:, bins4[u_hat]]
        t_idx = np.arange(n_tx)
        g_scores = [
            np.abs(np.sum(sel * np.exp(-8j * np.pi * (u_hat + n_u * g) * t_idx / nc)))
            for g in range(4)
        ]
        # the quotient v div (Nc/n_tx) is unobservable through per-PRI phases
        # (any candidate differs by exact QPSK steps); it is taken as zero
        v_hat = (u_hat + n_u * int(np.argmax(g_scores))) % nd_dec

        ramp = 2.0 * np.pi * v_hat * m / nc
        points = (2.0 * np.arange(nq) + 1.0) * np.pi / nq
        rho = wrap_phase(psi - ramp)
        amp_hat = np.argmin(np.abs(wrap_phase(rho[:, None] - points[None, :])), axis=1)

        frame = SymbolFrame(scheme=TDM, delay_symbols=delay_hat.astype(np.int64),
                            amplitude_symbols=amp_hat.astype(np.int64),
                            doppler_symbol=int(v_hat))
        bits = unpack_bits(frame, par, cfg)
        resid_r = float(np.median(pos - offset - delay_hat))
        return DemodResult(detected=True, bits=bits, n_bits=self.n_bits,
                           delay_symbol_hat=int(delay_hat[0]),
                           doppler_symbol_hat=int(v_hat),
                           amplitude_symbol_hat=int(amp_hat[0]),
                           residual_range_bin=resid_r)
