"""Receiver processing: range-Doppler maps, CA-CFAR, leakage-cluster
centroiding, Doppler-comb separation of the MIMO replicas and matched-filter
angle estimation on the virtual array.

Axis convention: a range-Doppler map is indexed [channel, doppler_bin,
range_bin]; noncoherent detection runs on the magnitude-squared map summed
over channels.  The Doppler axis is cyclic everywhere (CFAR window,
clustering, comb arithmetic); the range axis is not.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy import ndimage, special


class EstimationError(RuntimeError):
    """Angle estimation asked of an empty or degenerate snapshot."""


# range-Doppler map --------------------------------------------------------


def compute_rdm(cube: np.ndarray, keep_bins: int | None = None) -> np.ndarray:
    """2D DFT over slow and fast time, one map per RX channel.

    Unnormalized transform: a unit on-grid tone peaks at Ns * Nc.  By default
    only the first Ns/2 range bins are kept (the designed round-trip delay
    span of the echo path); the one-way link receiver passes keep_bins=Ns
    because data-delay shifts can push its beat into the upper half.
    """
    ns = cube.shape[-1]
    if keep_bins is None:
        keep_bins = ns // 2
    rdm = sfft.fft2(cube, axes=(-2, -1))
    return rdm[..., :keep_bins]


def power_map(rdm: np.ndarray) -> np.ndarray:
    """Noncoherent channel sum |.|^2 -> (doppler, range)."""
    if rdm.ndim == 2:
        rdm = rdm[None]
    flat = rdm.view(rdm.real.dtype).reshape(*rdm.shape, 2)
    return np.einsum("cdrk,cdrk->dr", flat, flat)


# CA-CFAR ------------------------------------------------------------------


@lru_cache(maxsize=None)
def cfar_alpha(n_train: int, pfa: float, n_channels: int = 1) -> float:
    """Exact CA-CFAR scale for the channel-summed square-law detector.

    For one channel this is the textbook N * (pfa**(-1/N) - 1).  Summing L
    channels makes a cell Gamma(L) and the training sum Gamma(L*N); the
    false-alarm constraint then inverts a regularized incomplete beta.
    """
    if n_train <= 0:
        raise ValueError("empty training band")
    if n_channels == 1:
        return n_train * (pfa ** (-1.0 / n_train) - 1.0)
    u = special.betaincinv(n_channels, n_channels * n_train, 1.0 - pfa)
    return n_train * u / (1.0 - u)


def cfar_detect(power: np.ndarray, n_channels: int = 1,
                guard: tuple[int, int] = (2, 2), train: tuple[int, int] = (8, 8),
                pfa: float = 1e-4, min_rel_floor: float = 3e-3) -> np.ndarray:
    """Cell-averaging CFAR on the channel-summed power map.

    The sliding window wraps on the Doppler axis and truncates at the range
    edges (the threshold scale is recomputed for the reduced training count
    there).  min_rel_floor rejects cells more than ~25 dB below the map peak:
    on noise-free maps the leakage skirt of a strong tone would otherwise
    flood the detector with ridge cells, and under noise the floor sits well
    below any cell that could pass the threshold.

    Returns a boolean detection mask.
    """
    nd, nr = power.shape
    gd, gr = guard
    td, tr = train
    wd, wr = gd + td, gr + tr
    if 2 * wd + 1 > nd or 2 * wr + 1 > nr:
        raise ValueError(f"CFAR window {2*wd+1}x{2*wr+1} exceeds map {nd}x{nr}")
    if td <= 0 and tr <= 0:
        raise ValueError("empty training band")

    w = max(wd, wr)
    padded = np.zeros((nd + 2 * w, nr + 2 * w))
    counts = np.zeros_like(padded)
    # doppler wraps, range zero-pads
    padded[:, w: w + nr] = np.vstack([power[-w:], power, power[:w]])
    counts[:, w: w + nr] = 1.0

    def ring(arr):
        big = _box_sum_rect(arr, wd, wr, w, (nd, nr))
        inner = _box_sum_rect(arr, gd, gr, w, (nd, nr))
        return big - inner

    train_sum = ring(padded)
    n_train = np.rint(ring(counts)).astype(np.int64)

    alphas = np.empty_like(train_sum)
    for n in np.unique(n_train):
        alphas[n_train == n] = cfar_alpha(int(n), pfa, n_channels)
    thr = alphas * train_sum / n_train
    mask = power > thr
    if min_rel_floor > 0.0:
        mask &= power > min_rel_floor * power.max()
    return mask


def _box_sum_rect(padded: np.ndarray, wd: int, wr: int, big_w: int,
                  shape: tuple[int, int]) -> np.ndarray:
    s = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.float64)
    s[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    nd, nr = shape
    r0 = big_w - wd
    r1 = big_w + wd + 1
    c0 = big_w - wr
    c1 = big_w + wr + 1
    return (s[r1: r1 + nd, c1: c1 + nr] - s[r0: r0 + nd, c1: c1 + nr]
            - s[r1: r1 + nd, c0: c0 + nr] + s[r0: r0 + nd, c0: c0 + nr])


# clustering / centroiding ---------------------------------------------------


@dataclass
class Detection:
    """One leakage cluster reduced to a point detection.

    doppler_bin/range_bin are the unweighted arithmetic means over the member
    cells (the estimation outputs); fine_doppler_bin/fine_range_bin come from
    three-point interpolation at the peak and anchor all structural matching,
    since centroids wander by up to a bin with the CFAR cell pattern.
    """

    doppler_bin: float             # circular centroid, [0, Nc)
    range_bin: float               # plain centroid
    fine_doppler_bin: float        # peak-interpolated position, [0, Nc)
    fine_range_bin: float
    peak_cell: tuple[int, int]     # (doppler, range) of the strongest member
    power: float                   # channel-summed power at the peak cell
    peak_value: np.ndarray         # per-channel complex value at the peak cell
    member_cells: np.ndarray       # (k, 2)


def cluster_and_centroid(mask: np.ndarray, power: np.ndarray,
                         rdm: np.ndarray) -> list[Detection]:
    """8-connected clustering (Doppler axis cyclic) with unweighted
    arithmetic-mean centroids over the member cells."""
    nd, nr = mask.shape
    labels, n_lab = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n_lab == 0:
        return []
    # merge clusters that touch across the doppler seam
    parent = list(range(n_lab + 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    top = labels[0]
    bot = labels[-1]
    for j in range(nr):
        if not top[j]:
            continue
        for dj in (-1, 0, 1):
            k = j + dj
            if 0 <= k < nr and bot[k]:
                union(int(top[j]), int(bot[k]))

    groups: dict[int, list[tuple[int, int]]] = {}
    cells = np.argwhere(labels > 0)
    for d, r in cells:
        groups.setdefault(find(int(labels[d, r])), []).append((int(d), int(r)))

    if rdm.ndim == 2:
        rdm = rdm[None]
    out = []
    for members in groups.values():
        arr = np.array(members)
        powers = power[arr[:, 0], arr[:, 1]]
        k = int(np.argmax(powers))
        pd, pr = int(arr[k, 0]), int(arr[k, 1])
        # unwrap doppler coordinates around the peak before averaging
        dop = (arr[:, 0] - pd + nd // 2) % nd - nd // 2 + pd
        out.append(Detection(
            doppler_bin=float(np.mean(dop) % nd),
            range_bin=float(np.mean(arr[:, 1])),
            fine_doppler_bin=(pd + _self_fine(rdm, pd, pr, axis=0)) % nd,
            fine_range_bin=pr + _self_fine(rdm, pd, pr, axis=1),
            peak_cell=(pd, pr),
            power=float(powers[k]),
            peak_value=rdm[:, pd, pr].copy(),
            member_cells=arr,
        ))
    out.sort(key=lambda det: -det.power)
    return out


def _self_fine(rdm: np.ndarray, pd: int, pr: int, axis: int) -> float:
    """Three-point fractional offset at a peak cell, beamformed against the
    cell's own channel vector (gain-invariant, no steering needed)."""
    nd, nr = rdm.shape[1], rdm.shape[2]
    ref = rdm[:, pd, pr]
    if axis == 0:
        cells = [((pd - 1) % nd, pr), (pd, pr), ((pd + 1) % nd, pr)]
        n = nd
    else:
        if pr == 0 or pr == nr - 1:
            return 0.0
        cells = [(pd, pr - 1), (pd, pr), (pd, pr + 1)]
        n = nr
    vals = [complex(np.vdot(ref, rdm[:, c[0], c[1]])) for c in cells]
    return fine_offset(*vals, n)


def circ_dist(a, b, n: int):
    """Shortest circular distance |a - b| on a ring of size n."""
    return np.abs((np.asarray(a) - np.asarray(b) + n / 2.0) % n - n / 2.0)


def fine_offset(xm1: complex, x0: complex, xp1: complex, n: int) -> float:
    """Fractional bin offset of a tone from three adjacent DFT values
    (bias-corrected three-point estimator; exact for a noiseless tone)."""
    den = 2.0 * x0 - xm1 - xp1
    if den == 0:
        return 0.0
    est = ((xm1 - xp1) / den).real
    corr = np.tan(np.pi / n) / (np.pi / n)
    return float(np.clip(corr * est, -0.5, 0.5))


def dirichlet(x, n: int) -> np.ndarray:
    """Unnormalized DFT of a length-n complex exponential at bin offset x."""
    x = np.asarray(x, dtype=np.float64)
    num = np.sin(np.pi * x)
    den = np.sin(np.pi * x / n)
    near = np.abs(den) < 1e-12
    mag = np.where(near, float(n), num / np.where(near, 1.0, den))
    return mag * np.exp(1j * np.pi * x * (n - 1) / n)


# MIMO comb separation -------------------------------------------------------


@dataclass
class SeparatedTarget:
    """A complete set of per-TX-antenna replicas of one scatterer/link."""

    base_doppler_bin: float        # comb base (antenna offset removed), [0, Nc)
    range_bin: float
    replicas: list[Detection]      # one per TX antenna, offset order
    snapshot: np.ndarray           # (n_tx, n_rx) complex, phase-consistent cells
    anchor_cell: tuple[int, int]   # antenna-0 read cell (doppler, range)


def ddm_separate(detections: list[Detection], rdm: np.ndarray,
                 ddm_offsets: tuple[int, ...], nc: int, shift: int = 0,
                 range_tol: float = 0.35, doppler_tol: float = 0.35) -> list[SeparatedTarget]:
    """Greedily assemble detections into Doppler combs {base + offset_t + shift}.

    Matching runs on the peak-interpolated fine positions (leakage centroids
    wander too much for structural gating); a target is kept only when every
    TX antenna's replica is present at the same range bin.  Incomplete combs
    are dropped.  The snapshot is read for all antennas at cells anchored to
    the antenna-0 peak so the Dirichlet phases cancel across the virtual
    array; the reported bins stay the arithmetic-mean leakage centroids.
    """
    if rdm.ndim == 2:
        rdm = rdm[None]
    n_tx = len(ddm_offsets)
    used = [False] * len(detections)
    order = sorted(range(len(detections)), key=lambda i: -detections[i].power)
    out = []
    for i in order:
        if used[i]:
            continue
        det0 = detections[i]
        base = (det0.fine_doppler_bin - ddm_offsets[0] - shift) % nc
        members = [i]
        for t in range(1, n_tx):
            expected = (base + ddm_offsets[t] + shift) % nc
            best, best_key = -1, None
            for j, det in enumerate(detections):
                if used[j] or j in members:
                    continue
                if abs(det.fine_range_bin - det0.fine_range_bin) > range_tol:
                    continue
                d = circ_dist(det.fine_doppler_bin, expected, nc)
                if d > doppler_tol:
                    continue
                key = (det.power, -d)
                if best_key is None or key > best_key:
                    best, best_key = j, key
            if best < 0:
                members = []
                break
            members.append(best)
        if not members:
            continue
        for j in members:
            used[j] = True
        reps = [detections[j] for j in members]
        d0, r0 = det0.peak_cell
        nd = rdm.shape[1]
        snapshot = np.stack([
            rdm[:, (d0 + ddm_offsets[t] - ddm_offsets[0]) % nd, r0]
            for t in range(n_tx)
        ])
        bases = np.array([(reps[t].doppler_bin - ddm_offsets[t] - shift) % nc
                          for t in range(n_tx)])
        rel = (bases - bases[0] + nc / 2.0) % nc - nc / 2.0 + bases[0]
        out.append(SeparatedTarget(
            base_doppler_bin=float(np.mean(rel) % nc),
            range_bin=float(np.mean([r.range_bin for r in reps])),
            replicas=reps,
            snapshot=snapshot,
            anchor_cell=(d0, r0),
        ))
    return out


# angle estimation -----------------------------------------------------------


def virtual_positions_wl(array) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical virtual-element coordinates, (n_tx*n_rx, 2)."""
    tx = array.tx_positions_wl()
    rx = array.rx_positions_wl()
    pos = tx[:, None, :] + rx[None, :, :]
    return pos.reshape(-1, 2)


def horizontal_ula(snapshot: np.ndarray, array) -> tuple[np.ndarray, np.ndarray]:
    """Extract the zero-elevation horizontal virtual line from a snapshot.

    Returns (positions in wavelengths, complex values), sorted by position.
    With the stock geometry this is the 16-element half-wavelength ULA.
    """
    pos = virtual_positions_wl(array)
    vals = snapshot.reshape(-1)
    sel = pos[:, 1] == 0.0
    p = pos[sel, 0]
    v = vals[sel]
    order = np.argsort(p)
    return p[order], v[order]


def vertical_ula(snapshot: np.ndarray, array) -> tuple[np.ndarray, np.ndarray]:
    pos = virtual_positions_wl(array)
    vals = snapshot.reshape(-1)
    sel = pos[:, 0] == 0.0
    p = pos[sel, 1]
    v = vals[sel]
    order = np.argsort(p)
    return p[order], v[order]


def music_spectrum(values: np.ndarray, positions_wl: np.ndarray,
                   grid_deg: np.ndarray) -> np.ndarray:
    """Single-snapshot spatial spectrum |a(theta)^H x|^2 / ||a||^2.

    With a rank-one sample covariance the MUSIC pseudospectrum is maximized
    exactly where the matched filter is, so this is evaluated directly.
    """
    if not np.any(values):
        raise EstimationError("zero snapshot")
    steer = np.exp(2j * np.pi * np.outer(np.sin(np.deg2rad(grid_deg)), positions_wl))
    num = np.abs(steer.conj() @ values) ** 2
    return num / len(positions_wl)


def music_azimuth(snapshot: np.ndarray, array, grid_step_deg: float = 1.0) -> float:
    """Azimuth of one separated target from its virtual-array snapshot,
    searched on a 1 degree grid across the horizontal field of view."""
    pos, vals = horizontal_ula(snapshot, array)
    grid = np.arange(-array.fov_az_deg, array.fov_az_deg + 1e-9, grid_step_deg)
    spec = music_spectrum(vals, pos, grid)
    return float(grid[int(np.argmax(spec))])


def music_elevation(snapshot: np.ndarray, array, grid_step_deg: float = 1.0) -> float:
    pos, vals = vertical_ula(snapshot, array)
    grid = np.arange(-array.fov_el_deg, array.fov_el_deg + 1e-9, grid_step_deg)
    spec = music_spectrum(vals, pos, grid)
    return float(grid[int(np.argmax(spec))])
