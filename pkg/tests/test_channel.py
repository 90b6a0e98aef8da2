import numpy as np
import pytest

from chirpisac.cfg import C0, DDM, preset_systems
from chirpisac.channel import (LinkGeometry, Target, check_target,
                               strip_known_modulation, synthesize_at_cube,
                               synthesize_pt_cube)
from chirpisac.txmod import (SymbolFrame, build_reference_frame, build_tx_frame,
                             pack_bits)

SYS = preset_systems()[0]
PAR, CFG, ARR = SYS.derived, SYS.chirp, SYS.array
REF = build_reference_frame(DDM, ARR, PAR, CFG)


def fast_peak(cube, rx=0, m=0):
    return int(np.argmax(np.abs(np.fft.fft(cube[rx, m]))))


def test_single_target_30m_lands_on_bin_128():
    tgt = Target(range_m=30.0, velocity_mps=0.0, azimuth_deg=0.0, amplitude=1.0 + 0j)
    cube = synthesize_at_cube([tgt], REF, SYS, snr_db=None, rng_seed=0)
    # oracle: beat = slope * 2R/c -> bin = beat * Tc
    beat = PAR.chirp_slope * 2.0 * 30.0 / C0
    assert beat == pytest.approx(2.5e6, rel=1e-3)
    want_bin = int(round(beat * CFG.pri_s))
    assert want_bin == 128
    assert fast_peak(cube) == want_bin
    # boresight: all channels in phase
    assert np.allclose(cube[:, 0, 0], cube[0, 0, 0])


def test_noise_variance_matches_band_referenced_snr():
    snr = -20.0
    cube = synthesize_at_cube([], REF, SYS, snr_db=snr, rng_seed=1)
    assert cube.size >= 1 << 20
    var = np.mean(np.abs(cube) ** 2)
    want = (CFG.bandwidth_hz / CFG.adc_rate_hz) * 10 ** (-snr / 10)
    assert var == pytest.approx(want, rel=0.05)


def test_one_velocity_bin_shifts_every_comb_tooth():
    tgt = Target(range_m=30.0, velocity_mps=PAR.velocity_resolution,
                 azimuth_deg=0.0, amplitude=1.0 + 0j)
    cube = synthesize_at_cube([tgt], REF, SYS, snr_db=None, rng_seed=0)
    rdm = np.fft.fft2(cube[0])
    profile = np.abs(rdm[:, 128])
    peaks = sorted(np.argsort(profile)[-4:])
    assert peaks == [1, 32, 64, 97]   # offsets {0,31,63,96} + 1


def test_pt_link_60m_bin_and_delay_shift():
    link = LinkGeometry(range_m=60.0, velocity_mps=0.0, aod_deg=0.0, aoa_deg=0.0)
    cube = synthesize_pt_cube(link, REF, SYS, snr_db=None, rng_seed=0)
    want = int(round(PAR.chirp_slope * 60.0 / C0 * CFG.pri_s))
    assert want == 128
    assert fast_peak(cube) == want

    d = 300
    frame = SymbolFrame(DDM, np.array([d]), np.array([0]), 0)
    tx = build_tx_frame(frame, ARR, PAR, CFG)
    cube_d = synthesize_pt_cube(link, tx, SYS, snr_db=None, rng_seed=0)
    assert fast_peak(cube_d) == want + d


def test_amplitude_symbol_rotates_peak_phase():
    link = LinkGeometry(range_m=60.0, velocity_mps=0.0, aod_deg=0.0, aoa_deg=0.0)
    phases = []
    for k in (0, 1):
        frame = SymbolFrame(DDM, np.array([0]), np.array([k]), 0)
        tx = build_tx_frame(frame, ARR, PAR, CFG)
        cube = synthesize_pt_cube(link, tx, SYS, snr_db=None, rng_seed=0)
        spec = np.fft.fft(cube[0, 0])
        phases.append(np.angle(spec[fast_peak(cube)]))
    dphi = (phases[1] - phases[0]) % (2 * np.pi)
    assert dphi == pytest.approx(2 * np.pi / 4, abs=1e-6)


def test_stop_and_hop_keeps_fast_frequency_constant_over_slow_time():
    tgt = Target(range_m=47.0, velocity_mps=12.0, azimuth_deg=10.0,
                 amplitude=1.0 + 0j)
    cube = synthesize_at_cube([tgt], REF, SYS, snr_db=None, rng_seed=0)
    bins = {fast_peak(cube, rx=3, m=m) for m in range(0, 128, 17)}
    assert len(bins) == 1


def test_strip_restores_unmodulated_cube_exactly():
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, 18)
    tx = build_tx_frame(pack_bits(bits, DDM, PAR, CFG), ARR, PAR, CFG)
    targets = [Target(range_m=52.0, velocity_mps=-7.0, azimuth_deg=25.0,
                      amplitude=np.exp(0.3j))]
    mod = synthesize_at_cube(targets, tx, SYS, snr_db=None, rng_seed=0)
    unmod = synthesize_at_cube(targets, REF, SYS, snr_db=None, rng_seed=0)
    stripped = strip_known_modulation(mod, tx, SYS)
    assert np.allclose(stripped, unmod, atol=1e-9 * np.abs(unmod).max())


def test_cube_energy_scales_with_active_antennas():
    tgt = [Target(range_m=40.0, velocity_mps=3.0, azimuth_deg=0.0,
                  amplitude=1.0 + 0j)]
    quad = synthesize_at_cube(tgt, REF, SYS, snr_db=None, rng_seed=0)
    e4 = np.sum(np.abs(quad) ** 2)
    single = build_reference_frame(DDM, ARR, PAR, CFG)
    code = single.code.copy()
    code[1:] = 0.0
    one = type(single)(scheme=single.scheme, code=code,
                       extra_delay_s=single.extra_delay_s,
                       ddm_offsets=single.ddm_offsets, frame=None)
    e1 = np.sum(np.abs(synthesize_at_cube(tgt, one, SYS, snr_db=None, rng_seed=0)) ** 2)
    assert e4 / e1 == pytest.approx(4.0, rel=0.15)


def test_cpi_index_advances_range_and_phase():
    link = LinkGeometry(range_m=60.0, velocity_mps=10.0, aod_deg=0.0, aoa_deg=0.0)
    c0 = synthesize_pt_cube(link, REF, SYS, snr_db=None, rng_seed=0, cpi_index=0)
    c1 = synthesize_pt_cube(link, REF, SYS, snr_db=None, rng_seed=0, cpi_index=1)
    # the slow-time phase at CPI 1 starts where CPI 0 stopped (beat phase is
    # zero at the first fast-time sample, so the n=0 ratio isolates it)
    f_d = link.velocity_mps / PAR.wavelength
    want = (2 * np.pi * f_d * CFG.pri_s * 128 + np.pi) % (2 * np.pi) - np.pi
    got = np.angle(c1[0, 0, 0] / c0[0, 0, 0])
    assert got == pytest.approx(want, abs=1e-9)
    # beat moved by the kinematically consistent amount
    tau0 = link.range_m / C0
    tau1 = (link.range_m + link.velocity_mps * 128 * CFG.pri_s) / C0
    b0 = np.angle(c0[0, 0, 1] / c0[0, 0, 0])
    b1 = np.angle(c1[0, 0, 1] / c1[0, 0, 0])
    assert (b1 - b0) == pytest.approx(
        2 * np.pi * PAR.chirp_slope * (tau1 - tau0) / CFG.adc_rate_hz, abs=1e-9)


def test_target_invariants_rejected():
    with pytest.raises(ValueError, match="azimuth"):
        check_target(Target(30.0, 0.0, 75.0), SYS)
    with pytest.raises(ValueError, match="Doppler-ambiguous"):
        check_target(Target(30.0, 20.0, 0.0), SYS)
    with pytest.raises(ValueError, match="range"):
        check_target(Target(150.0, 0.0, 0.0), SYS)
    with pytest.raises(ValueError, match="elevation"):
        check_target(Target(30.0, 0.0, 0.0, elevation_deg=20.0), SYS)
