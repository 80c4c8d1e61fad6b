"""Acceptance suite.

Every criterion prints one ``[criterion N] PASS|FAIL ...`` line to the
terminal (even under output capture) before asserting.
"""

import time

import numpy as np
import pytest

from costbc.analysis import (
    ber_sweep,
    fit_diversity,
    fit_slope,
    lemma1_check,
    outage_sweep,
    whiteness_report,
)
from costbc.detection import detect_symbols, joint_ml_batch
from costbc.network import draw_batch, preset, simulate_batch
from costbc.numerics import RngStream, cn
from costbc.ostbc import alamouti_design, orthogonality_error, rate34_design
from costbc.relay import (
    StagePower,
    alamouti_pair,
    mixed_4to2,
    ostbc4_r34_set,
    relay_transmit,
    transmit_scale,
    validate_dispersion,
)

SEED = 1
ALL_PRESETS = [f"{fam}x{d}" for fam in ("2hop_2x2", "2hop_4x4", "2hop_4x2", "3hop_2x2x2") for d in (1, 2, 3)]
OUTAGE_DB = np.arange(15, 30.01, 2.5)
OUTAGE_DRAWS = 10_000_000
ORDER_DB = np.arange(22, 30.01, 2)


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok

    return emit


def separated_ci(a, b):
    """Power levels where a's CI lies strictly below b's."""
    return [p.e_db for p, q in zip(a.points, b.points) if p.ci95[1] < q.ci95[0]]


# --- shared sweeps ----------------------------------------------------------


@pytest.fixture(scope="module")
def order_sweeps():
    kw = dict(min_errors=1000, max_frames=4_000_000, seed=SEED, workers=1)
    t0 = time.perf_counter()
    equal = ber_sweep(preset("2hop_2x2x1"), ORDER_DB, **kw)
    unequal = ber_sweep(preset("2hop_2x2x1", fractions=(0.25, 0.375)), ORDER_DB, **kw)
    three = ber_sweep(preset("3hop_2x2x2x1"), ORDER_DB, **kw)
    return equal, unequal, three, time.perf_counter() - t0


@pytest.fixture(scope="module")
def outage_curves():
    return {}


def _outage(cache, name, workers=1, snr=OUTAGE_DB):
    key = (name, workers, tuple(snr))
    if key not in cache:
        t0 = time.perf_counter()
        curve = outage_sweep(preset(name), snr, r=0.0, trials=OUTAGE_DRAWS, seed=SEED, workers=workers)
        cache[key] = (curve, time.perf_counter() - t0)
    return cache[key]


# --- 1 ----------------------------------------------------------------------


def test_criterion_1_structural_suite(report):
    t0 = time.perf_counter()
    failures = []
    rng = RngStream(SEED, 0).generator()
    for d in (alamouti_design(), rate34_design()):
        err = orthogonality_error(d, cn(rng, (10_000, d.L)))
        if err > 1e-12:
            failures.append(f"orthogonality {d.name} {err:.2g}")
    for make in (alamouti_pair, ostbc4_r34_set, mixed_4to2):
        dset = make()
        rep = validate_dispersion(dset)
        if not rep.passed or rep.max_violation("skew") > 1e-12 or rep.max_violation("column_energy") > 1e-12:
            failures.append(f"dispersion {dset.name}")
        power = StagePower(1.0, 3.0)
        c = transmit_scale(dset, power)
        out = dset.outgoing_design
        for s in cn(rng, (1000, dset.L)):
            block = np.stack([relay_transmit(dset, k, s, power) for k in range(dset.relay_count)], axis=1)
            gram = block @ block.conj().T
            if np.max(np.abs(gram - c**2 * np.sum(np.abs(s) ** 2) * np.eye(out.K))) > 1e-10:
                failures.append(f"stacked codeword {dset.name}")
                break
    for name in ALL_PRESETS:
        cfg = preset(name, E=100.0, noise_var=0.0)
        inputs = draw_batch(cfg, 1000, RngStream(SEED, 1))
        res = simulate_batch(cfg, inputs)
        idx, _ = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation)
        if not np.array_equal(cfg.constellation.indices_to_bits(idx), inputs.bits):
            failures.append(f"noiseless {name}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    report(1, ok, f"structural suite: {len(failures)} failures {failures} in {elapsed:.1f} s (< 60 s)")
    assert ok


# --- 2 ----------------------------------------------------------------------


def test_criterion_2_single_symbol_decodability(report):
    t0 = time.perf_counter()
    cfg = preset("2hop_2x2x1", E=10 ** (10 / 10))
    inputs = draw_batch(cfg, 10_000, RngStream(SEED, 2))
    res = simulate_batch(cfg, inputs)
    ps, ps_margin = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation)
    ml, ml_margin = joint_ml_batch(cfg, inputs, res)
    L = cfg.stage_design(cfg.N - 1).L
    tie = (ps_margin < 1e-9) | (np.repeat(ml_margin, L, axis=1) < 1e-9)
    bits_ps = cfg.constellation.indices_to_bits(ps)
    bits_ml = cfg.constellation.indices_to_bits(ml)
    tie_bits = np.repeat(tie, cfg.constellation.bits_per_symbol, axis=1)
    disagree = int(np.count_nonzero((bits_ps != bits_ml) & ~tie_bits))
    elapsed = time.perf_counter() - t0
    ok = disagree == 0 and elapsed < 120
    report(2, ok, f"per-symbol vs joint ML, 2hop_2x2x1, 10^4 frames at 10 dB: {disagree} bit disagreements "
                  f"({int(tie.sum())} tied symbols excluded), {elapsed:.1f} s")
    assert ok


# --- 3 ----------------------------------------------------------------------


def test_criterion_3_noise_whiteness(report):
    details, ok = [], True
    for name in ("2hop_2x2x1", "3hop_2x2x2x1"):
        rep = whiteness_report(preset(name), trials=100_000, seed=SEED)
        checked = [e for e in rep.entries if e.label.startswith("stage1") or e.label.startswith("destination")]
        worst = max(e.max_abs_z for e in checked)
        ok &= worst <= 4.0
        details.append(f"{name} max|z|={worst:.2f}")
    report(3, ok, "separated-noise off-diagonals within 4 SE over 10^5 frames: " + ", ".join(details))
    assert ok


# --- 4 ----------------------------------------------------------------------


def test_criterion_4_lemma1(report):
    details, ok = [], True
    for m1, m2 in ((2, 1), (2, 2), (4, 2)):
        rep = lemma1_check(m1, m2, 50.0, 100.0, trials=10_000, seed=SEED, tolerance=1e-12)
        ok &= rep.violations == 0
        details.append(f"({m1},{m2}): {rep.violations} violations, max rel {rep.max_relative_violation:.2e}")
    report(4, ok, "relay noise covariance bound, 10^4 random (G, x): " + "; ".join(details))
    assert ok


# --- 5 ----------------------------------------------------------------------


def test_criterion_5_ber_slope(report):
    t0 = time.perf_counter()
    curve = ber_sweep(preset("2hop_2x2x1"), np.arange(20, 35.01, 2.5), min_errors=200,
                      max_frames=4_000_000, seed=SEED, workers=1)
    fit = fit_diversity(curve, (20, 35), min_errors=200)
    frames = sum(p.trials for p in curve.points)
    elapsed = time.perf_counter() - t0
    ok = abs(fit.slope - 2.0) <= 0.3 and elapsed <= 15 * 60
    report(5, ok, f"2hop_2x2x1 BER slope {fit.slope:.3f} (2 +/- 0.3) over {list(fit.used_db)} dB, "
                  f"{frames} frames, {elapsed:.0f} s")
    assert ok


# --- 6 ----------------------------------------------------------------------


@pytest.mark.parametrize("name,target,tol", [
    ("2hop_2x2x1", 2.0, 0.25),
    ("2hop_2x2x2", 4.0, 0.6),
    ("3hop_2x2x2x1", 2.0, 0.3),
])
def test_criterion_6_outage_slope(report, outage_curves, name, target, tol):
    curve, elapsed = _outage(outage_curves, name)
    counts = [int(c) for c in curve.outages]
    try:
        fit = fit_slope(curve.snr_db, curve.p_out, curve.outages, (15, 30), min_count=100)
        slope, used = fit.slope, list(fit.used_db)
    except ValueError as exc:
        slope, used = float("nan"), str(exc)
    ok = bool(abs(slope - target) <= tol) and elapsed <= 600
    report(6, ok, f"{name} outage slope {slope:.3f} ({target:g} +/- {tol:g}) over {used}; "
                  f"outages per point {counts} of {OUTAGE_DRAWS}; {elapsed:.0f} s")
    assert ok


# --- 7 ----------------------------------------------------------------------


def test_criterion_7_power_allocation_ordering(report, order_sweeps):
    equal, unequal, _, _ = order_sweeps
    better = [e for e, p, q in zip(ORDER_DB, unequal.points, equal.points) if p.ber < q.ber]
    separated = separated_ci(unequal, equal)
    ok = len(separated) >= 2
    pairs = ", ".join(f"{p.e_db:g} dB {p.ber:.3e} vs {q.ber:.3e}" for p, q in zip(unequal.points, equal.points))
    report(7, ok, f"unequal (E/4, 3E/8) below equal at {len(better)}/{len(ORDER_DB)} levels, "
                  f"CIs separated at {separated}: {pairs}")
    assert ok


# --- 8 ----------------------------------------------------------------------


def test_criterion_8_hop_count_ordering(report, order_sweeps):
    equal, _, three, _ = order_sweeps
    separated = separated_ci(equal, three)
    ok = len(separated) >= 2
    pairs = ", ".join(f"{p.e_db:g} dB {q.ber:.3e} vs {p.ber:.3e}" for p, q in zip(equal.points, three.points))
    report(8, ok, f"3hop_2x2x2x1 above 2hop_2x2x1 with separated CIs at {separated}: {pairs}")
    assert ok


# --- 9 ----------------------------------------------------------------------


def test_criterion_9_worker_count_reproducibility(report, order_sweeps, outage_curves):
    equal, _, _, _ = order_sweeps
    again = ber_sweep(preset("2hop_2x2x1"), ORDER_DB[:2], min_errors=1000, max_frames=4_000_000,
                      seed=SEED, workers=2)
    ber_same = [(p.trials, p.bit_errors) for p in again.points] == [
        (p.trials, p.bit_errors) for p in equal.points[:2]
    ]
    ref, _ = _outage(outage_curves, "2hop_2x2x1")
    par, _ = _outage(outage_curves, "2hop_2x2x1", workers=2, snr=OUTAGE_DB[:2])
    out_same = list(par.outages) == list(ref.outages[:2])
    w1 = whiteness_report(preset("3hop_2x2x2x1"), trials=40_000, seed=SEED)
    w2 = whiteness_report(preset("3hop_2x2x2x1"), trials=40_000, seed=SEED)
    wh_same = all(np.array_equal(a.covariance, b.covariance) for a, b in zip(w1.entries, w2.entries))
    ok = ber_same and out_same and wh_same
    report(9, ok, f"1 vs 2 workers bit-identical: BER counts {ber_same}, outage counts {out_same}; "
                  f"whiteness rerun identical {wh_same}")
    assert ok
