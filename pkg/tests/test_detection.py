import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from costbc.channel import draw_channels
from costbc.detection import (
    bits_to_symbols,
    codebook,
    detect_symbols,
    effective_channel,
    joint_ml_batch,
    joint_ml_detect,
    per_symbol_detect,
    symbols_to_bits,
)
from costbc.network import draw_batch, draw_frame_inputs, preset, run_frame, simulate_batch
from costbc.numerics import RngStream
from costbc.ostbc import qam4

Q = qam4()


def hand_ml(trace, config):
    """Exhaustive 16-word search for one destination antenna, written out for
    the two-relay Alamouti block [[s1, -s2*], [s2, s1*]]."""
    y = trace.raw_blocks[0, :, 0]
    a = trace.relay_gains[-1]
    g = trace.realization.hop(1)[:, 0]
    c = trace.transmit_scales[-1]
    var = 1 + c**2 * np.sum(np.abs(g) ** 2)
    best, best_m = None, np.inf
    for i1 in range(4):
        for i2 in range(4):
            s1, s2 = Q.points[i1], Q.points[i2]
            y1 = c * (a[0] * g[0] * s1 - a[1] * g[1] * np.conj(s2))
            y2 = c * (a[0] * g[0] * s2 + a[1] * g[1] * np.conj(s1))
            m = (abs(y[0] - y1) ** 2 + abs(y[1] - y2) ** 2) / var
            if m < best_m:
                best, best_m = (i1, i2), m
    return best


def test_bit_symbol_round_trips():
    bits = Q.indices_to_bits(np.arange(4))
    assert np.array_equal(symbols_to_bits(bits_to_symbols(bits)), bits)
    assert bits_to_symbols([0, 0])[0] == pytest.approx((1 + 1j) / np.sqrt(2))
    msg = RngStream(1, 60).generator().integers(0, 2, 60)
    assert np.array_equal(symbols_to_bits(bits_to_symbols(msg)), msg)
    with pytest.raises(ValueError):
        bits_to_symbols([1, 0, 1])
    with pytest.raises(ValueError):
        symbols_to_bits([0.3 + 0.1j])


def test_scalar_sanity():
    for i, s in enumerate(Q.points):
        for g in (0.01, 1.0, 37.0):
            idx, margin = detect_symbols(np.array([[g * s]]), np.array([g]), np.array([1.0]), Q)
            assert idx[0] == i and margin[0] > 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_decisions_invariant_to_positive_scaling(seed, scale):
    rng = RngStream(seed, 0).generator()
    values = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    gains = rng.uniform(0.1, 2, 3)
    a, ma = detect_symbols(values, gains, np.ones(3), Q)
    b, mb = detect_symbols(values * scale, gains * scale, np.ones(3), Q)
    sure = (ma > 1e-9) & (mb > 1e-9)
    assert np.array_equal(a[sure], b[sure])


def test_ties_break_toward_lowest_index():
    idx, margin = detect_symbols(np.array([[0j]]), np.array([1.0]), np.array([1.0]), Q)
    assert idx[0] == 0 and margin[0] == 0


def test_noiseless_frame_decisions():
    cfg = preset("2hop_2x2x2", E=10.0, noise_var=0.0)
    real = draw_channels(cfg, 0, 1)
    tr = run_frame(cfg, real, draw_frame_inputs(cfg, 1, 0))
    d = per_symbol_detect(tr)
    assert np.array_equal(d.bits, tr.bits)
    assert np.all(d.metric_margin > 0)
    assert d.bits.size == cfg.frame_symbols * Q.bits_per_symbol
    ml = joint_ml_detect(tr, cfg)
    assert np.array_equal(ml.bits, tr.bits)
    eff = effective_channel(tr)
    assert np.all(eff.per_antenna_gain > 0) and np.all(eff.per_antenna_noise_var > 0)


def test_weighted_combiner_noiseless():
    cfg = preset("2hop_2x2x3", E=10.0, noise_var=0.0)
    tr = run_frame(cfg, draw_channels(cfg, 2, 1), draw_frame_inputs(cfg, 1, 2))
    assert np.array_equal(per_symbol_detect(tr, weighted=True).bits, tr.bits)


def test_joint_ml_matches_hand_enumeration():
    cfg = preset("2hop_2x2x1", E=10.0)
    for f in range(300):
        tr = run_frame(cfg, draw_channels(cfg, f, 6), draw_frame_inputs(cfg, 6, f))
        assert tuple(joint_ml_detect(tr, cfg).index) == hand_ml(tr, cfg)


def test_codebook_limits():
    words = codebook(Q, 2)
    assert words.shape == (16, 2) and tuple(words[1]) == (0, 1)
    assert codebook(Q, 6).shape == (4096, 6)
    with pytest.raises(ValueError):
        codebook(Q, 7)


def test_joint_ml_batch_matches_per_frame():
    cfg = preset("2hop_4x2x1", E=10.0)
    inputs = draw_batch(cfg, 20, RngStream(2, 0))
    res = simulate_batch(cfg, inputs)
    idx, _ = joint_ml_batch(cfg, inputs, res)
    for i in range(inputs.size):
        real, frame = inputs.frame(i)
        assert np.array_equal(joint_ml_detect(run_frame(cfg, real, frame), cfg).index, idx[i])


def _compare(name, frames=10_000, seed=1):
    cfg = preset(name, E=10.0)
    inputs = draw_batch(cfg, frames, RngStream(seed, 0))
    res = simulate_batch(cfg, inputs)
    ps, ps_margin = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation)
    ml, ml_margin = joint_ml_batch(cfg, inputs, res)
    L = cfg.stage_design(cfg.N - 1).L
    tie = (ps_margin < 1e-9) | (np.repeat(ml_margin, L, axis=1) < 1e-9)
    truth = cfg.constellation.bits_to_indices(inputs.bits)
    return (
        int(np.count_nonzero((ps != ml) & ~tie)),
        int(np.count_nonzero(ps != truth)),
        int(np.count_nonzero(ml != truth)),
    )


@pytest.mark.parametrize("name", ["2hop_2x2x1", "2hop_4x2x1", "3hop_2x2x2x1"])
def test_single_symbol_decodability(name):
    disagree, _, _ = _compare(name)
    assert disagree == 0


@pytest.mark.parametrize("name", ["2hop_2x2x2", "2hop_4x4x1"])
def test_per_symbol_gap_where_noise_is_not_white(name):
    """With unequal per-antenna noise (M_N > 1) or slot-dependent relay noise
    (rate-3/4 relay stage) the separated detector is no longer exact ML;
    joint ML must then be at least as accurate."""
    disagree, ps_err, ml_err = _compare(name)
    assert disagree > 0
    assert ml_err <= ps_err
