import numpy as np
import pytest

from costbc.network import draw_batch, preset, simulate_batch
from costbc.numerics import RngStream, cn
from costbc.relay import (
    DispersionSet,
    StagePower,
    alamouti_pair,
    gamma_stage1,
    get_dispersion_set,
    mixed_4to2,
    ostbc4_r34_set,
    relay_transmit,
    transmit_scale,
    validate_dispersion,
)
from costbc.ostbc import get_design


def alamouti_stage1(E0, T, seed):
    """Textbook two-antenna Alamouti reception at a single relay, unit noise."""
    rng = RngStream(seed, 0).generator()
    q = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    s = q[rng.integers(0, 4, (T, 2))]
    h = cn(rng, (T, 2))
    n = cn(rng, (T, 2))
    a = np.sqrt(E0) / np.sqrt(2)
    y1 = a * (s[:, 0] * h[:, 0] + s[:, 1] * h[:, 1]) + n[:, 0]
    y2 = a * (-np.conj(s[:, 1]) * h[:, 0] + np.conj(s[:, 0]) * h[:, 1]) + n[:, 1]
    norm = np.linalg.norm(h, axis=1)
    r1 = (np.conj(h[:, 0]) * y1 + h[:, 1] * np.conj(y2)) / norm
    r2 = (np.conj(h[:, 1]) * y1 - h[:, 0] * np.conj(y2)) / norm
    return np.stack([r1, r2], axis=1)


# --- validation -------------------------------------------------------------


@pytest.mark.parametrize("make", [alamouti_pair, mixed_4to2, ostbc4_r34_set])
def test_shipped_sets_validate(make):
    rep = validate_dispersion(make())
    assert rep.passed, rep.failures()
    assert rep.max_violation("skew") <= 1e-12
    assert rep.max_violation("column_energy") <= 1e-12


def test_example1_matrices():
    d = alamouti_pair()
    assert np.array_equal(d.A[0], np.eye(2)) and not d.B[0].any()
    assert not d.A[1].any() and np.array_equal(d.B[1], [[0, -1], [1, 0]])


def test_example2_column_traces():
    rep = validate_dispersion(ostbc4_r34_set())
    assert np.allclose(rep.column_traces, 3.0, atol=1e-12)


def test_scaled_matrix_fails_trace_constraint():
    d = alamouti_pair()
    A = d.A.copy()
    A[0] *= 2
    rep = validate_dispersion(DispersionSet("bad", A, d.B))
    assert not rep.passed
    assert rep.max_violation("column_energy") == pytest.approx(3.0)
    assert {c.constraint for c in rep.failures()} == {"column_energy"}


def test_skew_violation_detected():
    A = np.zeros((1, 1, 1)) + 1 / np.sqrt(2)
    rep = validate_dispersion(DispersionSet("skewed", A, A.copy()))
    assert rep.max_violation("skew") == pytest.approx(1.0)
    assert not rep.passed


def test_unknown_set_and_shape_errors():
    with pytest.raises(KeyError):
        get_dispersion_set("nope")
    with pytest.raises(ValueError):
        DispersionSet("x", np.zeros((2, 3, 2)), np.zeros((2, 3, 2)))


@pytest.mark.parametrize("make", [alamouti_pair, ostbc4_r34_set])
def test_stacked_codeword_is_the_named_ostbc(make):
    dset = make()
    design = get_design(dset.expected_design)
    power = StagePower(2.0, 7.0)
    c = transmit_scale(dset, power)
    rng = RngStream(21, dset.L).generator()
    for _ in range(1000):
        s = cn(rng, dset.L)
        gain = 0.7
        block = np.stack([relay_transmit(dset, k, gain * s, power) for k in range(dset.relay_count)], axis=1)
        assert np.max(np.abs(block - c * gain * design.unscaled(s))) < 1e-10


def test_alamouti_relay_block_by_hand():
    s1, s2 = 0.3 - 1j, -2 + 0.5j
    block = alamouti_pair().outgoing_design.unscaled([s1, s2])
    assert np.allclose(block, [[s1, -np.conj(s2)], [s2, np.conj(s1)]])


def test_permutation_preserves_constraints():
    d = ostbc4_r34_set()
    order = [2, 0, 3, 1]
    p = d.permuted(order)
    assert validate_dispersion(p).passed
    s = cn(RngStream(2, 2).generator(), 3)
    assert np.allclose(p.outgoing_design.unscaled(s), d.outgoing_design.unscaled(s)[:, order])


# --- power normalisation ----------------------------------------------------


def test_relay_transmit_examples():
    d = alamouti_pair()
    E1, gamma = 3.0, 10.0
    r = np.array([0.5 + 1j, -1 - 0.25j])
    c = np.sqrt(E1 * 2 / gamma)
    p = StagePower(E1, gamma)
    assert np.allclose(relay_transmit(d, 0, r, p), c * r)
    assert np.allclose(relay_transmit(d, 1, r, p), c * np.array([-np.conj(r[1]), np.conj(r[0])]))
    with pytest.raises(ValueError):
        relay_transmit(d, 0, r[:1], p)
    with pytest.raises(ValueError):
        relay_transmit(d, 2, r, p)
    with pytest.raises(ValueError):
        StagePower(0.0, 1.0)


def test_gamma_stage1_closed_form():
    assert gamma_stage1(0.0, 2, 2) == pytest.approx(2.0)
    g = [gamma_stage1(E0, 2, 2) for E0 in (1.0, 10.0, 100.0)]
    assert (g[2] - g[1]) / (g[1] - g[0]) == pytest.approx(10.0)


def test_gamma_stage1_matches_monte_carlo():
    r = alamouti_stage1(E0=1.0, T=100_000, seed=1)
    measured = np.mean(np.sum(np.abs(r) ** 2, axis=1))
    assert measured == pytest.approx(gamma_stage1(1.0, 2, 2), abs=0.1)
    r = alamouti_stage1(E0=2.0, T=100_000, seed=2)
    assert np.mean(np.sum(np.abs(r) ** 2, axis=1)) == pytest.approx(gamma_stage1(2.0, 2, 2), abs=0.15)


def test_mixed_rate_gamma_matches_monte_carlo():
    cfg = preset("2hop_4x2x1", E=100.0)
    res = simulate_batch(cfg, draw_batch(cfg, 100_000, RngStream(3, 0)))
    per_chunk = 2 * np.mean(np.abs(res.relay_values[0]) ** 2)
    assert per_chunk == pytest.approx(cfg.gammas[0], rel=0.02)


def test_stage_two_gamma_is_calibrated_and_repeatable():
    a = preset("3hop_2x2x2x1", E=100.0)
    b = preset("3hop_2x2x2x1", E=100.0)
    assert a.gammas == b.gammas
    assert a.gammas[0] == gamma_stage1(a.stage_power(0), 2, 2)
    res = simulate_batch(a, draw_batch(a, 200_000, RngStream(4, 0)))
    measured = 2 * np.mean(np.abs(res.relay_values[1]) ** 2)
    assert measured == pytest.approx(a.gammas[1], rel=0.02)


def test_per_relay_power_per_time_instant():
    cfg = preset("2hop_2x2x1", E=4.0)  # E_1 = E/4 = 1
    dset = cfg.dispersion_sets[0]
    c = cfg.transmit_scales()[0]
    total = np.zeros(2)
    frames = 0
    for b in range(10):
        res = simulate_batch(cfg, draw_batch(cfg, 100_000, RngStream(5, b)))
        r = res.relay_values[0]  # (B, M, L)
        t = c * (np.einsum("ktl,bkl->bkt", dset.A, r) + np.einsum("ktl,bkl->bkt", dset.B, r.conj()))
        total += np.sum(np.abs(t) ** 2, axis=(0, 2))
        frames += r.shape[0]
    per_instant = total / (frames * dset.relay_count)
    assert np.allclose(per_instant, cfg.stage_power(1), rtol=0.02)
