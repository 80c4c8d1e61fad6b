"""Monte Carlo experiments: BER sweeps, diversity fits, outage, covariance checks.

Every number produced here is a pure function of ``(config, seed)``.  Work
is split into fixed-size batches, each with its own random stream, and
results are reduced in batch order; the number of worker processes only
changes how fast that happens.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import draw_hops
from .detection import detect_symbols
from .network import NetworkConfig, draw_batch, simulate_batch
from .numerics import (
    PURPOSE_BER,
    PURPOSE_LEMMA1,
    PURPOSE_OUTAGE,
    PURPOSE_WHITENESS,
    RngStream,
    cn,
)

BATCH_FRAMES = 4096
OUTAGE_BATCH = 1_000_000
Z95 = 1.959963984540054


def default_workers() -> int:
    return os.cpu_count() or 1


def _point_key(value_db: float) -> int:
    return int(round(value_db * 1_000_000)) % (1 << 32)


def _stream(seed: int, value_db: float, batch: int, purpose: int) -> RngStream:
    return RngStream(seed, (_point_key(value_db) << 32) | batch, purpose)


def _run_ordered(fn, jobs, workers: int, done=None):
    """Evaluate ``fn`` over ``jobs`` in order, optionally stopping early.

    ``done(results_so_far)`` returns the number of leading results to keep
    once the stopping rule is met, or ``None`` to continue.  Results past
    that point are discarded, so the outcome never depends on ``workers``.
    """
    results = []
    if workers <= 1:
        for job in jobs:
            results.append(fn(job))
            if done is not None and (keep := done(results)) is not None:
                return results[:keep]
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        it = iter(jobs)
        while True:
            chunk = [job for _, job in zip(range(2 * workers), it)]
            if not chunk:
                return results
            results.extend(pool.map(fn, chunk))
            if done is not None and (keep := done(results)) is not None:
                return results[:keep]


# ---------------------------------------------------------------------------
# BER


@dataclass
class BerPoint:
    e_db: float
    trials: int
    bit_errors: int
    bits_per_frame: int
    symbol_errors: int = 0
    resampled: int = 0
    under_resolved: bool = False

    @property
    def bits(self) -> int:
        return self.trials * self.bits_per_frame

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.trials else float("nan")

    @property
    def ci95(self) -> tuple[float, float]:
        p = self.ber
        half = Z95 * np.sqrt(p * (1 - p) / self.bits)
        return max(0.0, p - half), min(1.0, p + half)


@dataclass
class BerCurve:
    config: dict
    points: list[BerPoint] = field(default_factory=list)

    def __post_init__(self):
        self.points.sort(key=lambda p: p.e_db)

    @property
    def e_db(self) -> np.ndarray:
        return np.array([p.e_db for p in self.points])

    @property
    def ber(self) -> np.ndarray:
        return np.array([p.ber for p in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([p.bit_errors for p in self.points])

    def point(self, e_db: float) -> BerPoint:
        for p in self.points:
            if abs(p.e_db - e_db) < 1e-9:
                return p
        raise KeyError(e_db)


def _ber_batch(job):
    cfg, e_db, seed, batch, size, weighted = job
    inputs = draw_batch(cfg, size, _stream(seed, e_db, batch, PURPOSE_BER))
    res = simulate_batch(cfg, inputs)
    index, _ = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation, weighted)
    tx_index = cfg.constellation.bits_to_indices(inputs.bits)
    bits = cfg.constellation.indices_to_bits(index)
    return size, int(np.count_nonzero(bits != inputs.bits)), int(np.count_nonzero(index != tx_index)), inputs.resampled


def ber_point(config: NetworkConfig, e_db: float, min_errors: int, max_frames: int, seed: int,
              workers: int = 1, batch_frames: int = BATCH_FRAMES, weighted: bool = False) -> BerPoint:
    sizes = [min(batch_frames, max_frames - b * batch_frames) for b in range(-(-max_frames // batch_frames))]
    cfg = config.with_power(10 ** (e_db / 10))
    cfg.gammas  # calibrate once here rather than in every worker
    jobs = [(cfg, e_db, seed, b, n, weighted) for b, n in enumerate(sizes)]

    def done(results):
        total = 0
        for i, r in enumerate(results):
            total += r[1]
            if total >= min_errors:
                return i + 1
        return None

    results = _run_ordered(_ber_batch, jobs, workers, done)
    frames = sum(r[0] for r in results)
    errors = sum(r[1] for r in results)
    return BerPoint(
        e_db=float(e_db),
        trials=frames,
        bit_errors=errors,
        bits_per_frame=config.bits_per_frame,
        symbol_errors=sum(r[2] for r in results),
        resampled=sum(r[3] for r in results),
        under_resolved=errors < min_errors,
    )


def ber_sweep(config: NetworkConfig, e_db_list, min_errors: int = 200, max_frames: int = 1_000_000,
              seed: int = 1, workers: int = 1, batch_frames: int = BATCH_FRAMES,
              weighted: bool = False) -> BerCurve:
    """BER against total power ``E`` (dB).

    Each level runs batches until ``min_errors`` bit errors or ``max_frames``
    frames; points that stop on ``max_frames`` are flagged ``under_resolved``.
    """
    points = [
        ber_point(config, e, min_errors, max_frames, seed, workers, batch_frames, weighted)
        for e in e_db_list
    ]
    return BerCurve(config.describe(), points)


# ---------------------------------------------------------------------------
# slope fits


@dataclass
class SlopeFit:
    slope: float
    fit_range: tuple[float, float]
    r_squared: float
    used_db: tuple[float, ...] = ()


def fit_slope(x_db, p, counts=None, fit_range=None, min_count: int = 100) -> SlopeFit:
    """Negated least-squares slope of ``log10(p)`` against ``log10`` of the power.

    Only points inside ``fit_range`` (dB, inclusive) whose event count is at
    least ``min_count`` enter the fit; fewer than three such points is an
    error.
    """
    x_db = np.asarray(x_db, dtype=float)
    p = np.asarray(p, dtype=float)
    keep = p > 0
    if counts is not None:
        keep &= np.asarray(counts) >= min_count
    if fit_range is not None:
        keep &= (x_db >= fit_range[0] - 1e-9) & (x_db <= fit_range[1] + 1e-9)
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 valid points to fit, have {int(keep.sum())}")
    x = x_db[keep] / 10.0
    y = np.log10(p[keep])
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    rng = fit_range if fit_range is not None else (float(x_db[keep].min()), float(x_db[keep].max()))
    return SlopeFit(float(-coef[0]), tuple(float(v) for v in rng), r2, tuple(float(v) for v in x_db[keep]))


def fit_diversity(curve: BerCurve, fit_range=None, min_errors: int = 100) -> SlopeFit:
    return fit_slope(curve.e_db, curve.ber, curve.errors, fit_range, min_errors)


# ---------------------------------------------------------------------------
# outage


def effective_gain_q(hops) -> np.ndarray:
    """``q`` = sum over all source-to-destination paths of the product of
    squared channel magnitudes (the per-symbol cascaded channel)."""
    v = np.sum(np.abs(hops[0]) ** 2, axis=-2)
    for h in hops[1:]:
        v = np.einsum("bk,bkj->bj", v, np.abs(h) ** 2)
    return v.sum(axis=-1)


def outage_threshold(snr: float, r: float, rate_offset: float) -> float:
    """Largest ``q`` in outage: ``log2(1 + snr*q) <= rate_offset + r*log2(snr)``."""
    return (2.0**rate_offset * snr**r - 1.0) / snr


@dataclass
class OutagePoint:
    snr_db: float
    trials: int
    outages: int

    @property
    def p_out(self) -> float:
        return self.outages / self.trials


@dataclass
class OutageCurve:
    config: dict
    r: float
    rate_offset: float
    points: list[OutagePoint] = field(default_factory=list)

    @property
    def snr_db(self):
        return np.array([p.snr_db for p in self.points])

    @property
    def p_out(self):
        return np.array([p.p_out for p in self.points])

    @property
    def outages(self):
        return np.array([p.outages for p in self.points])


def _outage_batch(job):
    antennas, snr_db, r, rate_offset, seed, batch, size = job
    rng = _stream(seed, snr_db, batch, PURPOSE_OUTAGE).generator()
    q = effective_gain_q(draw_hops(rng, antennas, size))
    return size, int(np.count_nonzero(q <= outage_threshold(10 ** (snr_db / 10), r, rate_offset)))


def outage_sweep(config: NetworkConfig, snr_db_list, r: float = 0.0, trials: int = 10_000_000,
                 seed: int = 1, rate_offset: float = 1.0, workers: int = 1,
                 batch: int = OUTAGE_BATCH) -> OutageCurve:
    """Outage probability of the separated per-symbol channel.

    The target rate is ``rate_offset + r*log2(SNR)`` bits; fresh channels are
    drawn for every SNR point.
    """
    if not 0 <= r < 1:
        raise ValueError("multiplexing gain r must lie in [0, 1)")
    curve = OutageCurve(config.describe(), r, rate_offset)
    for snr_db in sorted(snr_db_list):
        sizes = [min(batch, trials - b * batch) for b in range(-(-trials // batch))]
        jobs = [(config.antennas, snr_db, r, rate_offset, seed, b, n) for b, n in enumerate(sizes)]
        res = _run_ordered(_outage_batch, jobs, workers)
        curve.points.append(OutagePoint(float(snr_db), sum(x[0] for x in res), sum(x[1] for x in res)))
    return curve


# ---------------------------------------------------------------------------
# noise-covariance bound


@dataclass
class Lemma1Report:
    trials: int
    max_relative_violation: float
    violations: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def lemma1_check(M1: int, M2: int, E1: float, gamma: float, trials: int = 10_000, seed: int = 1,
                 tolerance: float = 1e-12, probe: str = "random", G=None) -> Lemma1Report:
    """Check ``x R_W x^H <= (1 + (E1 M1^2/gamma) lambda_max(G^H G / M1)) |x|^2``.

    ``R_W = I + (E1 M1/gamma) G^H G`` is the per-slot destination noise
    covariance.  ``probe="top"`` uses the top eigenvector of ``G^H G``, where
    the bound is tight.  ``G`` may be supplied as ``(trials, M1, M2)``.
    """
    rng = RngStream(seed, (M1 << 16) | M2, PURPOSE_LEMMA1).generator()
    if G is None:
        G = cn(rng, (trials, M1, M2))
    G = np.asarray(G, dtype=complex)
    trials = G.shape[0]
    GhG = np.conj(np.swapaxes(G, 1, 2)) @ G
    Rw = np.eye(M2) + (E1 * M1 / gamma) * GhG
    lam, vec = np.linalg.eigh(GhG / M1)
    lam_max = lam[:, -1]
    if probe == "top":
        x = np.conj(vec[:, :, -1])  # row vector x with x^H the top eigenvector
    else:
        x = cn(rng, (trials, M2))
    lhs = np.einsum("bi,bij,bj->b", x, Rw, x.conj()).real
    norm2 = np.sum(np.abs(x) ** 2, axis=1)
    rhs = (1.0 + (E1 * M1**2 / gamma) * lam_max) * norm2
    rel = (lhs - rhs) / rhs
    return Lemma1Report(trials, float(rel.max()), int(np.count_nonzero(rel > tolerance)), tolerance)


# ---------------------------------------------------------------------------
# whiteness


@dataclass
class CovarianceDiag:
    label: str
    covariance: np.ndarray
    z_scores: np.ndarray  # max(|z_re|, |z_im|) per off-diagonal entry, NaN on the diagonal
    trials: int
    diagonal_se: np.ndarray | None = None

    def diagonal_spread_z(self) -> float:
        """Largest pairwise gap between diagonal entries in standard errors."""
        d = np.diag(self.covariance).real
        se = self.diagonal_se
        gaps = np.abs(d[:, None] - d[None, :]) / np.sqrt(se[:, None] ** 2 + se[None, :] ** 2)
        np.fill_diagonal(gaps, 0.0)
        return float(gaps.max())

    @property
    def max_abs_z(self) -> float:
        return float(np.nanmax(self.z_scores))

    @property
    def max_off_diagonal(self) -> float:
        off = self.covariance - np.diag(np.diag(self.covariance))
        return float(np.max(np.abs(off)))


@dataclass
class WhitenessReport:
    config: dict
    trials: int
    entries: list[CovarianceDiag]

    def passed(self, z_limit: float = 4.0) -> bool:
        return all(e.max_abs_z <= z_limit for e in self.entries)

    def max_abs_z(self) -> float:
        return max(e.max_abs_z for e in self.entries)


def _covariance_diag(label: str, samples: np.ndarray) -> CovarianceDiag:
    """Sample covariance of ``samples`` ``(T, F)`` with z-scores of its
    off-diagonal entries against zero (empirical standard errors)."""
    T, F = samples.shape
    prod = samples[:, :, None] * samples[:, None, :].conj()  # (T, F, F)
    cov = prod.mean(axis=0)
    se_re = prod.real.std(axis=0, ddof=1) / np.sqrt(T)
    se_im = prod.imag.std(axis=0, ddof=1) / np.sqrt(T)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.maximum(np.abs(cov.real) / se_re, np.abs(cov.imag) / se_im)
    z[np.eye(F, dtype=bool)] = np.nan
    return CovarianceDiag(label, cov, z, T, np.diag(se_re).copy())


def whiteness_report(config: NetworkConfig, trials: int = 100_000, seed: int = 1,
                     batch: int = 20_000) -> WhitenessReport:
    """Covariance of the separated noise (noise-only frames) at every node.

    Relay nodes report their unit-noise separated outputs; the destination
    reports the antenna-summed outputs that feed the symbol decisions.
    """
    sizes = [min(batch, trials - b * batch) for b in range(-(-trials // batch))]
    cfg = config
    key = 10 * np.log10(cfg.E)
    per_node: dict[str, list[np.ndarray]] = {}
    for b, n in enumerate(sizes):
        inputs = draw_batch(cfg, n, _stream(seed, key, b, PURPOSE_WHITENESS), zero_symbols=True)
        res = simulate_batch(cfg, inputs)
        for stage, vals in enumerate(res.relay_values, start=1):
            for k in range(vals.shape[1]):
                per_node.setdefault(f"stage{stage}/relay{k + 1}", []).append(vals[:, k, :])
        per_node.setdefault("destination/combined", []).append(res.dest_values.sum(axis=1))
    entries = [_covariance_diag(label, np.concatenate(chunks)) for label, chunks in per_node.items()]
    return WhitenessReport(config.describe(), trials, entries)
