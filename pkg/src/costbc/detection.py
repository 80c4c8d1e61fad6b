"""Destination decisions.

:func:`per_symbol_detect` decides every symbol on its own from the combined
separated outputs.  :func:`joint_ml_detect` is the brute-force reference: it
scores every codeword of a destination block against the raw received block
under the exact Gaussian likelihood.  Both break ties toward the lowest
constellation index, so they can be compared decision for decision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .ostbc import Constellation, qam4

MAX_CODEBOOK = 4096


@dataclass
class SymbolDecision:
    index: np.ndarray
    bits: np.ndarray
    metric_margin: np.ndarray


@dataclass
class EffectiveChannel:
    per_antenna_gain: np.ndarray
    per_antenna_noise_var: np.ndarray


def bits_to_symbols(bits, constellation: Constellation | None = None) -> np.ndarray:
    return (constellation or qam4()).modulate(bits)


def symbols_to_bits(symbols, constellation: Constellation | None = None) -> np.ndarray:
    const = constellation or qam4()
    symbols = np.asarray(symbols, dtype=complex)
    idx = np.argmin(np.abs(symbols[..., None] - const.points), axis=-1)
    if not np.allclose(const.points[idx], symbols, atol=1e-9):
        raise ValueError("symbols are not constellation points")
    return const.indices_to_bits(idx)


def effective_channel(trace) -> EffectiveChannel:
    return EffectiveChannel(np.asarray(trace.effective_gain), np.asarray(trace.noise_vars))


def _two_smallest(metric):
    part = np.partition(metric, 1, axis=-1)
    return part[..., 0], part[..., 1]


def detect_symbols(values, gains, noise_vars, constellation: Constellation, weighted: bool = False):
    """Per-symbol nearest-point decisions from per-antenna separated outputs.

    ``values``: ``(..., R, F)``, ``gains``/``noise_vars``: ``(..., R)``.
    The default combiner adds the antenna outputs as they are; ``weighted``
    divides each by its noise variance first.  Returns ``(index, margin)``.
    """
    values = np.asarray(values)
    gains = np.asarray(gains, dtype=float)
    if weighted:
        w = 1.0 / np.asarray(noise_vars, dtype=float)
        combined = np.sum(values * w[..., None], axis=-2)
        gain = np.sum(gains * w, axis=-1)
    else:
        combined = np.sum(values, axis=-2)
        gain = np.sum(gains, axis=-1)
    metric = np.abs(combined[..., None] - gain[..., None, None] * constellation.points) ** 2
    index = np.argmin(metric, axis=-1)
    best, second = _two_smallest(metric)
    return index, second - best


def per_symbol_detect(trace, constellation: Constellation | None = None, weighted: bool = False) -> SymbolDecision:
    const = constellation or qam4()
    values = np.stack([d.values for d in trace.destination])
    index, margin = detect_symbols(values, trace.effective_gain, trace.noise_vars, const, weighted)
    return SymbolDecision(index, const.indices_to_bits(index), margin)


def codebook(constellation: Constellation, L: int) -> np.ndarray:
    """All index tuples of length ``L`` in lexicographic order, ``(Q**L, L)``."""
    if constellation.size**L > MAX_CODEBOOK:
        raise ValueError(
            f"codebook of {constellation.size}**{L} words exceeds the oracle limit {MAX_CODEBOOK}"
        )
    return np.array(list(itertools.product(range(constellation.size), repeat=L)), dtype=np.int64)


def joint_ml_metrics(config, raw_blocks, relay_gains, last_hop, scale=None):
    """Negative log-likelihood (up to constants) of every codeword.

    ``raw_blocks``: ``(..., blocks, K, R)`` destination blocks; ``relay_gains``:
    ``(..., M)`` unit-noise gains of the last relay stage; ``last_hop``:
    ``(..., M, R)``.  Returns ``(metrics (..., blocks, Q**L), words)``.

    Each slot ``t`` of the block carries independent noise with covariance
    ``I + c^2 G^H diag(w_t) G`` across antennas, ``w_t`` being the forwarded
    relay-noise weights of that slot.
    """
    dset = config.dispersion_sets[-1]
    design = dset.outgoing_design
    const = config.constellation
    c = config.transmit_scales()[-1] if scale is None else scale
    words = codebook(const, design.L)
    D = design.unscaled(const.points[words])  # (W, K, M)
    G = np.asarray(last_hop)
    heff = np.asarray(relay_gains)[..., :, None] * G  # (..., M, R)
    Yhat = c * np.einsum("wtk,...kr->...wtr", D, heff)  # (..., W, K, R)
    weights = dset.slot_noise_weights()  # (M, K)
    # R_t[..., t, i, j] = delta_ij + c^2 sum_k w[k, t] conj(G[k, i]) G[k, j]
    Rt = np.eye(G.shape[-1]) + c**2 * np.einsum("kt,...ki,...kj->...tij", weights, G.conj(), G)
    Rinv = np.linalg.inv(Rt)
    E = np.asarray(raw_blocks)[..., :, None, :, :] - Yhat[..., None, :, :, :]  # (..., X, W, K, R)
    # row-vector form e R^{-1} e^H with R = E[e^H e]
    q = np.einsum("...xwti,...tij,...xwtj->...xw", E, Rinv, E.conj()).real
    return q, words


def joint_ml_detect(trace, config) -> SymbolDecision:
    """Exhaustive maximum-likelihood decision for every destination block of a frame."""
    hop = trace.realization.hop(config.N - 1)
    q, words = joint_ml_metrics(config, trace.raw_blocks, trace.relay_gains[-1], hop, trace.transmit_scales[-1])
    best = np.argmin(q, axis=-1)  # (X,)
    b1, b2 = _two_smallest(q)
    index = words[best].reshape(-1)
    L = words.shape[1]
    margin = np.repeat(b2 - b1, L)
    return SymbolDecision(index, config.constellation.indices_to_bits(index), margin)


def joint_ml_batch(config, inputs, result):
    """Joint-ML indices ``(B, F)`` and per-block margins ``(B, X)`` for a batch."""
    q, words = joint_ml_metrics(
        config, result.raw_blocks, result.relay_gains[-1], inputs.hops[-1]
    )
    best = np.argmin(q, axis=-1)
    b1, b2 = _two_smallest(q)
    B = q.shape[0]
    return words[best].reshape(B, -1), b2 - b1
