"""Orthogonal space-time block codes: designs, encoding and symbol separation.

A design over ``L`` complex symbols with ``K`` antennas (= ``K`` time slots)
is stored as per-symbol coefficient pairs ``(C_l, D_l)``; the codeword is

    X(s) = nu * sum_l (C_l * s_l + D_l * conj(s_l)),      nu = 1/sqrt(L)

Rows of ``X`` are time slots and columns are antennas.  For a receive
channel ``h`` (one entry per transmit antenna) the received block is
``X(s) @ h + noise``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateChannelError(ValueError):
    """Raised when a channel vector is identically zero."""


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy constellation with a Gray bit labeling.

    ``points[i]`` carries the label whose integer value (MSB first) is
    ``labels[i]``.
    """

    name: str
    points: np.ndarray
    labels: np.ndarray
    bits_per_symbol: int

    @property
    def size(self) -> int:
        return len(self.points)

    def label_bits(self, index) -> np.ndarray:
        """Bit rows (MSB first) for the given point indices."""
        index = np.asarray(index)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((self.labels[index][..., None] >> shifts) & 1).astype(np.uint8)

    def bits_to_indices(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape[-1] % self.bits_per_symbol:
            raise ValueError(
                f"bit length {bits.shape[-1]} is not a multiple of "
                f"{self.bits_per_symbol}"
            )
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("bits must be 0 or 1")
        grouped = bits.reshape(*bits.shape[:-1], -1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        values = grouped @ weights
        return self._index_of_label[values]

    def indices_to_bits(self, index) -> np.ndarray:
        b = self.label_bits(index)
        return b.reshape(*b.shape[:-2], -1)

    def modulate(self, bits) -> np.ndarray:
        return self.points[self.bits_to_indices(bits)]

    @property
    def _index_of_label(self) -> np.ndarray:
        inv = np.empty(self.size, dtype=np.int64)
        inv[self.labels] = np.arange(self.size)
        return inv


def qam4() -> Constellation:
    """Gray-mapped 4-QAM.  First bit picks the real sign, second the imaginary
    sign (0 -> +, 1 -> -), so bits 00 map to (1+1j)/sqrt(2)."""
    pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    return Constellation("qam4", pts, np.arange(4), 2)


CONSTELLATIONS = {"qam4": qam4}


@dataclass(frozen=True, eq=False)
class OstbcDesign:
    name: str
    C: np.ndarray  # (L, K, K) coefficients of s_l
    D: np.ndarray  # (L, K, K) coefficients of conj(s_l)
    nu: float = field(default=0.0)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=complex)
        D = np.asarray(self.D, dtype=complex)
        if C.shape != D.shape or C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise ValueError(f"coefficient shapes {C.shape} / {D.shape} are not (L, K, K)")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        if not self.nu:
            object.__setattr__(self, "nu", 1.0 / np.sqrt(C.shape[0]))

    @property
    def K(self) -> int:
        return self.C.shape[1]

    @property
    def L(self) -> int:
        return self.C.shape[0]

    def unscaled(self, s) -> np.ndarray:
        """``sum_l C_l s_l + D_l conj(s_l)`` for ``s`` of shape ``(..., L)``."""
        s = np.asarray(s, dtype=complex)
        return np.einsum("ltk,...l->...tk", self.C, s) + np.einsum(
            "ltk,...l->...tk", self.D, s.conj()
        )

    def channel_vectors(self, h):
        """Per-symbol vectors ``u_l = C_l h`` and ``v_l = D_l h``, each ``(..., L, K)``."""
        h = np.asarray(h, dtype=complex)
        return (
            np.einsum("ltk,...k->...lt", self.C, h),
            np.einsum("ltk,...k->...lt", self.D, h),
        )


def _design_from_table(name: str, table) -> OstbcDesign:
    """Build a design from a symbolic placement table.

    ``table[t][k]`` is ``None`` (zero) or ``(l, sign, conj)`` meaning
    ``sign * s_l`` (or its conjugate) sits at time ``t``, antenna ``k``.
    """
    K = len(table)
    L = 1 + max(e[0] for row in table for e in row if e is not None)
    C = np.zeros((L, K, K), dtype=complex)
    D = np.zeros((L, K, K), dtype=complex)
    for t, row in enumerate(table):
        for k, entry in enumerate(row):
            if entry is None:
                continue
            l, sign, conj = entry
            (D if conj else C)[l, t, k] += sign
    return OstbcDesign(name, C, D)


def alamouti_design() -> OstbcDesign:
    """[[s1, s2], [-s2*, s1*]]."""
    return _design_from_table(
        "alamouti",
        [
            [(0, 1, False), (1, 1, False)],
            [(1, -1, True), (0, 1, True)],
        ],
    )


def alamouti_relay_design() -> OstbcDesign:
    """[[s1, -s2*], [s2, s1*]], the block two single-antenna relays form with
    the cascaded Alamouti dispersion pair."""
    return _design_from_table(
        "alamouti_relay",
        [
            [(0, 1, False), (1, -1, True)],
            [(1, 1, False), (0, 1, True)],
        ],
    )


def rate34_design() -> OstbcDesign:
    """Rate-3/4 design for four antennas.

    [[ s1,   s2,   s3,   0 ],
     [-s2*,  s1*,  0,    s3],
     [ s3*,  0,   -s1*,  s2],
     [ 0,    s3*, -s2*, -s1]]
    """
    return _design_from_table(
        "ostbc4_r34",
        [
            [(0, 1, False), (1, 1, False), (2, 1, False), None],
            [(1, -1, True), (0, 1, True), None, (2, 1, False)],
            [(2, 1, True), None, (0, -1, True), (1, 1, False)],
            [None, (2, 1, True), (1, -1, True), (0, -1, False)],
        ],
    )


DESIGNS = {
    "alamouti": alamouti_design,
    "alamouti_relay": alamouti_relay_design,
    "ostbc4_r34": rate34_design,
}


def get_design(name: str) -> OstbcDesign:
    try:
        return DESIGNS[name]()
    except KeyError:
        raise KeyError(f"unknown design {name!r}; known: {sorted(DESIGNS)}") from None


def encode(design: OstbcDesign, s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    if s.shape[-1] != design.L:
        raise ValueError(f"design {design.name} takes {design.L} symbols, got {s.shape[-1]}")
    return design.nu * design.unscaled(s)


def orthogonality_error(design: OstbcDesign, s) -> float:
    """Max entrywise deviation of X X^H from nu^2 * |s|^2 * I over a batch of ``s``."""
    s = np.atleast_2d(np.asarray(s, dtype=complex))
    X = encode(design, s)
    gram = X @ np.conj(np.swapaxes(X, -1, -2))
    target = (design.nu**2 * np.sum(np.abs(s) ** 2, axis=-1))[:, None, None] * np.eye(design.K)
    return float(np.max(np.abs(gram - target)))


@dataclass(frozen=True)
class SeparatedSymbols:
    """Per-symbol scalar observations ``values = gain * s + noise``."""

    values: np.ndarray
    gain: float
    noise_var: float = 1.0


def separate(design: OstbcDesign, received, channel) -> np.ndarray:
    """Linear combining that decouples the constituent symbols.

    For ``received = a * X(s) @ channel + n`` this returns, per symbol,
    ``a * nu * |channel|^2 * s_l`` plus noise of variance ``var(n) * |channel|^2``.
    Broadcasts over leading axes of ``received`` and ``channel``.
    """
    u, v = design.channel_vectors(channel)
    y = np.asarray(received, dtype=complex)[..., None, :]
    return np.sum(u.conj() * y, axis=-1) + np.sum(v.conj() * y, axis=-1).conj()


def _check_inputs(design, received, channel):
    received = np.asarray(received, dtype=complex)
    channel = np.asarray(channel, dtype=complex)
    if received.shape != (design.K,) or channel.shape != (design.K,):
        raise ValueError(
            f"expected received and channel of length {design.K}, got "
            f"{received.shape} and {channel.shape}"
        )
    norm2 = float(np.sum(np.abs(channel) ** 2))
    if norm2 == 0.0:
        raise DegenerateChannelError("all-zero channel")
    return received, channel, norm2


def matched_filter_raw(design: OstbcDesign, received, channel, tx_amp: float, input_noise_var: float = 1.0) -> SeparatedSymbols:
    """Un-normalized separation: gain ``tx_amp*nu*|h|^2``, noise variance ``var*|h|^2``."""
    received, channel, norm2 = _check_inputs(design, received, channel)
    return SeparatedSymbols(
        separate(design, received, channel),
        tx_amp * design.nu * norm2,
        input_noise_var * norm2,
    )


def matched_filter(design: OstbcDesign, received, channel, tx_amp: float, input_noise_var: float) -> SeparatedSymbols:
    """Separate the symbols of one received block and whiten to unit noise.

    Returns ``values_l = gain * s_l + w_l`` with ``w`` white of unit variance
    and ``gain = tx_amp * nu * |channel| / sqrt(input_noise_var)``.
    """
    if input_noise_var <= 0:
        raise ValueError("input_noise_var must be positive")
    received, channel, norm2 = _check_inputs(design, received, channel)
    scale = 1.0 / np.sqrt(norm2 * input_noise_var)
    return SeparatedSymbols(
        separate(design, received, channel) * scale,
        tx_amp * design.nu * np.sqrt(norm2 / input_noise_var),
        1.0,
    )
