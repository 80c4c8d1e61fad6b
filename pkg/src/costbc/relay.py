"""Single-antenna relay processing with linear dispersion pairs.

Relay ``k`` of a stage with ``M`` relays turns its separated symbol vector
``r`` (length ``L``) into an ``M``-slot transmit vector

    t_k = sqrt(E_n * M / gamma) * (A_k r + B_k conj(r))

where ``gamma`` is the expected squared norm of ``r``.  Stacking the ``t_k``
as columns gives an orthogonal block, so the next stage sees an ordinary
OSTBC transmitted by distributed antennas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ostbc import OstbcDesign, SeparatedSymbols, get_design

TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DispersionSet:
    """Per-relay ``(A_k, B_k)`` pairs, stored as arrays of shape ``(M, M, L)``.

    ``A[k]`` is the ``M x L`` matrix of relay ``k``.
    """

    name: str
    A: np.ndarray
    B: np.ndarray
    expected_design: str | None = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        B = np.asarray(self.B, dtype=complex)
        if A.shape != B.shape or A.ndim != 3 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A/B must both have shape (M, M, L), got {A.shape} / {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def relay_count(self) -> int:
        return self.A.shape[0]

    @property
    def L(self) -> int:
        return self.A.shape[2]

    @property
    def outgoing_design(self) -> OstbcDesign:
        """The design realized by the stacked relay vectors.

        Column ``k`` of the block is ``A_k s + B_k conj(s)``, so the
        coefficient of ``s_l`` at (time t, antenna k) is ``A_k[t, l]``.
        """
        C = np.transpose(self.A, (2, 1, 0))
        D = np.transpose(self.B, (2, 1, 0))
        return OstbcDesign(self.expected_design or f"{self.name}_out", C, D)

    def slot_noise_weights(self) -> np.ndarray:
        """``(A_k A_k^H + B_k B_k^H)_tt`` as an ``(M relays, M slots)`` array.

        Variance of the forwarded unit noise of relay ``k`` in slot ``t``.
        """
        return np.sum(np.abs(self.A) ** 2 + np.abs(self.B) ** 2, axis=2).real

    def permuted(self, order) -> "DispersionSet":
        order = list(order)
        return DispersionSet(f"{self.name}_perm", self.A[order], self.B[order])


@dataclass
class ConstraintCheck:
    relay: int
    constraint: str
    max_violation: float
    passed: bool


@dataclass
class DispersionReport:
    name: str
    checks: list[ConstraintCheck] = field(default_factory=list)
    column_traces: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]

    def max_violation(self, constraint: str) -> float:
        return max((c.max_violation for c in self.checks if c.constraint == constraint), default=0.0)


def validate_dispersion(dset: DispersionSet, tol: float = TOL) -> DispersionReport:
    """Check the dispersion constraints relay by relay.

    * ``skew``: ``A_k^H B_k + B_k^H A_k = 0``
    * ``column_energy``: every column ``l`` has ``|A_k(l)|^2 + |B_k(l)|^2 = 1``
    * ``design`` (only when an expected design is named): the stacked block
      matches that design's unscaled coefficients.
    """
    report = DispersionReport(dset.name)
    col_energy = np.sum(np.abs(dset.A) ** 2 + np.abs(dset.B) ** 2, axis=1)  # (M, L)
    report.column_traces = col_energy.sum(axis=1)
    for k in range(dset.relay_count):
        Ak, Bk = dset.A[k], dset.B[k]
        skew = Ak.conj().T @ Bk + Bk.conj().T @ Ak
        v = float(np.max(np.abs(skew)))
        report.checks.append(ConstraintCheck(k, "skew", v, v <= tol))
        v = float(np.max(np.abs(col_energy[k] - 1.0)))
        report.checks.append(ConstraintCheck(k, "column_energy", v, v <= tol))
    if dset.expected_design is not None:
        want = get_design(dset.expected_design)
        got = dset.outgoing_design
        if want.C.shape != got.C.shape:
            v = np.inf
        else:
            v = float(max(np.max(np.abs(want.C - got.C)), np.max(np.abs(want.D - got.D))))
        report.checks.append(ConstraintCheck(-1, "design", v, v <= tol))
    return report


def _alamouti_pair(name: str) -> DispersionSet:
    A = np.zeros((2, 2, 2))
    B = np.zeros((2, 2, 2))
    A[0] = np.eye(2)
    B[1] = [[0, -1], [1, 0]]
    return DispersionSet(name, A, B, "alamouti_relay")


def alamouti_pair() -> DispersionSet:
    """Relay 1 forwards ``r``, relay 2 forwards ``(-conj(r2), conj(r1))``."""
    return _alamouti_pair("alamouti_pair")


def mixed_4to2() -> DispersionSet:
    """Alamouti pair applied to 2-symbol chunks of buffered rate-3/4 symbols."""
    return _alamouti_pair("mixed_4to2")


def ostbc4_r34_set() -> DispersionSet:
    A = np.zeros((4, 4, 3))
    B = np.zeros((4, 4, 3))
    A[0][0, 0] = 1
    A[1][0, 1] = 1
    A[2][0, 2] = 1
    A[3][1, 2] = 1
    A[3][2, 1] = 1
    A[3][3, 0] = -1
    B[0][1, 1] = -1
    B[0][2, 2] = 1
    B[1][1, 0] = 1
    B[1][3, 2] = 1
    B[2][2, 0] = -1
    B[2][3, 1] = -1
    return DispersionSet("ostbc4_r34_set", A, B, "ostbc4_r34")


DISPERSION_SETS = {
    "alamouti_pair": alamouti_pair,
    "mixed_4to2": mixed_4to2,
    "ostbc4_r34_set": ostbc4_r34_set,
}


def get_dispersion_set(name: str) -> DispersionSet:
    try:
        dset = DISPERSION_SETS[name]()
    except KeyError:
        raise KeyError(f"unknown dispersion set {name!r}; known: {sorted(DISPERSION_SETS)}") from None
    report = validate_dispersion(dset)
    if not report.passed:
        raise ValueError(f"dispersion set {name} fails validation: {report.failures()}")
    return dset


@dataclass(frozen=True)
class StagePower:
    E_n: float
    gamma: float

    def __post_init__(self):
        if not (self.E_n > 0 and self.gamma > 0):
            raise ValueError(f"E_n and gamma must be positive, got {self.E_n}, {self.gamma}")


def gamma_stage1(E0: float, M0: int, L: int, source_L: int | None = None, symbol_energy: float = 1.0) -> float:
    """Expected squared norm of an ``L``-symbol block of first-stage outputs.

    Each separated symbol has gain ``sqrt(E0) * nu * |h|`` with
    ``nu^2 = 1/source_L`` and ``E|h|^2 = M0``, plus unit noise, so its second
    moment is ``E0 * M0 * Es / source_L + 1``.  ``source_L`` defaults to ``L``.
    """
    source_L = L if source_L is None else source_L
    return L * (E0 * M0 * symbol_energy / source_L + 1.0)


def transmit_scale(dset: DispersionSet, power: StagePower) -> float:
    return float(np.sqrt(power.E_n * dset.relay_count / power.gamma))


def relay_transmit(dset: DispersionSet, k: int, separated: SeparatedSymbols | np.ndarray, power: StagePower) -> np.ndarray:
    r = separated.values if isinstance(separated, SeparatedSymbols) else separated
    r = np.asarray(r, dtype=complex)
    if r.shape != (dset.L,):
        raise ValueError(f"expected {dset.L} separated symbols, got shape {r.shape}")
    if not 0 <= k < dset.relay_count:
        raise ValueError(f"relay index {k} out of range for {dset.relay_count} relays")
    return transmit_scale(dset, power) * (dset.A[k] @ r + dset.B[k] @ r.conj())
