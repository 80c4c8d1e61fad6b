"""Small dense complex linear algebra and seeded random streams.

Matrices are plain ``numpy`` complex arrays.  Every matrix in this package is
at most 8x8, so nothing here tries to be clever about storage.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-9


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def conj_transpose(a) -> np.ndarray:
    return _as_matrix(a).conj().T


def is_hermitian(a, tol: float = HERMITIAN_TOL) -> bool:
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def max_eigenvalue_hermitian(a) -> float:
    """Largest eigenvalue of a Hermitian positive semidefinite matrix.

    Raises ``ValueError`` if ``a`` is not square or deviates from Hermitian
    symmetry by more than 1e-9 in any entry.
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not is_hermitian(a):
        raise ValueError("matrix is not Hermitian")
    return float(np.linalg.eigvalsh(a)[-1])


# Stream purposes.  Kept as small integers so they can be part of the
# SeedSequence spawn key.
PURPOSE_GENERIC = 0
PURPOSE_CHANNEL = 1
PURPOSE_NOISE = 2
PURPOSE_SYMBOLS = 3
PURPOSE_CALIBRATION = 4
PURPOSE_BER = 5
PURPOSE_OUTAGE = 6
PURPOSE_LEMMA1 = 7
PURPOSE_WHITENESS = 8
PURPOSE_RESAMPLE = 9


def label_id(label: str) -> int:
    """Stable 63-bit id for a text label (e.g. a preset name)."""
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little") >> 1


@dataclass(frozen=True)
class RngStream:
    """Counter-style random stream keyed by ``(master_seed, stream_id)``.

    Each stream owns an independent Philox generator derived through
    ``numpy.random.SeedSequence``.  Nothing is shared between streams, so a
    frame drawn in one worker is bit-identical to the same frame drawn in
    another.
    """

    master_seed: int
    stream_id: int
    purpose: int = PURPOSE_GENERIC

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "purpose"):
            value = getattr(self, name)
            if value < 0 or value >= 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.purpose, self.stream_id)
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id: int, purpose: int | None = None) -> "RngStream":
        return RngStream(
            self.master_seed,
            stream_id,
            self.purpose if purpose is None else purpose,
        )


def cn(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with total variance ``variance``."""
    scale = np.sqrt(variance / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def sample_cn(stream: RngStream, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return cn(stream.generator(), n)
