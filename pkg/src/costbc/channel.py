"""Block Rayleigh fading for a directed multi-hop chain, and AWGN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import PURPOSE_CHANNEL, RngStream, cn


@dataclass(frozen=True)
class FadingModel:
    """Channels stay fixed for ``coherence`` consecutive frames."""

    coherence: int = 1

    def __post_init__(self):
        if self.coherence < 1:
            raise ValueError("coherence must be at least one frame")

    def block_of(self, frame_id: int) -> int:
        return frame_id // self.coherence


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Hop ``n`` matrix has shape ``(M_n, M_{n+1})``: entry ``[i, j]`` links
    transmit node ``i`` of stage ``n`` to receive node ``j`` of stage ``n+1``."""

    hop_matrices: tuple[np.ndarray, ...]
    frame_id: int

    @property
    def hops(self) -> int:
        return len(self.hop_matrices)

    def hop(self, n: int) -> np.ndarray:
        return self.hop_matrices[n]


def draw_hops(rng: np.random.Generator, antennas, batch: int | None = None) -> list[np.ndarray]:
    """i.i.d. CN(0,1) hop matrices; with ``batch`` a leading frame axis is added."""
    lead = () if batch is None else (batch,)
    return [cn(rng, lead + (antennas[n], antennas[n + 1])) for n in range(len(antennas) - 1)]


def draw_channels(config, frame_id: int, seed: int, fading: FadingModel | None = None) -> ChannelRealization:
    fading = fading or FadingModel()
    rng = RngStream(seed, fading.block_of(frame_id), PURPOSE_CHANNEL).generator()
    return ChannelRealization(tuple(draw_hops(rng, config.antennas)), frame_id)


def add_noise(signal, variance: float, stream: RngStream | np.random.Generator) -> np.ndarray:
    if variance < 0:
        raise ValueError("noise variance must be non-negative")
    signal = np.asarray(signal, dtype=complex)
    if variance == 0:
        return signal.copy()
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    return signal + cn(rng, signal.shape, variance)
