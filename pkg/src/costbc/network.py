"""End-to-end cascaded OSTBC frames over an N-hop amplify-and-forward chain.

Two implementations of the same frame live here:

* :func:`run_frame` walks one frame relay by relay using the scalar
  building blocks (:func:`~costbc.ostbc.matched_filter`,
  :func:`~costbc.relay.relay_transmit`).  It is the readable reference.
* :func:`simulate_batch` pushes a whole batch of frames through numpy
  arrays.  Monte Carlo sweeps use it; tests check it against
  :func:`run_frame` on identical draws.

Conventions: ``antennas = (M_0, ..., M_N)``.  Transmitting stage ``n`` is the
source for ``n = 0`` and relay stage ``n`` otherwise.  A frame carries
``F = lcm`` of all per-stage symbol counts, so every stage sends a whole
number of blocks (this is how the 4 -> 2 antenna schedule is realized).
Channels are held for the whole frame.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property, reduce

import numpy as np

from .channel import ChannelRealization, draw_hops
from .numerics import (
    PURPOSE_CALIBRATION,
    PURPOSE_NOISE,
    PURPOSE_RESAMPLE,
    PURPOSE_SYMBOLS,
    RngStream,
    cn,
)
from .ostbc import (
    CONSTELLATIONS,
    Constellation,
    OstbcDesign,
    SeparatedSymbols,
    encode,
    get_design,
    matched_filter,
    matched_filter_raw,
    qam4,
    separate,
)
from .relay import (
    DispersionSet,
    StagePower,
    gamma_stage1,
    get_dispersion_set,
    relay_transmit,
)

POWER_TOL = 1e-9
CALIBRATION_DRAWS = 100_000
CALIBRATION_SEED = 0x5EED


@dataclass(frozen=True)
class Allocation:
    """Source power ``E0`` and per-relay power ``relay_powers[n-1]`` of stage ``n``."""

    E: float
    E0: float
    relay_powers: tuple[float, ...]

    def check(self, antennas) -> None:
        relays = antennas[1:-1]
        if len(relays) != len(self.relay_powers):
            raise ValueError("one relay power per relay stage is required")
        if self.E0 <= 0 or any(p <= 0 for p in self.relay_powers):
            raise ValueError("source and relay powers must all be positive")
        total = self.E0 + sum(m * p for m, p in zip(relays, self.relay_powers))
        if abs(total - self.E) > POWER_TOL * max(1.0, abs(self.E)):
            raise ValueError(
                f"power constraint E0 + sum(M_n E_n) = E violated: {total!r} != {self.E!r}"
            )


def equal_allocation(E: float, antennas) -> Allocation:
    """``E0 = M_n E_n = E / N`` for every relay stage."""
    if E <= 0:
        raise ValueError("total power must be positive")
    N = len(antennas) - 1
    alloc = Allocation(E, E / N, tuple(E / (N * m) for m in antennas[1:-1]))
    alloc.check(antennas)
    return alloc


def custom_allocation(E: float, fractions, antennas) -> Allocation:
    """Scale ``fractions = (f0, f1, ..., f_{N-1})`` by ``E``.

    ``f0`` is the source share and ``f_n`` the share of *each* relay in stage
    ``n``, so ``f0 + sum(M_n f_n)`` must equal one.
    """
    if E <= 0:
        raise ValueError("total power must be positive")
    fractions = tuple(float(f) for f in fractions)
    relays = antennas[1:-1]
    if len(fractions) != len(relays) + 1:
        raise ValueError(f"expected {len(relays) + 1} allocation fractions, got {len(fractions)}")
    total = fractions[0] + sum(m * f for m, f in zip(relays, fractions[1:]))
    if abs(total - 1.0) > POWER_TOL:
        raise ValueError(
            f"allocation fractions violate E0 + sum(M_n E_n) = E (sum is {total!r})"
        )
    if any(f <= 0 for f in fractions):
        raise ValueError("every stage needs a positive power share")
    alloc = Allocation(E, fractions[0] * E, tuple(f * E for f in fractions[1:]))
    alloc.check(antennas)
    return alloc


@dataclass(frozen=True)
class BlockSchedule:
    """How one relay stage regroups buffered source symbols.

    ``assignment[b]`` lists the 1-based positions (over the concatenated
    source blocks) that relay block ``b`` carries.
    """

    chunk: int
    src_blocks: int
    relay_blocks: int
    assignment: tuple[tuple[int, ...], ...]


def build_schedule(src: OstbcDesign, relay: OstbcDesign | DispersionSet) -> BlockSchedule:
    chunk = math.lcm(src.L, relay.L)
    rb = chunk // relay.L
    assignment = tuple(
        tuple(range(b * relay.L + 1, (b + 1) * relay.L + 1)) for b in range(rb)
    )
    return BlockSchedule(chunk, chunk // src.L, rb, assignment)


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    """A cascaded-OSTBC network at one total power ``E``.

    ``fractions`` is ``None`` for equal allocation, otherwise the tuple
    accepted by :func:`custom_allocation`.  ``noise_var`` scales the physical
    noise only; receivers always normalize as if it were one, so
    ``noise_var=0`` gives noiseless frames with the usual processing.
    """

    name: str
    antennas: tuple[int, ...]
    source_design: OstbcDesign
    dispersion_sets: tuple[DispersionSet, ...]
    E: float = 100.0
    fractions: tuple[float, ...] | None = None
    constellation: Constellation = field(default_factory=qam4)
    noise_var: float = 1.0
    calibration_seed: int = CALIBRATION_SEED

    def __post_init__(self):
        object.__setattr__(self, "antennas", tuple(int(m) for m in self.antennas))
        object.__setattr__(self, "dispersion_sets", tuple(self.dispersion_sets))
        if self.fractions is not None:
            object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if self.N < 2:
            raise ValueError("need at least two hops (one relay stage)")
        if min(self.antennas) < 1:
            raise ValueError("antenna counts must be positive")
        if self.source_design.K != self.antennas[0]:
            raise ValueError(
                f"source design {self.source_design.name} needs {self.source_design.K} "
                f"antennas, M_0 = {self.antennas[0]}"
            )
        if len(self.dispersion_sets) != self.N - 1:
            raise ValueError(f"need {self.N - 1} dispersion sets, got {len(self.dispersion_sets)}")
        for n, dset in enumerate(self.dispersion_sets, start=1):
            if dset.relay_count != self.antennas[n]:
                raise ValueError(
                    f"stage {n}: dispersion set {dset.name} has {dset.relay_count} "
                    f"relays, M_{n} = {self.antennas[n]}"
                )
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        self.allocation  # validates the power split

    @property
    def N(self) -> int:
        return len(self.antennas) - 1

    @cached_property
    def allocation(self) -> Allocation:
        if self.fractions is None:
            return equal_allocation(self.E, self.antennas)
        return custom_allocation(self.E, self.fractions, self.antennas)

    def stage_design(self, n: int) -> OstbcDesign:
        """Design transmitted by stage ``n`` (0 = source)."""
        return self.source_design if n == 0 else self.dispersion_sets[n - 1].outgoing_design

    @cached_property
    def designs(self) -> tuple[OstbcDesign, ...]:
        return tuple(self.stage_design(n) for n in range(self.N))

    @cached_property
    def frame_symbols(self) -> int:
        return reduce(math.lcm, [self.source_design.L] + [d.L for d in self.dispersion_sets])

    def blocks(self, n: int) -> int:
        return self.frame_symbols // self.stage_design(n).L

    @property
    def bits_per_frame(self) -> int:
        return self.frame_symbols * self.constellation.bits_per_symbol

    def stage_power(self, n: int) -> float:
        a = self.allocation
        return a.E0 if n == 0 else a.relay_powers[n - 1]

    def with_power(self, E: float, fractions=...) -> "NetworkConfig":
        return replace(self, E=float(E), fractions=self.fractions if fractions is ... else fractions)

    def schedules(self) -> list[BlockSchedule]:
        return [build_schedule(self.stage_design(n - 1), d) for n, d in enumerate(self.dispersion_sets, 1)]

    @cached_property
    def gammas(self) -> tuple[float, ...]:
        """Normalization ``gamma_n`` of every relay stage, ``n = 1..N-1``."""
        return tuple(_calibrate_gammas(self))

    def transmit_scales(self) -> tuple[float, ...]:
        return tuple(
            float(np.sqrt(self.stage_power(n) * self.antennas[n] / self.gammas[n - 1]))
            for n in range(1, self.N)
        )

    def describe(self) -> dict:
        a = self.allocation
        return {
            "name": self.name,
            "antennas": list(self.antennas),
            "source_design": self.source_design.name,
            "dispersion_sets": [d.name for d in self.dispersion_sets],
            "E": self.E,
            "allocation": "equal" if self.fractions is None else list(self.fractions),
            "E0": a.E0,
            "relay_powers": list(a.relay_powers),
            "constellation": self.constellation.name,
            "noise_var": self.noise_var,
            "calibration_seed": self.calibration_seed,
        }


def diversity_upper_bound(config_or_antennas) -> int:
    m = getattr(config_or_antennas, "antennas", config_or_antennas)
    return min(m[n] * m[n + 1] for n in range(len(m) - 1))


# ---------------------------------------------------------------------------
# presets

_PRESET_RE = re.compile(r"^(2hop_2x2|2hop_4x4|2hop_4x2|3hop_2x2x2)x([1-9])$")
_PRESET_PARTS = {
    "2hop_2x2": ((2, 2), "alamouti", ("alamouti_pair",)),
    "2hop_4x4": ((4, 4), "ostbc4_r34", ("ostbc4_r34_set",)),
    "2hop_4x2": ((4, 2), "ostbc4_r34", ("mixed_4to2",)),
    "3hop_2x2x2": ((2, 2, 2), "alamouti", ("alamouti_pair", "alamouti_pair")),
}
PRESET_FAMILIES = tuple(f"{k}xD" for k in _PRESET_PARTS)


def preset(name: str, E: float = 100.0, fractions=None, **kw) -> NetworkConfig:
    """Named configurations, e.g. ``2hop_2x2x1`` or ``3hop_2x2x2x3``."""
    m = _PRESET_RE.match(name)
    if not m:
        raise KeyError(f"unknown preset {name!r}; families: {', '.join(PRESET_FAMILIES)}")
    head, src, sets = _PRESET_PARTS[m.group(1)]
    return NetworkConfig(
        name=name,
        antennas=head + (int(m.group(2)),),
        source_design=get_design(src),
        dispersion_sets=tuple(get_dispersion_set(s) for s in sets),
        E=E,
        fractions=fractions,
        **kw,
    )


def build_config(name, antennas, source_design, dispersion_sets, constellation="qam4", **kw) -> NetworkConfig:
    """Config from registry names (used for inline config files)."""
    return NetworkConfig(
        name=name,
        antennas=tuple(antennas),
        source_design=get_design(source_design),
        dispersion_sets=tuple(get_dispersion_set(d) for d in dispersion_sets),
        constellation=CONSTELLATIONS[constellation](),
        **kw,
    )


# ---------------------------------------------------------------------------
# gain recursion and gamma calibration


def _slot_weight(dset: DispersionSet) -> np.ndarray:
    """Average forwarded-noise weight of each relay across its slots."""
    return dset.slot_noise_weights().mean(axis=1)


def _symbol_energy(config: NetworkConfig) -> float:
    return float(np.mean(np.abs(config.constellation.points) ** 2))


def chain_gains(config: NetworkConfig, hops, gammas=None, upto: int | None = None):
    """Per-node separated-symbol gains along the chain for a batch of channels.

    Returns ``gains`` where ``gains[n-1]`` has shape ``(B, M_n)`` and holds the
    (unit-noise) gain of every node of stage ``n``, plus the input noise
    variances at each stage (``1`` at stage one).  ``upto`` stops after stage
    ``upto`` so calibration can run before later gammas exist.
    """
    gammas = config.gammas if gammas is None else gammas
    upto = config.N if upto is None else upto
    src = config.source_design
    h0 = hops[0]
    a = np.sqrt(config.stage_power(0)) * src.nu * np.sqrt(np.sum(np.abs(h0) ** 2, axis=-2))
    gains = [a]
    noise_vars = [np.ones_like(a)]
    for n in range(1, min(upto, config.N)):
        dset = config.dispersion_sets[n - 1]
        c = np.sqrt(config.stage_power(n) * config.antennas[n] / gammas[n - 1])
        g2 = np.abs(hops[n]) ** 2  # (B, M_n, M_{n+1})
        heff2 = np.einsum("bk,bkj->bj", gains[-1] ** 2, g2)
        var = 1.0 + c**2 * np.einsum("k,bkj->bj", _slot_weight(dset), g2)
        gains.append(c * np.sqrt(heff2 / var))
        noise_vars.append(var)
    return gains, noise_vars


def _calibrate_gammas(config: NetworkConfig) -> list[float]:
    es = _symbol_energy(config)
    first = config.dispersion_sets[0]
    gammas = [
        gamma_stage1(config.stage_power(0), config.antennas[0], first.L, config.source_design.L, es)
    ]
    if config.N > 2:
        rng = RngStream(config.calibration_seed, 0, PURPOSE_CALIBRATION).generator()
        hops = draw_hops(rng, config.antennas, CALIBRATION_DRAWS)
        for n in range(2, config.N):
            gains, _ = chain_gains(config, hops, gammas, upto=n)
            second_moment = float(np.mean(gains[n - 1] ** 2)) * es + 1.0
            gammas.append(config.dispersion_sets[n - 1].L * second_moment)
    return gammas


def stage_gamma_general(stage: int, config: NetworkConfig) -> float:
    """Expected squared norm of the separated-symbol block entering relay stage ``stage``.

    Closed form at stage one; later stages use a seeded calibration run of
    ``CALIBRATION_DRAWS`` channel draws, cached on the config.
    """
    if not 1 <= stage < config.N:
        raise ValueError(f"stage must be in 1..{config.N - 1}")
    return config.gammas[stage - 1]


# ---------------------------------------------------------------------------
# random inputs


@dataclass(frozen=True, eq=False)
class FrameInputs:
    """Everything random in one frame apart from the channels.

    ``noises[n]`` is the unit-variance noise of hop ``n`` with shape
    ``(blocks_n, M_{n+1}, K_n)``.
    """

    bits: np.ndarray
    noises: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class BatchInputs:
    hops: tuple[np.ndarray, ...]
    bits: np.ndarray
    noises: tuple[np.ndarray, ...]
    resampled: int = 0
    silent: bool = False  # transmit all-zero symbols (noise-only frames)

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    def frame(self, i: int) -> tuple[ChannelRealization, FrameInputs]:
        real = ChannelRealization(tuple(h[i] for h in self.hops), i)
        return real, FrameInputs(self.bits[i], tuple(z[i] for z in self.noises))


def _noise_shapes(config: NetworkConfig):
    return [
        (config.blocks(n), config.antennas[n + 1], config.antennas[n]) for n in range(config.N)
    ]


def draw_frame_inputs(config: NetworkConfig, seed: int, frame_id: int) -> FrameInputs:
    bits = RngStream(seed, frame_id, PURPOSE_SYMBOLS).generator().integers(
        0, 2, config.bits_per_frame, dtype=np.uint8
    )
    rng = RngStream(seed, frame_id, PURPOSE_NOISE).generator()
    return FrameInputs(bits, tuple(cn(rng, s) for s in _noise_shapes(config)))


def _degenerate(hops) -> np.ndarray:
    bad = np.zeros(hops[0].shape[0], dtype=bool)
    for h in hops:
        bad |= np.any(np.all(h == 0, axis=-2), axis=-1)
    return bad


def draw_batch(config: NetworkConfig, size: int, stream: RngStream, zero_symbols: bool = False) -> BatchInputs:
    """Draw channels, bits and noise for ``size`` frames from one stream.

    Frames whose channel has an all-zero column (probability zero, but
    handled) are redrawn from a dedicated resampling stream and counted.
    """
    rng = stream.generator()
    hops = draw_hops(rng, config.antennas, size)
    bits = rng.integers(0, 2, (size, config.bits_per_frame), dtype=np.uint8)
    noises = tuple(cn(rng, (size,) + s) for s in _noise_shapes(config))
    bad = _degenerate(hops)
    resampled = int(bad.sum())
    if resampled:
        rs = stream.child(stream.stream_id, PURPOSE_RESAMPLE).generator()
        while bad.any():
            idx = np.flatnonzero(bad)
            fresh = draw_hops(rs, config.antennas, len(idx))
            for h, f in zip(hops, fresh):
                h[idx] = f
            bad = _degenerate(hops)
    return BatchInputs(tuple(hops), bits, noises, resampled, zero_symbols)


def symbols_from_bits(config: NetworkConfig, bits) -> np.ndarray:
    return config.constellation.modulate(bits)


# ---------------------------------------------------------------------------
# reference pipeline (one frame)


@dataclass
class FrameTrace:
    """Full record of one frame.

    ``stage_outputs[n-1][k]`` is the list (per block) of unit-noise
    :class:`SeparatedSymbols` at relay ``k`` of stage ``n``.
    ``destination[j]`` holds the un-normalized separated outputs of antenna
    ``j`` over all ``F`` symbols: ``values = effective_gain[j] * s + noise``
    with noise variance ``noise_vars[j]``.
    """

    bits: np.ndarray
    symbols: np.ndarray
    stage_outputs: list
    destination: list[SeparatedSymbols]
    effective_gain: np.ndarray
    noise_vars: np.ndarray
    raw_blocks: np.ndarray  # (blocks, K_{N-1}, M_N) destination received blocks
    realization: ChannelRealization
    relay_gains: list[np.ndarray]
    transmit_scales: tuple[float, ...]
    tx_energy: list[float]


def run_frame(config: NetworkConfig, realization: ChannelRealization, inputs: FrameInputs) -> FrameTrace:
    N = config.N
    F = config.frame_symbols
    symbols = symbols_from_bits(config, inputs.bits)
    noise_amp = np.sqrt(config.noise_var)
    scales = config.transmit_scales()

    # source -> stage 1
    src = config.source_design
    H0 = realization.hop(0)
    tx_energy = []
    blocks_tx = [
        np.sqrt(config.stage_power(0)) * encode(src, symbols[x * src.L:(x + 1) * src.L])
        for x in range(config.blocks(0))
    ]
    tx_energy.append(float(sum(np.sum(np.abs(b) ** 2) for b in blocks_tx)))
    stage_outputs = []
    per_relay = []
    for k in range(config.antennas[1]):
        outs = []
        for x, X in enumerate(blocks_tx):
            y = X @ H0[:, k] + noise_amp * inputs.noises[0][x, k]
            outs.append(matched_filter(src, y, H0[:, k], np.sqrt(config.stage_power(0)), 1.0))
        per_relay.append(outs)
    stage_outputs.append(per_relay)

    destination = None
    raw_blocks = None
    for n in range(1, N):
        dset = config.dispersion_sets[n - 1]
        design = dset.outgoing_design
        power = StagePower(config.stage_power(n), config.gammas[n - 1])
        c = scales[n - 1]
        M = config.antennas[n]
        Hn = realization.hop(n)
        gains = np.array([outs[0].gain for outs in stage_outputs[-1]])
        # each relay buffers its F separated symbols and re-blocks them
        buffers = [np.concatenate([o.values for o in outs]) for outs in stage_outputs[-1]]
        nb = config.blocks(n)
        tx = np.zeros((nb, design.K, M), dtype=complex)  # slot x relay
        for k in range(M):
            for x in range(nb):
                tx[x, :, k] = relay_transmit(dset, k, buffers[k][x * dset.L:(x + 1) * dset.L], power)
        tx_energy.append(float(np.sum(np.abs(tx) ** 2)))
        weights = dset.slot_noise_weights().mean(axis=1)
        receivers = []
        raw = np.zeros((nb, design.K, config.antennas[n + 1]), dtype=complex)
        last = n == N - 1
        for j in range(config.antennas[n + 1]):
            heff = gains * Hn[:, j]
            var = 1.0 + c**2 * float(np.sum(weights * np.abs(Hn[:, j]) ** 2))
            outs = []
            for x in range(nb):
                y = tx[x] @ Hn[:, j] + noise_amp * inputs.noises[n][x, j]
                raw[x, :, j] = y
                if last:
                    outs.append(matched_filter_raw(design, y, heff, c / design.nu, var))
                else:
                    outs.append(matched_filter(design, y, heff, c / design.nu, var))
            receivers.append(outs)
        if last:
            destination = [
                SeparatedSymbols(np.concatenate([o.values for o in outs]), outs[0].gain, outs[0].noise_var)
                for outs in receivers
            ]
            raw_blocks = raw
        else:
            stage_outputs.append(receivers)

    relay_gains = [np.array([outs[0].gain for outs in st]) for st in stage_outputs]
    return FrameTrace(
        bits=np.asarray(inputs.bits),
        symbols=symbols,
        stage_outputs=stage_outputs,
        destination=destination,
        effective_gain=np.array([d.gain for d in destination]),
        noise_vars=np.array([d.noise_var for d in destination]),
        raw_blocks=raw_blocks,
        realization=realization,
        relay_gains=relay_gains,
        transmit_scales=scales,
        tx_energy=tx_energy,
    )


# ---------------------------------------------------------------------------
# vectorized pipeline (many frames)


@dataclass
class BatchResult:
    """Arrays mirroring :class:`FrameTrace` with a leading frame axis.

    ``relay_values[n-1]``: ``(B, M_n, F)`` unit-noise separated symbols.
    ``dest_values``: ``(B, M_N, F)``; ``dest_gain``/``dest_noise_var``: ``(B, M_N)``.
    """

    symbols: np.ndarray
    relay_values: list[np.ndarray]
    relay_gains: list[np.ndarray]
    dest_values: np.ndarray
    dest_gain: np.ndarray
    dest_noise_var: np.ndarray
    raw_blocks: np.ndarray  # (B, blocks, K, M_N)
    tx_energy: list[np.ndarray]


def _separate_normalized(design, y, heff, amp, var):
    """Batched :func:`matched_filter`: y ``(..., R, K)``, heff ``(..., R, K)``."""
    norm2 = np.sum(np.abs(heff) ** 2, axis=-1)
    z = separate(design, y, heff)
    values = z / np.sqrt(norm2 * var)[..., None]
    gain = amp * design.nu * np.sqrt(norm2 / var)
    return values, gain, norm2


def simulate_batch(config: NetworkConfig, inputs: BatchInputs) -> BatchResult:
    B = inputs.size
    F = config.frame_symbols
    noise_amp = np.sqrt(config.noise_var)
    scales = config.transmit_scales()
    src = config.source_design
    if inputs.silent:
        s = np.zeros((B, F), dtype=complex)
    else:
        s = symbols_from_bits(config, inputs.bits)

    H0 = inputs.hops[0]
    nb = config.blocks(0)
    X = np.sqrt(config.stage_power(0)) * encode(src, s.reshape(B, nb, src.L))  # (B, nb, K, M0)
    tx_energy = [np.sum(np.abs(X) ** 2, axis=(1, 2, 3))]
    # y[b, x, k, t] = sum_m X[b, x, t, m] H0[b, m, k]
    y = np.matmul(X, H0[:, None]).transpose(0, 1, 3, 2) + noise_amp * inputs.noises[0]
    h = np.swapaxes(H0, 1, 2)[:, None]  # (B, 1, M1, M0)
    values, gains, _ = _separate_normalized(src, y, h, np.sqrt(config.stage_power(0)), 1.0)
    # values (B, nb, M1, L0) -> per relay buffers (B, M1, F)
    r = values.transpose(0, 2, 1, 3).reshape(B, config.antennas[1], F)
    a = gains[:, 0, :]
    relay_values = [r]
    relay_gains = [a]

    for n in range(1, config.N):
        dset = config.dispersion_sets[n - 1]
        design = dset.outgoing_design
        c = scales[n - 1]
        M = config.antennas[n]
        nb = config.blocks(n)
        Hn = inputs.hops[n]  # (B, M, R)
        rb = r.reshape(B, M, nb, dset.L)
        # t[b, x, t, k] = c (A_k r + B_k conj r)
        t = c * (
            np.einsum("ktl,bkxl->bxtk", dset.A, rb) + np.einsum("ktl,bkxl->bxtk", dset.B, rb.conj())
        )
        tx_energy.append(np.sum(np.abs(t) ** 2, axis=(1, 2, 3)))
        ysig = np.matmul(t, Hn[:, None])  # (B, nb, K, R)
        yrx = ysig + noise_amp * np.swapaxes(inputs.noises[n], 2, 3)
        heff = (a[:, :, None] * Hn).transpose(0, 2, 1)[:, None]  # (B, 1, R, M)
        var = 1.0 + c**2 * np.einsum("k,bkj->bj", _slot_weight(dset), np.abs(Hn) ** 2)
        yr = np.swapaxes(yrx, 2, 3)  # (B, nb, R, K)
        if n < config.N - 1:
            values, gains, _ = _separate_normalized(design, yr, heff, c / design.nu, var[:, None, :])
            r = values.transpose(0, 2, 1, 3).reshape(B, config.antennas[n + 1], F)
            a = gains[:, 0, :]
            relay_values.append(r)
            relay_gains.append(a)
        else:
            z = separate(design, yr, heff)
            norm2 = np.sum(np.abs(heff[:, 0]) ** 2, axis=-1)  # (B, R)
            dest_values = z.transpose(0, 2, 1, 3).reshape(B, config.antennas[n + 1], F)
            dest_gain = c * norm2
            dest_noise_var = var * norm2
            raw_blocks = yrx

    return BatchResult(
        symbols=s,
        relay_values=relay_values,
        relay_gains=relay_gains,
        dest_values=dest_values,
        dest_gain=dest_gain,
        dest_noise_var=dest_noise_var,
        raw_blocks=raw_blocks,
        tx_energy=tx_energy,
    )

