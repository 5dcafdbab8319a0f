"""Numerology math, slot points, sample timestamps and clock alignment.

Everything in here is a pure function over immutable value types; the rest of
the stack builds its notion of time on top of these primitives.  Sample
timestamps are plain ``int`` tick counts at the configured sampling rate
(64-bit in spirit; Python ints never wrap in practice).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

NOF_SFNS = 1024
SUBFRAMES_PER_FRAME = 10
SYMBOLS_PER_SLOT = 14  # normal cyclic prefix only

# Sample timestamps are tick counts since the radio epoch.
SampleTimestamp = int


def symbol_sizes_for(mu: int, sampling_rate_hz: int, fft_size: int) -> tuple[int, ...]:
    """Per-symbol sample counts (CP + useful part) covering one subframe.

    Normal-CP structure: every symbol carries ``fft_size`` useful samples plus
    a base cyclic prefix; the first symbol of each half-subframe (symbol 0 and
    symbol 7*2^mu) carries an extended prefix.  Raises ``ValueError`` when the
    sampling rate does not yield integral prefix lengths.
    """
    nof_symbols = SYMBOLS_PER_SLOT * (1 << mu)
    # Base CP is 144*kappa*2^-mu units of T_c, the long-CP extra is 16*kappa,
    # with kappa = 64 and 1/T_c = 480 kHz * 4096.  Scale to the sample clock.
    tc_per_second = 480_000 * 4096
    base_num = 144 * 64 * sampling_rate_hz
    base_den = (1 << mu) * tc_per_second
    extra_num = 16 * 64 * sampling_rate_hz
    if base_num % base_den != 0 or extra_num % tc_per_second != 0:
        raise ValueError(
            f"sampling rate {sampling_rate_hz} Hz gives non-integral CP lengths at mu={mu}"
        )
    base_cp = base_num // base_den
    extra = extra_num // tc_per_second
    long_cp_at = (0, 7 * (1 << mu))
    return tuple(
        fft_size + base_cp + (extra if s in long_cp_at else 0) for s in range(nof_symbols)
    )


@dataclass(frozen=True)
class NumerologyConfig:
    """Carrier numerology and the sample-clock geometry derived from it."""

    scs_khz: int
    mu: int
    sampling_rate_hz: int
    nof_prb: int
    fft_size: int
    symbol_sizes: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if self.scs_khz != 15 << self.mu:
            raise ValueError(f"scs {self.scs_khz} kHz inconsistent with mu={self.mu}")
        if self.sampling_rate_hz % 1000 != 0:
            raise ValueError("sampling rate must be an integer multiple of 1000")
        if self.fft_size * self.scs_khz * 1000 != self.sampling_rate_hz:
            raise ValueError("fft_size * scs does not match the sampling rate")
        if 12 * self.nof_prb > self.fft_size:
            raise ValueError(f"{self.nof_prb} PRBs do not fit an fft of {self.fft_size}")
        if len(self.symbol_sizes) != self.slots_per_subframe * SYMBOLS_PER_SLOT:
            raise ValueError("symbol_sizes must cover exactly one subframe")
        if sum(self.symbol_sizes) != self.samples_per_subframe:
            raise ValueError("symbol_sizes do not sum to one subframe of samples")

    @classmethod
    def from_rate(cls, scs_khz: int, sampling_rate_hz: int, nof_prb: int) -> "NumerologyConfig":
        mu = {15: 0, 30: 1}.get(scs_khz)
        if mu is None:
            raise ValueError(f"unsupported subcarrier spacing {scs_khz} kHz")
        if sampling_rate_hz % (scs_khz * 1000) != 0:
            raise ValueError("sampling rate is not a multiple of the subcarrier spacing")
        fft_size = sampling_rate_hz // (scs_khz * 1000)
        sizes = symbol_sizes_for(mu, sampling_rate_hz, fft_size)
        return cls(scs_khz, mu, sampling_rate_hz, nof_prb, fft_size, sizes)

    @property
    def slots_per_subframe(self) -> int:
        return 1 << self.mu

    @property
    def symbols_per_slot(self) -> int:
        return SYMBOLS_PER_SLOT

    @property
    def samples_per_subframe(self) -> int:
        return self.sampling_rate_hz // 1000

    @property
    def samples_per_slot(self) -> int:
        return self.samples_per_subframe // self.slots_per_subframe

    @property
    def slots_per_frame(self) -> int:
        return SUBFRAMES_PER_FRAME * self.slots_per_subframe

    @property
    def nof_slots_per_system_frame(self) -> int:
        return NOF_SFNS * SUBFRAMES_PER_FRAME * self.slots_per_subframe

    @property
    def slot_us(self) -> int:
        return 1000 >> self.mu

    @property
    def subcarriers(self) -> int:
        return 12 * self.nof_prb

    def slot_symbol_sizes(self, slot_in_subframe: int) -> tuple[int, ...]:
        lo = slot_in_subframe * SYMBOLS_PER_SLOT
        return self.symbol_sizes[lo : lo + SYMBOLS_PER_SLOT]


@dataclass(frozen=True)
class SlotPoint:
    """Position in the slot lattice: (SFN, subframe, slot) at a numerology."""

    mu: int
    sfn: int
    subframe: int
    slot: int

    def __post_init__(self):
        if not 0 <= self.sfn < NOF_SFNS:
            raise ValueError(f"sfn {self.sfn} out of range")
        if not 0 <= self.subframe < SUBFRAMES_PER_FRAME:
            raise ValueError(f"subframe {self.subframe} out of range")
        if not 0 <= self.slot < (1 << self.mu):
            raise ValueError(f"slot {self.slot} out of range for mu={self.mu}")

    def system_slot(self) -> int:
        return (self.sfn * SUBFRAMES_PER_FRAME + self.subframe) * (1 << self.mu) + self.slot

    def nof_slots_per_system_frame(self) -> int:
        return NOF_SFNS * SUBFRAMES_PER_FRAME * (1 << self.mu)

    @classmethod
    def from_system_slot(cls, mu: int, system_slot: int) -> "SlotPoint":
        per_sf = 1 << mu
        total = NOF_SFNS * SUBFRAMES_PER_FRAME * per_sf
        system_slot %= total
        subframes, slot = divmod(system_slot, per_sf)
        sfn, subframe = divmod(subframes, SUBFRAMES_PER_FRAME)
        return cls(mu, sfn, subframe, slot)

    def add_slots(self, n: int) -> "SlotPoint":
        return SlotPoint.from_system_slot(self.mu, self.system_slot() + n)


@dataclass(frozen=True)
class GpsInstant:
    """Wall-clock instant: integral seconds plus a nanosecond fraction."""

    seconds: int
    nanoseconds: int

    def __post_init__(self):
        if not 0 <= self.nanoseconds < 1_000_000_000:
            raise ValueError("nanoseconds must lie in [0, 1e9)")


@dataclass(frozen=True)
class AlignmentConfig:
    """Downlink processing lead of the radio, in samples."""

    rx_to_tx_max_delay_samples: int

    def __post_init__(self):
        if self.rx_to_tx_max_delay_samples <= 0:
            raise ValueError("rx_to_tx_max_delay_samples must be positive")

    @classmethod
    def from_delay_us(cls, delay_us: float, cfg: NumerologyConfig) -> "AlignmentConfig":
        # Store in samples; round the product up so the lead never shrinks.
        samples = math.ceil(delay_us * cfg.sampling_rate_hz / 1e6)
        return cls(samples)


def align_start_time(now: SampleTimestamp, cfg: NumerologyConfig) -> SampleTimestamp:
    """Round a tick count up to the next subframe boundary."""
    spsf = cfg.samples_per_subframe
    return -(-now // spsf) * spsf


def slot_point_from_sample_time(
    t: SampleTimestamp, cfg: NumerologyConfig
) -> tuple[SlotPoint, int, int]:
    """Locate a sample timestamp on the slot lattice.

    Returns the slot point plus the symbol index within the slot and the
    sample index within that symbol.
    """
    spsf = cfg.samples_per_subframe
    i_sf = (t // spsf) % (NOF_SFNS * SUBFRAMES_PER_FRAME)
    i_sample_symbol = t % spsf
    i_symbol_sf = 0
    while i_sample_symbol >= cfg.symbol_sizes[i_symbol_sf]:
        i_sample_symbol -= cfg.symbol_sizes[i_symbol_sf]
        i_symbol_sf += 1
    i_slot = i_sf * cfg.slots_per_subframe + i_symbol_sf // SYMBOLS_PER_SLOT
    point = SlotPoint.from_system_slot(cfg.mu, i_slot)
    return point, i_symbol_sf % SYMBOLS_PER_SLOT, i_sample_symbol


def gps_slot_point(now: GpsInstant, cfg: NumerologyConfig) -> SlotPoint:
    """Slot point of a wall-clock instant.

    The millisecond index within the 10.24 s hyperframe fixes (sfn, subframe);
    the microsecond fraction within the subframe divided by the slot duration
    fixes the slot.
    """
    ms_total = (now.seconds * 1000 + now.nanoseconds // 1_000_000) % (
        NOF_SFNS * SUBFRAMES_PER_FRAME
    )
    sfn, subframe = divmod(ms_total, SUBFRAMES_PER_FRAME)
    us_in_subframe = (now.nanoseconds % 1_000_000) // 1000
    slot = us_in_subframe // cfg.slot_us
    return SlotPoint(cfg.mu, sfn, subframe, slot)


def calculate_slot_diff(src: SlotPoint, dst: SlotPoint) -> int:
    """Forward distance from src to dst in slots, wrapping at the hyperframe.

    The source is assumed to run behind the destination, so a negative raw
    difference wraps around once.
    """
    if src.mu != dst.mu:
        raise ValueError(f"mixed numerologies: mu={src.mu} vs mu={dst.mu}")
    total = src.nof_slots_per_system_frame()
    return (dst.system_slot() - src.system_slot()) % total


def alignment_offset(
    phy_slot: SlotPoint, gps_slot: SlotPoint, align: AlignmentConfig, cfg: NumerologyConfig
) -> int:
    """Slot offset the low PHY must add to map hardware slots onto GPS slots."""
    diff = calculate_slot_diff(phy_slot, gps_slot)
    cali = -(-align.rx_to_tx_max_delay_samples // cfg.samples_per_slot)
    return diff + cali


def nearest_slot_point(
    mu: int, frame_id: int, subframe: int, slot: int, near: SlotPoint
) -> SlotPoint:
    """Expand an 8-bit frame id to the full SFN candidate nearest ``near``.

    Wire headers fold the 10-bit SFN modulo 256; the candidate within half the
    hyperframe of the reference wins, ties broken toward the future.
    """
    total = near.nof_slots_per_system_frame()
    cur = near.system_slot()
    best = None
    for k in range(NOF_SFNS // 256):
        cand = SlotPoint(mu, frame_id + 256 * k, subframe, slot)
        d = (cand.system_slot() - cur) % total
        if d >= total // 2:
            d -= total
        if best is None or abs(d) < abs(best[0]) or (abs(d) == abs(best[0]) and d > best[0]):
            best = (d, cand)
    return best[1]
