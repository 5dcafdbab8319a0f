"""Distributed-unit driver: pattern-owned scheduling and uplink reception.

The DU owns the duplex pattern.  Each slot is scheduled a fixed number of
slots (the scheduling offset) ahead of its OTA instant: control plane first,
then the downlink user plane, with a configured lead between them, all inside
the DU transmit windows.  Uplink frames are accepted inside the ta4 window
and their payload handed upward for inspection.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import low_phy
from .delay_profile import DuDelayProfile, Timeliness, WindowKind, check_window
from .iq_compress import (
    CompMeth,
    complex_to_scalars,
    compress_blocks,
    decompress_blocks,
    float_to_fixed,
    pack_prb_blocks,
    prb_block_size,
    unpack_prb_blocks,
)
from .ofh_codec import (
    FILTER_INDEX_PRACH_B4,
    FILTER_INDEX_STANDARD,
    MSG_TYPE_UPLANE,
    SECTION_TYPE_PRACH,
    SECTION_TYPE_REGULAR,
    CPlaneMessage,
    CSection,
    Direction,
    EaxcId,
    OfhAppHeader,
    OfhCodec,
    OfhCodecError,
    SeqKind,
    SequenceTracker,
    Type3Extras,
    UPlaneMessage,
    UPlaneSection,
    peek_msg_type,
)
from .timing import NumerologyConfig, SlotPoint, nearest_slot_point


class DuConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TddPattern:
    """Per-slot D/S/U sequence; the special slot counts as downlink here."""

    slots: tuple[str, ...]

    def __post_init__(self):
        if not self.slots or any(k not in "DSU" for k in self.slots):
            raise DuConfigError(f"invalid TDD pattern {''.join(self.slots)!r}")

    @classmethod
    def parse(cls, text: str) -> "TddPattern":
        return cls(tuple(text.upper()))

    @property
    def period_slots(self) -> int:
        return len(self.slots)

    def kind(self, system_slot: int) -> str:
        return self.slots[system_slot % len(self.slots)]


@dataclass(frozen=True)
class PrachSchedule:
    config_index: int
    freq_offset_halfscs: int
    occasion_period_slots: int
    occasion_offsets: tuple[int, ...]
    preamble_format: str = "B4"
    length_ra: int = 139
    start_symbol: int = 2
    num_symbols: int = 12
    time_offset: int = 0
    cp_length: int = 0

    def is_occasion(self, system_slot: int) -> bool:
        return system_slot % self.occasion_period_slots in self.occasion_offsets

    @property
    def symbols(self) -> tuple[int, ...]:
        return tuple(range(self.start_symbol, self.start_symbol + self.num_symbols))


@dataclass(frozen=True)
class DuSchedulerConfig:
    numerology: NumerologyConfig
    profile: DuDelayProfile
    scheduling_offset_slots: int
    pattern: TddPattern | None  # None means FDD: every slot carries both directions
    comp_meth: CompMeth
    comp_width: int
    eaxcs: tuple[EaxcId, ...]
    prach: PrachSchedule | None = None
    tcp_adv_dl_us: int = 125
    t1a_cp_dl_point_us: int | None = None  # emission instants before OTA; None = midpoint
    t1a_up_point_us: int | None = None
    t1a_cp_ul_point_us: int | None = None
    payload_seed: int = 1
    prach_port: int = 0
    eaxc_widths: tuple[int, int, int, int] = (4, 4, 4, 4)


@dataclass
class DuCounters:
    ul_on_time: int = 0
    ul_early: int = 0
    ul_late: int = 0
    ul_seq_gaps: int = 0
    ul_duplicates: int = 0
    ul_decode_errors: int = 0
    dl_slots_scheduled: int = 0
    lambda_count: int = 0
    lambda_sum: int = 0
    lambda_min: int | None = None
    lambda_max: int | None = None

    @property
    def lambda_mean(self) -> float:
        return self.lambda_sum / self.lambda_count if self.lambda_count else 0.0


@dataclass(frozen=True)
class DlPayload:
    grid: low_phy.ResourceGrid


@dataclass(frozen=True)
class UlGrant:
    start_prb: int = 0
    num_prb: int = 0  # 0 = whole carrier
    start_symbol: int = 0
    num_symbols: int = 14


@dataclass(frozen=True)
class PrachGrant:
    pass


@dataclass(frozen=True)
class DeliveredUplink:
    """One accepted uplink section, decompressed to fixed-point scalars."""

    system_slot: int
    eaxc: EaxcId
    filter_index: int
    symbol: int
    start_prb: int
    scalars: np.ndarray  # (n_prb, 24) int


class DuEngine:
    def __init__(self, cfg: DuSchedulerConfig):
        self.cfg = cfg
        num = cfg.numerology
        self.codec = OfhCodec(num.nof_prb, cfg.eaxc_widths)
        self.counters = DuCounters()
        self._tracker = SequenceTracker()
        self._seq: dict = {}
        self._delivered: list[DeliveredUplink] = []
        self._current = SlotPoint(num.mu, 0, 0, 0)
        p = cfg.profile
        self._cp_dl_point = self._pick_point(
            cfg.t1a_cp_dl_point_us, p.t1a_min_cp_dl, p.t1a_max_cp_dl, "t1a_cp_dl"
        )
        self._up_point = self._pick_point(
            cfg.t1a_up_point_us, p.t1a_min_up, p.t1a_max_up, "t1a_up"
        )
        self._cp_ul_point = self._pick_point(
            cfg.t1a_cp_ul_point_us, p.t1a_min_cp_ul, p.t1a_max_cp_ul, "t1a_cp_ul"
        )
        if cfg.tcp_adv_dl_us < 0:
            raise DuConfigError("tcp_adv_dl_us must be non-negative")
        if self._cp_dl_point - self._up_point < cfg.tcp_adv_dl_us:
            raise DuConfigError(
                f"C-plane lead {self._cp_dl_point - self._up_point} us below "
                f"tcp_adv_dl_us={cfg.tcp_adv_dl_us}"
            )
        horizon = cfg.scheduling_offset_slots * num.slot_us
        latest = max(p.t1a_max_cp_dl, p.t1a_max_cp_ul, p.t1a_max_up)
        if horizon < latest:
            raise DuConfigError(
                f"scheduling offset of {horizon} us cannot reach emissions {latest} us before OTA"
            )
        if cfg.prach is not None and cfg.prach.start_symbol + cfg.prach.num_symbols > 14:
            raise DuConfigError("PRACH occasion extends past the slot")

    @staticmethod
    def _pick_point(value, lo, hi, name):
        point = (lo + hi) // 2 if value is None else value
        if not lo <= point <= hi:
            raise DuConfigError(f"{name} emission point {point} outside window [{lo}, {hi}]")
        return point

    def ota_us(self, system_slot: int) -> int:
        return system_slot * self.cfg.numerology.slot_us

    def slot_kind(self, system_slot: int) -> str:
        """'D', 'S' or 'U' under TDD; FDD slots report 'F' (both directions)."""
        if self.cfg.pattern is None:
            return "F"
        return self.cfg.pattern.kind(system_slot)

    def is_prach_occasion(self, system_slot: int) -> bool:
        return self.cfg.prach is not None and self.cfg.prach.is_occasion(system_slot)

    # -- payload synthesis --------------------------------------------------

    def make_dl_grid(self, slot: SlotPoint) -> low_phy.ResourceGrid:
        """Deterministic unit-power QPSK content for one downlink slot."""
        num = self.cfg.numerology
        grid = low_phy.ResourceGrid(slot, num.nof_prb, len(self.cfg.eaxcs))
        rng = np.random.default_rng([self.cfg.payload_seed, slot.system_slot()])
        points = rng.integers(0, 4, size=grid.data.shape)
        grid.data[:] = ((1 - 2 * (points & 1)) + 1j * (1 - 2 * (points >> 1))) / np.sqrt(2)
        grid.written[:] = True
        return grid

    def payloads_for(self, slot: SlotPoint) -> list:
        """The scheduler inputs implied by the pattern for one slot."""
        s = slot.system_slot()
        kind = self.slot_kind(s)
        payloads: list = []
        if kind in ("D", "S", "F"):
            payloads.append(DlPayload(self.make_dl_grid(slot)))
        if kind in ("U", "F"):
            if self.is_prach_occasion(s):
                payloads.append(PrachGrant())
            else:
                payloads.append(UlGrant())
        return payloads

    # -- scheduling -----------------------------------------------------------

    def schedule_slot(self, slot: SlotPoint, now_us: int, payloads) -> list[tuple[int, bytes]]:
        """Emit the C/U-plane frames for one slot; returns (emit_at, bytes).

        ``now_us`` must equal the slot's OTA instant minus the scheduling
        offset; payload kinds must match the pattern direction for the slot.
        """
        num = self.cfg.numerology
        s = slot.system_slot()
        ota = self.ota_us(s)
        if now_us != ota - self.cfg.scheduling_offset_slots * num.slot_us:
            raise DuConfigError(
                f"slot {s} scheduled at {now_us} us, expected the scheduling offset instant"
            )
        kind = self.slot_kind(s)
        self._current = slot
        out: list[tuple[int, bytes]] = []
        for payload in payloads:
            if isinstance(payload, DlPayload):
                if kind not in ("D", "S", "F"):
                    raise DuConfigError(f"downlink payload for slot {s} of kind {kind}")
                out += self._schedule_dl(slot, ota, payload.grid)
                self.counters.dl_slots_scheduled += 1
            elif isinstance(payload, UlGrant):
                if kind not in ("U", "F"):
                    raise DuConfigError(f"uplink grant for slot {s} of kind {kind}")
                out += self._schedule_ul(slot, ota, payload)
            elif isinstance(payload, PrachGrant):
                if kind not in ("U", "F"):
                    raise DuConfigError(f"PRACH grant for slot {s} of kind {kind}")
                out += self._schedule_prach(slot, ota)
            else:
                raise DuConfigError(f"unknown payload {payload!r}")
        return out

    def _next_seq(self, eaxc: EaxcId, direction: Direction, plane: str) -> int:
        key = (eaxc, direction, plane)
        seq = self._seq.get(key, 0)
        self._seq[key] = (seq + 1) & 0xFF
        return seq

    def _app_header(self, slot: SlotPoint, direction: Direction, symbol: int, filter_index: int):
        return OfhAppHeader(
            data_direction=direction,
            filter_index=filter_index,
            frame_id=slot.sfn & 0xFF,
            subframe_id=slot.subframe,
            slot_id=slot.slot,
            start_symbol_id=symbol,
        )

    def _schedule_dl(self, slot, ota, grid) -> list[tuple[int, bytes]]:
        cfg = self.cfg
        num = cfg.numerology
        out = []
        section = CSection(section_id=1, start_prb=0, num_prb=0, num_symbol=14)
        for eaxc in cfg.eaxcs:
            msg = CPlaneMessage(
                app=self._app_header(slot, Direction.DL, 0, FILTER_INDEX_STANDARD),
                section_type=SECTION_TYPE_REGULAR,
                comp_meth=cfg.comp_meth,
                iq_width=cfg.comp_width,
                sections=(section,),
            )
            data = self.codec.encode_cplane(msg, eaxc, self._next_seq(eaxc, Direction.DL, "c"))
            out.append((ota - self._cp_dl_point, data))
        block = prb_block_size(cfg.comp_meth, cfg.comp_width)
        for port, eaxc in enumerate(cfg.eaxcs):
            res = grid.data[:, :, port].reshape(14 * num.nof_prb, 12)
            scalars = float_to_fixed(complex_to_scalars(res))
            exp, mant = compress_blocks(scalars, cfg.comp_meth, cfg.comp_width)
            raw = pack_prb_blocks(exp, mant, cfg.comp_meth, cfg.comp_width)
            stride = num.nof_prb * block
            for sym in range(14):
                sec = UPlaneSection(
                    section_id=1,
                    start_prb=0,
                    num_prb=0,
                    comp_meth=cfg.comp_meth,
                    iq_width=cfg.comp_width,
                    payload=raw[sym * stride : (sym + 1) * stride],
                )
                msg = UPlaneMessage(
                    self._app_header(slot, Direction.DL, sym, FILTER_INDEX_STANDARD), (sec,)
                )
                data = self.codec.encode_uplane(msg, eaxc, self._next_seq(eaxc, Direction.DL, "u"))
                out.append((ota - self._up_point, data))
        return out

    def _schedule_ul(self, slot, ota, grant: UlGrant) -> list[tuple[int, bytes]]:
        cfg = self.cfg
        section = CSection(
            section_id=1,
            start_prb=grant.start_prb,
            num_prb=grant.num_prb,
            num_symbol=grant.num_symbols,
        )
        out = []
        for eaxc in cfg.eaxcs:
            msg = CPlaneMessage(
                app=self._app_header(slot, Direction.UL, grant.start_symbol, FILTER_INDEX_STANDARD),
                section_type=SECTION_TYPE_REGULAR,
                comp_meth=cfg.comp_meth,
                iq_width=cfg.comp_width,
                sections=(section,),
            )
            data = self.codec.encode_cplane(msg, eaxc, self._next_seq(eaxc, Direction.UL, "c"))
            out.append((ota - self._cp_ul_point, data))
        return out

    def _schedule_prach(self, slot, ota) -> list[tuple[int, bytes]]:
        cfg = self.cfg
        prach = cfg.prach
        if prach is None:
            raise DuConfigError("PRACH grant without a PRACH schedule")
        nprb = -(-prach.length_ra // 12)
        section = CSection(
            section_id=2,
            start_prb=0,
            num_prb=nprb,
            num_symbol=prach.num_symbols,
            type3=Type3Extras(
                time_offset=prach.time_offset,
                frame_structure=0x10 | cfg.numerology.mu,
                cp_length=prach.cp_length,
                freq_offset=prach.freq_offset_halfscs,
            ),
        )
        eaxc = cfg.eaxcs[cfg.prach_port]
        msg = CPlaneMessage(
            app=self._app_header(slot, Direction.UL, prach.start_symbol, FILTER_INDEX_PRACH_B4),
            section_type=SECTION_TYPE_PRACH,
            comp_meth=cfg.comp_meth,
            iq_width=cfg.comp_width,
            sections=(section,),
        )
        data = self.codec.encode_cplane(msg, eaxc, self._next_seq(eaxc, Direction.UL, "c"))
        return [(ota - self._cp_ul_point, data)]

    def run_pattern(self, n_frames: int, start_system_slot: int | None = None):
        """Expand the pattern over whole frames; returns all (emit_at, bytes).

        Slots start one frame into the hyperframe by default so every emission
        instant is non-negative.
        """
        num = self.cfg.numerology
        first = num.slots_per_frame if start_system_slot is None else start_system_slot
        offset = self.cfg.scheduling_offset_slots * num.slot_us
        out = []
        for s in range(first, first + n_frames * num.slots_per_frame):
            slot = SlotPoint.from_system_slot(num.mu, s)
            out += self.schedule_slot(slot, self.ota_us(s) - offset, self.payloads_for(slot))
        return out

    # -- uplink reception -----------------------------------------------------

    def on_uplink_frame(self, data: bytes, arrival_us: int):
        try:
            if peek_msg_type(data) != MSG_TYPE_UPLANE:
                raise OfhCodecError("not a U-plane frame")
            frame = self.codec.decode_uplane(data)
            app = frame.msg.app
            if app.data_direction != Direction.UL:
                raise OfhCodecError("downlink-direction U-plane received on the DU side")
            if app.slot_id >= self.cfg.numerology.slots_per_subframe:
                raise OfhCodecError(f"slot_id {app.slot_id} invalid at this numerology")
        except OfhCodecError:
            self.counters.ul_decode_errors += 1
            return
        kind, gap = self._tracker.track(frame.eaxc, Direction.UL, "u", frame.seq_id)
        if kind == SeqKind.DUPLICATE:
            self.counters.ul_duplicates += 1
            return
        if kind == SeqKind.GAP:
            self.counters.ul_seq_gaps += gap
        slot = nearest_slot_point(
            self.cfg.numerology.mu, app.frame_id, app.subframe_id, app.slot_id, self._current
        )
        ota = self.ota_us(slot.system_slot())
        verdict = check_window(WindowKind.UPLANE_UL_RX, arrival_us, ota, self.cfg.profile)
        if verdict == Timeliness.EARLY:
            self.counters.ul_early += 1
            return
        if verdict == Timeliness.LATE:
            self.counters.ul_late += 1
            return
        self.counters.ul_on_time += 1
        lam = arrival_us - ota
        c = self.counters
        c.lambda_count += 1
        c.lambda_sum += lam
        c.lambda_min = lam if c.lambda_min is None else min(c.lambda_min, lam)
        c.lambda_max = lam if c.lambda_max is None else max(c.lambda_max, lam)
        for sec in frame.msg.sections:
            count = self.codec.effective_prbs(sec.start_prb, sec.num_prb)
            exp, mant = unpack_prb_blocks(sec.payload, count, sec.comp_meth, sec.iq_width)
            scalars = decompress_blocks(exp, mant, sec.comp_meth)
            self._delivered.append(
                DeliveredUplink(
                    system_slot=slot.system_slot(),
                    eaxc=frame.eaxc,
                    filter_index=app.filter_index,
                    symbol=app.start_symbol_id,
                    start_prb=sec.start_prb,
                    scalars=scalars,
                )
            )

    def take_delivered(self) -> list[DeliveredUplink]:
        out = self._delivered
        self._delivered = []
        return out

    def snapshot_counters(self) -> DuCounters:
        return copy.deepcopy(self.counters)
