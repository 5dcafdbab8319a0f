"""Radio-unit engine: context repositories, grid pool, window enforcement.

The engine is driven by two serialized callbacks: ``on_frame`` for every
fronthaul frame and ``on_slot_boundary`` once per slot in increasing order.
It owns no notion of TDD patterns; per-slot behaviour is a pure function of
the control-plane messages that arrived in their windows.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import low_phy
from .delay_profile import RuDelayProfile, Timeliness, WindowKind, check_window
from .iq_compress import (
    CompMeth,
    complex_to_scalars,
    compress_blocks,
    decompress_blocks,
    fixed_to_float,
    float_to_fixed,
    pack_prb_blocks,
    scalars_to_complex,
    unpack_prb_blocks,
)
from .ofh_codec import (
    MSG_TYPE_CPLANE,
    MSG_TYPE_UPLANE,
    FILTER_INDEX_PRACH_B4,
    SECTION_TYPE_PRACH,
    DecodeError,
    Direction,
    EaxcId,
    OfhAppHeader,
    OfhCodec,
    OfhCodecError,
    UPlaneMessage,
    UPlaneSection,
    peek_msg_type,
)
from .timing import NumerologyConfig, SlotPoint, nearest_slot_point


class RuEngineFault(RuntimeError):
    """Caller broke the serialized-callback contract."""


@dataclass(frozen=True)
class RuConfig:
    numerology: NumerologyConfig
    profile: RuDelayProfile
    comp_meth: CompMeth
    comp_width: int
    eaxcs: tuple[EaxcId, ...]  # position doubles as the antenna port index
    lowphy_lead_slots: int = 3
    ta3_tx_offset_us: int | None = None  # inside [ta3_min, ta3_max]; None = midpoint
    prach_length_ra: int = 139
    prach_port: int = 0
    rg_pool_size: int | None = None
    eaxc_widths: tuple[int, int, int, int] = (4, 4, 4, 4)


@dataclass
class StreamCounters:
    on_time: int = 0
    early_dropped: int = 0
    late_dropped: int = 0
    no_context_dropped: int = 0
    decode_error: int = 0

    def total(self) -> int:
        return (
            self.on_time
            + self.early_dropped
            + self.late_dropped
            + self.no_context_dropped
            + self.decode_error
        )


@dataclass
class RuCounters:
    cplane_dl: StreamCounters = field(default_factory=StreamCounters)
    cplane_ul: StreamCounters = field(default_factory=StreamCounters)
    uplane_dl: StreamCounters = field(default_factory=StreamCounters)
    unknown: StreamCounters = field(default_factory=StreamCounters)
    dl_slots_modulated: int = 0
    ul_slots_emitted: int = 0
    prach_occasions_emitted: int = 0


@dataclass
class SlotActivity:
    system_slot: int
    dl: bool = False
    ul: bool = False
    prach: bool = False


@dataclass
class _DlContext:
    slot: SlotPoint
    rg: low_phy.ResourceGrid
    # port -> list of (first symbol, symbol count, first PRB, PRB count)
    allocations: dict[int, list[tuple[int, int, int, int]]] = field(default_factory=dict)


@dataclass
class _UlContext:
    slot: SlotPoint
    allocations: dict[int, list[tuple[int, int, int, int]]] = field(default_factory=dict)


@dataclass
class _PrachContext:
    slot: SlotPoint
    freq_offset_halfscs: int
    symbols: tuple[int, ...]
    length_ra: int
    section_id: int


class ContextRepository:
    """Fixed-capacity ring keyed by system slot modulo capacity."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._cells: list = [None] * capacity

    def get(self, system_slot: int):
        cell = self._cells[system_slot % self.capacity]
        if cell is not None and cell[0] == system_slot:
            return cell[1]
        return None

    def insert(self, system_slot: int, ctx):
        """Install a context; returns an evicted stale context, if any."""
        idx = system_slot % self.capacity
        cell = self._cells[idx]
        evicted = cell[1] if cell is not None and cell[0] != system_slot else None
        self._cells[idx] = (system_slot, ctx)
        return evicted

    def pop(self, system_slot: int):
        idx = system_slot % self.capacity
        cell = self._cells[idx]
        if cell is not None and cell[0] == system_slot:
            self._cells[idx] = None
            return cell[1]
        return None

    def reclaim_older_than(self, system_slot: int) -> list:
        out = []
        for idx, cell in enumerate(self._cells):
            if cell is not None and cell[0] < system_slot:
                out.append(cell[1])
                self._cells[idx] = None
        return out


class RgPool:
    """Pre-initialized resource grids, acquired per downlink slot."""

    def __init__(self, size: int, nof_prb: int, ports: int):
        origin = SlotPoint(0, 0, 0, 0)
        self._free = [low_phy.ResourceGrid(origin, nof_prb, ports) for _ in range(size)]
        self.size = size
        self.acquired = 0
        self.released = 0

    def acquire(self, slot: SlotPoint) -> low_phy.ResourceGrid:
        if not self._free:
            raise RuEngineFault("resource grid pool exhausted; capacity misconfigured")
        grid = self._free.pop()
        grid.reset(slot)
        self.acquired += 1
        return grid

    def release(self, grid: low_phy.ResourceGrid):
        self._free.append(grid)
        self.released += 1

    @property
    def held(self) -> int:
        return self.size - len(self._free)


@dataclass(frozen=True)
class PooledFrame:
    transmit_at: int
    system_slot: int
    data: bytes


class FramePool:
    """Uplink frames queued for transmission at their Ta3 instants."""

    def __init__(self):
        self._entries: list[tuple[int, int, PooledFrame]] = []
        self._seq = 0

    def insert(self, transmit_at: int, system_slot: int, data: bytes):
        self._entries.append((transmit_at, self._seq, PooledFrame(transmit_at, system_slot, data)))
        self._seq += 1

    def drain(self, now: int) -> list[PooledFrame]:
        due = sorted(e for e in self._entries if e[0] <= now)
        self._entries = [e for e in self._entries if e[0] > now]
        return [e[2] for e in due]

    def pending_times(self) -> list[int]:
        return sorted({e[0] for e in self._entries})

    def __len__(self) -> int:
        return len(self._entries)


class RuEngine:
    def __init__(self, cfg: RuConfig):
        self.cfg = cfg
        num = cfg.numerology
        self.codec = OfhCodec(num.nof_prb, cfg.eaxc_widths)
        self.counters = RuCounters()
        self.slot_log: list[SlotActivity] = []
        self.frame_pool = FramePool()
        deepest_us = max(cfg.profile.t2a_max_cp_dl, cfg.profile.t2a_max_cp_ul)
        depth = cfg.lowphy_lead_slots + -(-deepest_us // num.slot_us) + 2
        self._dl_repo = ContextRepository(depth)
        self._ul_repo = ContextRepository(depth)
        self._prach_repo = ContextRepository(depth)
        self._rg_pool = RgPool(cfg.rg_pool_size or depth, num.nof_prb, len(cfg.eaxcs))
        self._port_of = {eaxc: port for port, eaxc in enumerate(cfg.eaxcs)}
        self._current = SlotPoint(num.mu, 0, 0, 0)
        self._last_boundary = -1
        self._ul_seq: dict[EaxcId, int] = {}
        self._silence = np.zeros(num.samples_per_slot, dtype=np.complex128)
        lo, hi = cfg.profile.ta3_min, cfg.profile.ta3_max
        offset = cfg.ta3_tx_offset_us
        if offset is None:
            offset = (hi - lo) // 2
        if not 0 <= offset <= hi - lo:
            raise ValueError("ta3_tx_offset_us falls outside the ta3 window")
        self._ta3_point = lo + offset

    # -- helpers -----------------------------------------------------------

    @property
    def rg_pool_stats(self) -> tuple[int, int, int]:
        return self._rg_pool.acquired, self._rg_pool.released, self._rg_pool.held

    def ota_us(self, system_slot: int) -> int:
        return system_slot * self.cfg.numerology.slot_us

    def _resolve_slot(self, app) -> SlotPoint:
        """Expand the 8-bit frame id to the SFN nearest the current slot."""
        return nearest_slot_point(
            self.cfg.numerology.mu, app.frame_id, app.subframe_id, app.slot_id, self._current
        )

    def _stream_for(self, data: bytes) -> StreamCounters:
        """Best-effort stream attribution for frames that failed to decode."""
        if len(data) >= 9:
            msg_type = data[1]
            direction = data[8] >> 7
            if msg_type == MSG_TYPE_CPLANE:
                return (
                    self.counters.cplane_dl if direction == Direction.DL else self.counters.cplane_ul
                )
            if msg_type == MSG_TYPE_UPLANE and direction == Direction.DL:
                return self.counters.uplane_dl
        return self.counters.unknown

    # -- reception ---------------------------------------------------------

    def on_frame(self, data: bytes, arrival_us: int):
        try:
            msg_type = peek_msg_type(data)
            if msg_type == MSG_TYPE_CPLANE:
                frame = self.codec.decode_cplane(data)
            elif msg_type == MSG_TYPE_UPLANE:
                frame = self.codec.decode_uplane(data)
            else:
                raise DecodeError(f"unexpected eCPRI message type 0x{msg_type:02x}")
            app = frame.msg.app
            if app.slot_id >= self.cfg.numerology.slots_per_subframe:
                raise DecodeError(f"slot_id {app.slot_id} invalid at mu={self.cfg.numerology.mu}")
            if msg_type == MSG_TYPE_UPLANE and app.data_direction != Direction.DL:
                raise DecodeError("uplink-direction U-plane received on the RU side")
        except OfhCodecError:
            self._stream_for(data).decode_error += 1
            return

        if msg_type == MSG_TYPE_CPLANE:
            if app.data_direction == Direction.DL:
                stream, kind = self.counters.cplane_dl, WindowKind.CPLANE_DL
            else:
                stream, kind = self.counters.cplane_ul, WindowKind.CPLANE_UL
        else:
            stream, kind = self.counters.uplane_dl, WindowKind.UPLANE_DL

        slot = self._resolve_slot(app)
        verdict = check_window(kind, arrival_us, self.ota_us(slot.system_slot()), self.cfg.profile)
        if verdict == Timeliness.EARLY:
            stream.early_dropped += 1
            return
        if verdict == Timeliness.LATE:
            stream.late_dropped += 1
            return

        if msg_type == MSG_TYPE_CPLANE:
            self._install_context(frame, slot)
            stream.on_time += 1
        else:
            if self._write_uplane(frame, slot):
                stream.on_time += 1
            else:
                stream.no_context_dropped += 1

    def _install_context(self, frame, slot: SlotPoint):
        s = slot.system_slot()
        msg = frame.msg
        if msg.section_type == SECTION_TYPE_PRACH:
            sec = msg.sections[0]
            ctx = _PrachContext(
                slot=slot,
                freq_offset_halfscs=sec.type3.freq_offset,
                symbols=tuple(range(msg.app.start_symbol_id, msg.app.start_symbol_id + sec.num_symbol)),
                length_ra=self.cfg.prach_length_ra,
                section_id=sec.section_id,
            )
            self._prach_repo.insert(s, ctx)
            return
        if msg.app.data_direction == Direction.DL:
            ctx = self._dl_repo.get(s)
            if ctx is None:
                ctx = _DlContext(slot=slot, rg=self._rg_pool.acquire(slot))
                evicted = self._dl_repo.insert(s, ctx)
                if evicted is not None:
                    self._rg_pool.release(evicted.rg)
        else:
            ctx = self._ul_repo.get(s)
            if ctx is None:
                ctx = _UlContext(slot=slot)
                self._ul_repo.insert(s, ctx)
        port = self._port_of.get(frame.eaxc)
        if port is None:
            # Context exists for the slot, but a stream we do not serve
            # contributes no allocations.
            return
        ranges = ctx.allocations.setdefault(port, [])
        for sec in msg.sections:
            count = self.codec.effective_prbs(sec.start_prb, sec.num_prb)
            ranges.append((msg.app.start_symbol_id, sec.num_symbol, sec.start_prb, count))

    def _write_uplane(self, frame, slot: SlotPoint) -> bool:
        """Write an on-time DL U-plane into its slot's grid; False = no context."""
        ctx = self._dl_repo.get(slot.system_slot())
        if ctx is None:
            return False
        port = self._port_of.get(frame.eaxc)
        if port is None:
            return False
        symbol = frame.msg.app.start_symbol_id
        ranges = ctx.allocations.get(port, ())
        resolved = []
        for sec in frame.msg.sections:
            count = self.codec.effective_prbs(sec.start_prb, sec.num_prb)
            covered = any(
                sym0 <= symbol < sym0 + nsym and prb0 <= sec.start_prb and sec.start_prb + count <= prb0 + nprb
                for sym0, nsym, prb0, nprb in ranges
            )
            if not covered:
                return False
            resolved.append((sec, count))
        for sec, count in resolved:
            exp, mant = unpack_prb_blocks(sec.payload, count, sec.comp_meth, sec.iq_width)
            scalars = decompress_blocks(exp, mant, sec.comp_meth)
            values = scalars_to_complex(fixed_to_float(scalars))
            ctx.rg.write_prbs(symbol, sec.start_prb, port, values)
        return True

    # -- slot processing ----------------------------------------------------

    def on_slot_boundary(
        self, slot: SlotPoint, now_us: int, ul_samples: dict[int, np.ndarray] | None = None
    ) -> list[low_phy.SampleBlock]:
        """Process one slot; returns the OTA downlink blocks for this slot.

        Must be called once per slot in increasing slot order.  ``ul_samples``
        maps antenna port to the slot's received samples when the air carried
        uplink for this slot.
        """
        s = slot.system_slot()
        if s <= self._last_boundary:
            raise RuEngineFault(f"slot boundary for {s} after {self._last_boundary}")
        self._last_boundary = s
        self._current = slot
        for stale in self._dl_repo.reclaim_older_than(s):
            self._rg_pool.release(stale.rg)
        self._ul_repo.reclaim_older_than(s)
        self._prach_repo.reclaim_older_than(s)

        activity = SlotActivity(s)
        num = self.cfg.numerology
        ctx = self._dl_repo.pop(s)
        if ctx is not None:
            blocks = low_phy.modulate(ctx.rg, num)
            self._rg_pool.release(ctx.rg)
            self.counters.dl_slots_modulated += 1
            activity.dl = True
        else:
            start = s * num.samples_per_slot
            blocks = [
                low_phy.SampleBlock(start, p, self._silence) for p in range(len(self.cfg.eaxcs))
            ]

        ul_ctx = self._ul_repo.pop(s)
        prach_ctx = self._prach_repo.pop(s)
        if ul_samples is not None:
            if ul_ctx is not None and self._emit_uplink(slot, ul_ctx, ul_samples):
                self.counters.ul_slots_emitted += 1
                activity.ul = True
            if prach_ctx is not None and self._emit_prach(slot, prach_ctx, ul_samples):
                self.counters.prach_occasions_emitted += 1
                activity.prach = True
        self.slot_log.append(activity)
        return blocks

    def _next_seq(self, eaxc: EaxcId) -> int:
        seq = self._ul_seq.get(eaxc, 0)
        self._ul_seq[eaxc] = (seq + 1) & 0xFF
        return seq

    def _app_header(self, slot: SlotPoint, symbol: int, filter_index: int) -> OfhAppHeader:
        return OfhAppHeader(
            data_direction=Direction.UL,
            filter_index=filter_index,
            frame_id=slot.sfn & 0xFF,
            subframe_id=slot.subframe,
            slot_id=slot.slot,
            start_symbol_id=symbol,
        )

    def _encode_symbol(
        self, slot: SlotPoint, eaxc: EaxcId, symbol: int, sections: list[UPlaneSection], filter_index: int
    ):
        msg = UPlaneMessage(self._app_header(slot, symbol, filter_index), tuple(sections))
        data = self.codec.encode_uplane(msg, eaxc, self._next_seq(eaxc))
        s = slot.system_slot()
        self.frame_pool.insert(self.ota_us(s) + self._ta3_point, s, data)

    def _compress_payloads(self, re_values: np.ndarray) -> list[bytes]:
        """(n_prb, 12) complex floats to per-PRB wire payload chunks."""
        meth, width = self.cfg.comp_meth, self.cfg.comp_width
        scalars = float_to_fixed(complex_to_scalars(re_values))
        exp, mant = compress_blocks(scalars, meth, width)
        raw = pack_prb_blocks(exp, mant, meth, width)
        size = len(raw) // len(re_values)
        return [raw[i * size : (i + 1) * size] for i in range(len(re_values))]

    def _emit_uplink(self, slot: SlotPoint, ctx: _UlContext, ul_samples) -> int:
        num = self.cfg.numerology
        start = slot.system_slot() * num.samples_per_slot
        emitted = 0
        for port, eaxc in enumerate(self.cfg.eaxcs):
            samples = ul_samples.get(port)
            ranges = ctx.allocations.get(port)
            if samples is None or not ranges:
                continue
            grid = low_phy.demodulate(low_phy.SampleBlock(start, port, samples), num)
            by_symbol: dict[int, list[tuple[int, int]]] = {}
            for sym0, nsym, prb0, nprb in ranges:
                for sym in range(sym0, sym0 + nsym):
                    by_symbol.setdefault(sym, []).append((prb0, nprb))
            for sym in sorted(by_symbol):
                sections = []
                for prb0, nprb in by_symbol[sym]:
                    res = grid.data[sym, 12 * prb0 : 12 * (prb0 + nprb), 0].reshape(nprb, 12)
                    payload = b"".join(self._compress_payloads(res))
                    wire_nprb = 0 if prb0 == 0 and nprb == num.nof_prb else nprb
                    sections.append(
                        UPlaneSection(
                            section_id=1,
                            start_prb=prb0,
                            num_prb=wire_nprb,
                            comp_meth=self.cfg.comp_meth,
                            iq_width=self.cfg.comp_width,
                            payload=payload,
                        )
                    )
                self._encode_symbol(slot, eaxc, sym, sections, 0)
                emitted += 1
        return emitted

    def _emit_prach(self, slot: SlotPoint, ctx: _PrachContext, ul_samples) -> bool:
        num = self.cfg.numerology
        port = self.cfg.prach_port
        samples = ul_samples.get(port)
        if samples is None:
            return False
        px = low_phy.PrachExtractConfig(ctx.freq_offset_halfscs, ctx.length_ra, ctx.symbols)
        start = slot.system_slot() * num.samples_per_slot
        bins = low_phy.extract_prach(low_phy.SampleBlock(start, port, samples), num, px)
        nprb = -(-ctx.length_ra // 12)
        padded = np.zeros((len(ctx.symbols), nprb * 12), dtype=np.complex128)
        padded[:, : ctx.length_ra] = bins
        eaxc = self.cfg.eaxcs[port]
        for i, sym in enumerate(ctx.symbols):
            payload = b"".join(self._compress_payloads(padded[i].reshape(nprb, 12)))
            section = UPlaneSection(
                section_id=ctx.section_id,
                start_prb=0,
                num_prb=nprb,
                comp_meth=self.cfg.comp_meth,
                iq_width=self.cfg.comp_width,
                payload=payload,
            )
            self._encode_symbol(slot, eaxc, sym, [section], FILTER_INDEX_PRACH_B4)
        return True

    # -- output -------------------------------------------------------------

    def drain_frame_pool(self, now_us: int) -> list[PooledFrame]:
        """Frames whose transmit instant has been reached, in transmit order."""
        return self.frame_pool.drain(now_us)

    def snapshot_counters(self) -> RuCounters:
        return copy.deepcopy(self.counters)
