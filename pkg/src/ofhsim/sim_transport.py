"""Virtual-time event backbone: fronthaul links, air exchange, capture, replay.

The event loop pops (time, insertion-seq) ordered events, so two runs of the
same scenario are bit-identical in counters, captures and logs.  Virtual time
is integer microseconds; slot s crosses the air at ``s * slot_us``.

Per slot the schedule is: the DU schedules at ``ota - offset`` slots, the RU
slot boundary runs ``lowphy_lead`` slots ahead of OTA (the downlink leg), and
the OTA exchange happens at ``ota`` itself.  The virtual UE's uplink waveform
for a slot is predeclared, so the RU boundary consumes it directly; the air
events mark the exchange instants.
"""

from __future__ import annotations

import heapq
import itertools
import random
import socket
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import low_phy
from .delay_profile import Timeliness, WindowKind, check_window, validate_pair, warnings_of
from .du_engine import DuCounters, DuEngine
from .iq_compress import (
    CompMeth,
    complex_to_scalars,
    compress_blocks,
    fixed_to_float,
    float_to_fixed,
    scalars_to_complex,
)
from .ofh_codec import FILTER_INDEX_PRACH_B4, MSG_TYPE_CPLANE, Direction
from .ru_engine import RuCounters, RuEngine, SlotActivity
from .scenario import Scenario
from .timing import SlotPoint

DIR_TO_RU = 0
DIR_TO_DU = 1

CAPTURE_MAGIC = b"OFHC"
CAPTURE_VERSION = 1


class CaptureError(ValueError):
    pass


@dataclass(frozen=True)
class CaptureRecord:
    direction: int
    at_us: int
    data: bytes


def write_capture(records) -> bytes:
    out = bytearray(CAPTURE_MAGIC)
    out.append(CAPTURE_VERSION)
    for rec in records:
        out.append(rec.direction)
        out += rec.at_us.to_bytes(8, "little")
        out += len(rec.data).to_bytes(4, "little")
        out += rec.data
    return bytes(out)


def read_capture(blob: bytes) -> list[CaptureRecord]:
    if len(blob) < 5 or blob[:4] != CAPTURE_MAGIC:
        raise CaptureError("bad capture magic")
    if blob[4] != CAPTURE_VERSION:
        raise CaptureError(f"unsupported capture version {blob[4]}")
    records = []
    pos = 5
    while pos < len(blob):
        if pos + 13 > len(blob):
            raise CaptureError("truncated record header")
        direction = blob[pos]
        if direction not in (DIR_TO_RU, DIR_TO_DU):
            raise CaptureError(f"bad record direction {direction}")
        at_us = int.from_bytes(blob[pos + 1 : pos + 9], "little")
        length = int.from_bytes(blob[pos + 9 : pos + 13], "little")
        pos += 13
        if pos + length > len(blob):
            raise CaptureError("truncated record payload")
        records.append(CaptureRecord(direction, at_us, blob[pos : pos + length]))
        pos += length
    return records


class LinkModel:
    """One-way fronthaul delay: base plus jitter, reproducible per seed."""

    def __init__(
        self,
        base_delay_us: int,
        jitter: str = "none",
        jitter_hi_us: int = 0,
        sequence: tuple[int, ...] = (),
        drop_rate: float = 0.0,
        seed: int = 0,
    ):
        self.base_delay_us = base_delay_us
        self.jitter = jitter
        self.jitter_hi_us = jitter_hi_us
        self.sequence = sequence
        self.drop_rate = drop_rate
        self._rng = random.Random(seed)
        self._i = 0

    @classmethod
    def from_bounds(cls, lo, hi, kind, sequence, drop_rate, seed) -> "LinkModel":
        if kind == "sequence":
            return cls(0, "sequence", 0, sequence, drop_rate, seed)
        if kind == "uniform" and hi > lo:
            return cls(lo, "uniform", hi - lo, (), drop_rate, seed)
        return cls(lo, "none", 0, (), drop_rate, seed)

    def sample(self) -> int | None:
        """Delay of the next frame in microseconds, or None when dropped."""
        if self.drop_rate > 0.0 and self._rng.random() < self.drop_rate:
            return None
        if self.jitter == "uniform":
            return self.base_delay_us + self._rng.randint(0, self.jitter_hi_us)
        if self.jitter == "sequence":
            value = self.sequence[self._i % len(self.sequence)]
            self._i += 1
            return value
        return self.base_delay_us


class VirtualUe:
    """Sample-level reflector standing in for real terminals.

    Uplink content is a predeclared per-slot QPSK grid; PRACH occasions add a
    single tone at the configured frequency.  The loopback channel is ideal.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.num = scenario.numerology

    def ul_grid(self, slot: SlotPoint) -> np.ndarray:
        rng = np.random.default_rng([self.scenario.ue_payload_seed, slot.system_slot()])
        shape = (14, self.num.subcarriers, self.scenario.ports)
        points = rng.integers(0, 4, size=shape)
        return ((1 - 2 * (points & 1)) + 1j * (1 - 2 * (points >> 1))) / np.sqrt(2)

    def ul_block(self, slot: SlotPoint, want_ul: bool, want_prach: bool):
        num = self.num
        start = slot.system_slot() * num.samples_per_slot
        samples = {}
        if want_ul:
            grid = low_phy.ResourceGrid(slot, num.nof_prb, self.scenario.ports)
            grid.data[:] = self.ul_grid(slot)
            grid.written[:] = True
            for block in low_phy.modulate(grid, num):
                samples[block.port] = np.array(block.samples)
        if want_prach:
            prach = self.scenario.prach
            symbols = tuple(range(2, 14))  # format B4 occasion span
            tone = low_phy.synthesize_tone(
                num, slot, self.scenario.ue_tone_sc(), prach.ue_tone_amplitude, symbols
            )
            port = 0
            if port in samples:
                samples[port] = samples[port] + tone
            else:
                samples[port] = tone
        for port in range(self.scenario.ports):
            if port not in samples:
                samples[port] = np.zeros(num.samples_per_slot, dtype=np.complex128)
        return samples


@dataclass
class IntegrityReport:
    dl_slots_checked: int = 0
    dl_slots_ok: int = 0
    dl_max_err: float = 0.0
    dl_data_peak_max: float = 0.0  # peak |sample| over slots that carried data
    dl_idle_peak_max: float = 0.0  # peak |sample| over slots that did not
    ul_slots_checked: int = 0
    ul_slots_ok: int = 0
    ul_max_err: float = 0.0
    ul_missing_fragments: int = 0
    ta3_violations: int = 0
    du_emission_violations: int = 0

    def ok(self) -> bool:
        return (
            self.dl_slots_checked == self.dl_slots_ok
            and self.ul_slots_checked == self.ul_slots_ok
            and self.ul_missing_fragments == 0
            and self.ta3_violations == 0
            and self.du_emission_violations == 0
        )


@dataclass(frozen=True)
class PrachRecord:
    system_slot: int
    symbol: int
    bins: np.ndarray  # complex, padded PRB width


@dataclass
class RunResult:
    ru_counters: RuCounters
    du_counters: DuCounters
    integrity: IntegrityReport
    ru_slot_log: list[SlotActivity]
    findings: list
    assertion_log: list[str]
    prach_records: list[PrachRecord]
    dl_slot_peaks: list[tuple[int, float]]
    capture: bytes | None = None
    frames_sent_to_ru: int = 0
    frames_dropped_to_ru: int = 0
    frames_sent_to_du: int = 0
    frames_dropped_to_du: int = 0


class _EventKind(IntEnum):
    DU_BOUNDARY = 0
    RU_BOUNDARY = 1
    AIR_DL = 2
    AIR_UL = 3
    FRAME_TO_RU = 4
    FRAME_TO_DU = 5
    POOL_DUE = 6


def _grid_error_bound(src: np.ndarray, meth: CompMeth, width: int, slack_counts: float):
    """Per-PRB absolute error bound for float content carried through BFP.

    ``src`` is (14, K) complex.  The bound covers the float-to-fixed rounding
    plus the mantissa quantization of the exponent the source block selects
    (doubled, since a one-count perturbation may flip the exponent by one).
    """
    scalars = float_to_fixed(complex_to_scalars(src.reshape(-1, 12)))
    if meth == CompMeth.NONE:
        half = np.zeros(scalars.shape[0])
    else:
        exp, _ = compress_blocks(scalars, meth, width)
        half = np.where(exp > 0, 1 << np.maximum(exp - 1, 0), 0).astype(np.float64)
    return (2.0 * half + slack_counts) / 32768.0 + 1e-6


def _grid_compare(src: np.ndarray, rx: np.ndarray, meth: CompMeth, width: int):
    bound = _grid_error_bound(src, meth, width, slack_counts=2.0)
    diff = (rx - src).reshape(-1, 12)
    err = np.maximum(np.abs(diff.real).max(axis=1), np.abs(diff.imag).max(axis=1))
    return float(err.max()), bool((err <= bound).all())


def run(scenario: Scenario, want_capture: bool = True) -> RunResult:
    scenario.validate()
    num = scenario.numerology
    ru = RuEngine(scenario.ru_config())
    du = DuEngine(scenario.du_config())
    ue = VirtualUe(scenario)
    fh = scenario.fronthaul
    dl_link = LinkModel.from_bounds(
        fh.t12_min, fh.t12_max, scenario.jitter, scenario.jitter_sequence,
        scenario.drop_rate, scenario.seed * 2 + 1,
    )
    ul_link = LinkModel.from_bounds(
        fh.t34_min, fh.t34_max, scenario.jitter, scenario.jitter_sequence,
        scenario.drop_rate, scenario.seed * 2 + 2,
    )

    heap: list = []
    seq = itertools.count()

    def push(at: int, kind: _EventKind, payload):
        heapq.heappush(heap, (at, next(seq), kind, payload))

    slot_us = num.slot_us
    offset_us = scenario.scheduling_offset_slots * slot_us
    lead_us = scenario.lowphy_lead_slots * slot_us
    first = scenario.first_system_slot
    for s in range(first, first + scenario.total_slots):
        ota = s * slot_us
        push(ota - offset_us, _EventKind.DU_BOUNDARY, s)
        push(ota - lead_us, _EventKind.RU_BOUNDARY, s)
        push(ota, _EventKind.AIR_DL, s)
        if scenario.carries_uplink(s):
            push(ota, _EventKind.AIR_UL, s)

    capture_records: list[CaptureRecord] = []
    integrity = IntegrityReport()
    log: list[str] = []
    prach_records: list[PrachRecord] = []
    dl_slot_peaks: list[tuple[int, float]] = []
    pending_blocks: dict[int, list] = {}
    rx_ul: dict[int, tuple[np.ndarray, np.ndarray]] = {}  # s -> (grid, coverage)
    expected_ul: list[int] = []
    pool_scheduled: set[int] = set()
    sent_ru = dropped_ru = sent_du = dropped_du = 0
    K = num.subcarriers

    def audit_emission(emit_at: int, data: bytes, s: int):
        nonlocal integrity
        direction = data[8] >> 7 if len(data) > 8 else Direction.DL
        if data[1] == MSG_TYPE_CPLANE:
            kind = WindowKind.CPLANE_DL if direction == Direction.DL else WindowKind.CPLANE_UL
        else:
            kind = WindowKind.UPLANE_DL
        verdict = check_window(kind, emit_at, s * slot_us, scenario.du_profile)
        if verdict != Timeliness.ON_TIME:
            integrity.du_emission_violations += 1
            if integrity.du_emission_violations <= 20:
                log.append(f"du emission for slot {s} at {emit_at} us is {verdict.value}")

    def finalize_ul(s: int):
        grid, coverage = rx_ul.pop(s, (None, None))
        src = ue.ul_grid(SlotPoint.from_system_slot(num.mu, s))
        integrity.ul_slots_checked += 1
        if grid is None:
            integrity.ul_missing_fragments += 14 * scenario.ports
            log.append(f"ul slot {s}: no fragments delivered")
            return
        missing = int((~coverage).sum())
        if missing:
            integrity.ul_missing_fragments += missing
            if len(log) < 200:
                log.append(f"ul slot {s}: {missing} undelivered (symbol, PRB, port) fragments")
            return
        ok_all = True
        for port in range(scenario.ports):
            err, ok = _grid_compare(
                src[:, :, port], grid[:, :, port], scenario.comp_meth, scenario.comp_width
            )
            integrity.ul_max_err = max(integrity.ul_max_err, err)
            ok_all = ok_all and ok
        if ok_all:
            integrity.ul_slots_ok += 1
        elif len(log) < 200:
            log.append(f"ul slot {s}: reconstruction error outside the compression bound")

    port_of = {eaxc: p for p, eaxc in enumerate(scenario.eaxcs)}
    clock = 0
    while heap:
        at, _, kind, payload = heapq.heappop(heap)
        if at < clock:
            raise RuntimeError(f"causality violation: event at {at} us behind clock {clock} us")
        clock = at
        while expected_ul and expected_ul[0] * slot_us + scenario.du_profile.ta4_max < clock:
            finalize_ul(expected_ul.pop(0))

        if kind == _EventKind.DU_BOUNDARY:
            s = payload
            slot = SlotPoint.from_system_slot(num.mu, s)
            emissions = du.schedule_slot(slot, at, du.payloads_for(slot))
            for emit_at, data in emissions:
                audit_emission(emit_at, data, s)
                delay = dl_link.sample()
                sent_ru += 1
                if delay is None:
                    dropped_ru += 1
                    continue
                push(emit_at + delay, _EventKind.FRAME_TO_RU, data)

        elif kind == _EventKind.RU_BOUNDARY:
            s = payload
            slot = SlotPoint.from_system_slot(num.mu, s)
            want_prach = scenario.is_prach_occasion(s)
            want_ul = scenario.carries_uplink(s) and not want_prach
            ul_samples = None
            if want_ul or want_prach:
                ul_samples = ue.ul_block(slot, want_ul, want_prach)
            if want_ul:
                expected_ul.append(s)
            blocks = ru.on_slot_boundary(slot, at, ul_samples)
            pending_blocks[s] = blocks
            for t in ru.frame_pool.pending_times():
                if t not in pool_scheduled:
                    pool_scheduled.add(t)
                    push(t, _EventKind.POOL_DUE, None)

        elif kind == _EventKind.POOL_DUE:
            for frame in ru.drain_frame_pool(at):
                verdict = check_window(
                    WindowKind.UPLANE_UL_TX,
                    frame.transmit_at,
                    frame.system_slot * slot_us,
                    scenario.ru_profile,
                )
                if verdict != Timeliness.ON_TIME:
                    integrity.ta3_violations += 1
                delay = ul_link.sample()
                sent_du += 1
                if delay is None:
                    dropped_du += 1
                    continue
                push(at + delay, _EventKind.FRAME_TO_DU, frame.data)

        elif kind == _EventKind.FRAME_TO_RU:
            if want_capture:
                capture_records.append(CaptureRecord(DIR_TO_RU, at, payload))
            ru.on_frame(payload, at)

        elif kind == _EventKind.FRAME_TO_DU:
            if want_capture:
                capture_records.append(CaptureRecord(DIR_TO_DU, at, payload))
            du.on_uplink_frame(payload, at)
            for d in du.take_delivered():
                if d.filter_index == FILTER_INDEX_PRACH_B4:
                    values = scalars_to_complex(fixed_to_float(d.scalars)).reshape(-1)
                    prach_records.append(PrachRecord(d.system_slot, d.symbol, values))
                    continue
                port = port_of.get(d.eaxc)
                if port is None:
                    continue
                if d.system_slot not in rx_ul:
                    rx_ul[d.system_slot] = (
                        np.zeros((14, K, scenario.ports), dtype=np.complex128),
                        np.zeros((14, num.nof_prb, scenario.ports), dtype=bool),
                    )
                grid, coverage = rx_ul[d.system_slot]
                values = scalars_to_complex(fixed_to_float(d.scalars)).reshape(-1)
                k0 = 12 * d.start_prb
                grid[d.symbol, k0 : k0 + len(values), port] = values
                coverage[d.symbol, d.start_prb : d.start_prb + len(values) // 12, port] = True

        elif kind == _EventKind.AIR_DL:
            s = payload
            blocks = pending_blocks.pop(s)
            peak = max(float(np.abs(b.samples).max()) for b in blocks) if blocks else 0.0
            dl_slot_peaks.append((s, peak))
            if scenario.slot_kind(s) in ("D", "S", "F"):
                integrity.dl_slots_checked += 1
                integrity.dl_data_peak_max = max(integrity.dl_data_peak_max, peak)
                slot = SlotPoint.from_system_slot(num.mu, s)
                src = du.make_dl_grid(slot).data
                ok_all = True
                for block in blocks:
                    rx = low_phy.demodulate(block, num).data[:, :, 0]
                    err, ok = _grid_compare(
                        src[:, :, block.port], rx, scenario.comp_meth, scenario.comp_width
                    )
                    integrity.dl_max_err = max(integrity.dl_max_err, err)
                    ok_all = ok_all and ok
                if ok_all:
                    integrity.dl_slots_ok += 1
                elif len(log) < 200:
                    log.append(f"dl slot {s}: OTA content outside the compression bound")
            else:
                integrity.dl_idle_peak_max = max(integrity.dl_idle_peak_max, peak)

        elif kind == _EventKind.AIR_UL:
            pass  # exchange instant marker; waveform handed over at the boundary

    while expected_ul:
        finalize_ul(expected_ul.pop(0))

    findings = validate_pair(scenario.ru_profile, scenario.du_profile, scenario.fronthaul)
    for w in warnings_of(findings):
        log.append(f"profile warning: {w.bound} off by {w.delta_us} us ({w.detail})")
    log.append(
        f"integrity: dl {integrity.dl_slots_ok}/{integrity.dl_slots_checked} ok, "
        f"ul {integrity.ul_slots_ok}/{integrity.ul_slots_checked} ok, "
        f"ta3 violations {integrity.ta3_violations}, "
        f"du emission violations {integrity.du_emission_violations}"
    )
    return RunResult(
        ru_counters=ru.snapshot_counters(),
        du_counters=du.snapshot_counters(),
        integrity=integrity,
        ru_slot_log=list(ru.slot_log),
        findings=findings,
        assertion_log=log,
        prach_records=prach_records,
        dl_slot_peaks=dl_slot_peaks,
        capture=write_capture(capture_records) if want_capture else None,
        frames_sent_to_ru=sent_ru,
        frames_dropped_to_ru=dropped_ru,
        frames_sent_to_du=sent_du,
        frames_dropped_to_du=dropped_du,
    )


def replay(capture: bytes, scenario: Scenario) -> RuCounters:
    """Re-feed captured RU-bound frames into a fresh engine at recorded times.

    Slot boundaries are re-derived from the recorded timeline exactly as the
    live run scheduled them, so reception counters reproduce the original
    run's RU counters.
    """
    records = read_capture(capture)
    ru = RuEngine(scenario.ru_config())
    num = scenario.numerology
    lead_us = scenario.lowphy_lead_slots * num.slot_us
    next_boundary = 0

    def advance(up_to_us: int):
        nonlocal next_boundary
        while next_boundary * num.slot_us - lead_us <= up_to_us:
            slot = SlotPoint.from_system_slot(num.mu, next_boundary)
            ru.on_slot_boundary(slot, next_boundary * num.slot_us - lead_us, None)
            next_boundary += 1

    for rec in records:
        if rec.direction != DIR_TO_RU:
            continue
        advance(rec.at_us)
        ru.on_frame(rec.data, rec.at_us)
    return ru.snapshot_counters()


class LiveUdpNode:
    """RU engine wired to real UDP sockets, one frame per datagram.

    Timestamps come from the host monotonic clock, so classifications are
    inherently non-deterministic; this mode exists for interop pokes and is
    excluded from the deterministic assertions.
    """

    def __init__(self, scenario: Scenario, bind: tuple[str, int], peer: tuple[str, int]):
        self.scenario = scenario
        self.engine = RuEngine(scenario.ru_config())
        self.records: list[CaptureRecord] = []
        self.peer = peer
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.setblocking(False)
        self._t0_ns = time.monotonic_ns()
        self._next_boundary = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0_ns) // 1000

    def _advance_boundaries(self, now_us: int):
        num = self.scenario.numerology
        lead_us = self.scenario.lowphy_lead_slots * num.slot_us
        while self._next_boundary * num.slot_us - lead_us <= now_us:
            slot = SlotPoint.from_system_slot(num.mu, self._next_boundary)
            self.engine.on_slot_boundary(slot, self._next_boundary * num.slot_us - lead_us, None)
            self._next_boundary += 1

    def poll(self, duration_s: float = 0.05) -> int:
        """Pump frames for a while; returns the number of frames received."""
        deadline = time.monotonic() + duration_s
        received = 0
        while time.monotonic() < deadline:
            now = self.now_us()
            self._advance_boundaries(now)
            try:
                data = self.sock.recv(65536)
            except BlockingIOError:
                time.sleep(0.001)
            else:
                received += 1
                self.records.append(CaptureRecord(DIR_TO_RU, now, data))
                self.engine.on_frame(data, now)
            for frame in self.engine.drain_frame_pool(self.now_us()):
                self.records.append(CaptureRecord(DIR_TO_DU, self.now_us(), frame.data))
                self.sock.sendto(frame.data, self.peer)
        return received

    def capture_bytes(self) -> bytes:
        return write_capture(self.records)

    def close(self):
        self.sock.close()
