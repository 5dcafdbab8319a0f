"""RU state machine: windows, contexts, grid pool and uplink emission."""

import dataclasses

import numpy as np
import pytest

from ofhsim import low_phy
from ofhsim.delay_profile import preset
from ofhsim.iq_compress import CompMeth, compress_blocks, float_to_fixed, complex_to_scalars, pack_prb_blocks
from ofhsim.ofh_codec import (
    FILTER_INDEX_PRACH_B4,
    CPlaneMessage,
    CSection,
    Direction,
    EaxcId,
    OfhAppHeader,
    OfhCodec,
    Type3Extras,
    UPlaneMessage,
    UPlaneSection,
)
from ofhsim.ru_engine import FramePool, RuConfig, RuEngine, RuEngineFault
from ofhsim.timing import NumerologyConfig, SlotPoint

NUM = NumerologyConfig.from_rate(30, 23_040_000, 51)
PROFILE = preset("tdd_scs30", "ru")
EAXCS = (EaxcId(0, 0, 0, 0), EaxcId(0, 0, 0, 1))
CODEC = OfhCodec(NUM.nof_prb)


def make_engine(**overrides) -> RuEngine:
    cfg = RuConfig(
        numerology=NUM,
        profile=PROFILE,
        comp_meth=CompMeth.BFP,
        comp_width=9,
        eaxcs=EAXCS,
        **overrides,
    )
    return RuEngine(cfg)


def app_for(slot: SlotPoint, direction, symbol=0, filter_index=0):
    return OfhAppHeader(direction, filter_index, slot.sfn & 0xFF, slot.subframe, slot.slot, symbol)


def dl_cplane(slot, eaxc=EAXCS[0], seq=0):
    msg = CPlaneMessage(
        app=app_for(slot, Direction.DL),
        section_type=1,
        comp_meth=CompMeth.BFP,
        iq_width=9,
        sections=(CSection(section_id=1, start_prb=0, num_prb=0, num_symbol=14),),
    )
    return CODEC.encode_cplane(msg, eaxc, seq)


def ul_cplane(slot, eaxc=EAXCS[0], seq=0):
    msg = CPlaneMessage(
        app=app_for(slot, Direction.UL),
        section_type=1,
        comp_meth=CompMeth.BFP,
        iq_width=9,
        sections=(CSection(section_id=1, start_prb=0, num_prb=0, num_symbol=14),),
    )
    return CODEC.encode_cplane(msg, eaxc, seq)


def prach_cplane(slot, freq_offset, eaxc=EAXCS[0], seq=0):
    msg = CPlaneMessage(
        app=app_for(slot, Direction.UL, symbol=2, filter_index=FILTER_INDEX_PRACH_B4),
        section_type=3,
        comp_meth=CompMeth.BFP,
        iq_width=9,
        sections=(
            CSection(
                section_id=2, start_prb=0, num_prb=12, num_symbol=12,
                type3=Type3Extras(freq_offset=freq_offset),
            ),
        ),
    )
    return CODEC.encode_cplane(msg, eaxc, seq)


def dl_uplane(slot, symbol, grid_values, eaxc=EAXCS[0], seq=0, start_prb=0, num_prb=0):
    count = NUM.nof_prb if num_prb == 0 else num_prb
    scalars = float_to_fixed(complex_to_scalars(grid_values.reshape(count, 12)))
    exp, mant = compress_blocks(scalars, CompMeth.BFP, 9)
    payload = pack_prb_blocks(exp, mant, CompMeth.BFP, 9)
    msg = UPlaneMessage(
        app=app_for(slot, Direction.DL, symbol=symbol),
        sections=(UPlaneSection(1, start_prb, num_prb, CompMeth.BFP, 9, payload),),
    )
    return CODEC.encode_uplane(msg, eaxc, seq)


SLOT = SlotPoint.from_system_slot(1, 40)
OTA = 40 * NUM.slot_us


class TestWindowEnforcement:
    def test_on_time_cplane_installs_context(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - 2400)
        assert ru.counters.cplane_dl.on_time == 1
        acquired, released, held = ru.rg_pool_stats
        assert (acquired, held) == (1, 1)

    def test_late_uplane_leaves_grid_untouched(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - 2400)
        values = np.full(NUM.subcarriers, 0.5 + 0.5j)
        ru.on_frame(dl_uplane(SLOT, 0, values), OTA - 2000)
        assert ru.counters.uplane_dl.late_dropped == 1
        blocks = ru.on_slot_boundary(SLOT, OTA - 1500, None)
        assert np.abs(blocks[0].samples).max() == 0.0  # nothing was written

    def test_early_cplane(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - 2636)
        assert ru.counters.cplane_dl.early_dropped == 1

    def test_uplane_without_context_dropped(self):
        ru = make_engine()
        values = np.full(NUM.subcarriers, 0.1 + 0.1j)
        ru.on_frame(dl_uplane(SLOT, 0, values), OTA - 2100)
        assert ru.counters.uplane_dl.no_context_dropped == 1

    def test_uplane_outside_announced_symbols_dropped(self):
        ru = make_engine()
        msg = CPlaneMessage(
            app=app_for(SLOT, Direction.DL),
            section_type=1,
            comp_meth=CompMeth.BFP,
            iq_width=9,
            sections=(CSection(section_id=1, start_prb=0, num_prb=0, num_symbol=4),),
        )
        ru.on_frame(CODEC.encode_cplane(msg, EAXCS[0], 0), OTA - 2400)
        values = np.full(NUM.subcarriers, 0.1 + 0.1j)
        ru.on_frame(dl_uplane(SLOT, 10, values), OTA - 2100)
        assert ru.counters.uplane_dl.no_context_dropped == 1

    def test_decode_error_counted(self):
        ru = make_engine()
        data = bytearray(dl_cplane(SLOT))
        data[0] = 0x30  # wrong eCPRI version
        ru.on_frame(bytes(data), OTA - 2400)
        assert ru.counters.cplane_dl.decode_error == 1

    def test_boundary_arrivals_inclusive(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - PROFILE.t2a_max_cp_dl)
        ru.on_frame(dl_cplane(SLOT, seq=1), OTA - PROFILE.t2a_min_cp_dl)
        assert ru.counters.cplane_dl.on_time == 2


class TestSlotBoundary:
    def test_modulates_written_grid(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT, EAXCS[0]), OTA - 2400)
        rng = np.random.default_rng(0)
        values = (rng.integers(0, 2, NUM.subcarriers) * 2 - 1) * (0.5 + 0.0j)
        for sym in range(14):
            ru.on_frame(dl_uplane(SLOT, sym, values, seq=sym), OTA - 2300)
        blocks = ru.on_slot_boundary(SLOT, OTA - 1500, None)
        assert ru.counters.dl_slots_modulated == 1

        expect = low_phy.ResourceGrid(SLOT, NUM.nof_prb, 2)
        quantized = float_to_fixed(complex_to_scalars(values.reshape(-1, 12)))
        exp, mant = compress_blocks(quantized, CompMeth.BFP, 9)
        from ofhsim.iq_compress import decompress_blocks, fixed_to_float, scalars_to_complex
        rec = scalars_to_complex(fixed_to_float(decompress_blocks(exp, mant, CompMeth.BFP)))
        for sym in range(14):
            expect.data[sym, :, 0] = rec.reshape(-1)
        reference = low_phy.modulate(expect, NUM)
        np.testing.assert_array_equal(blocks[0].samples, reference[0].samples)
        np.testing.assert_array_equal(blocks[1].samples, reference[1].samples)

    def test_absent_context_emits_silence(self):
        ru = make_engine()
        blocks = ru.on_slot_boundary(SLOT, OTA - 1500, None)
        assert len(blocks) == len(EAXCS)
        assert all(np.abs(b.samples).max() == 0.0 for b in blocks)
        assert all(len(b.samples) == NUM.samples_per_slot for b in blocks)
        assert ru.counters.dl_slots_modulated == 0

    def test_grid_returns_to_pool_after_modulation(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - 2400)
        ru.on_slot_boundary(SLOT, OTA - 1500, None)
        acquired, released, held = ru.rg_pool_stats
        assert acquired == released == 1 and held == 0

    def test_double_boundary_faults(self):
        ru = make_engine()
        ru.on_slot_boundary(SLOT, OTA - 1500, None)
        with pytest.raises(RuEngineFault):
            ru.on_slot_boundary(SLOT, OTA - 1000, None)

    def test_stale_context_reclaimed(self):
        ru = make_engine()
        ru.on_frame(dl_cplane(SLOT), OTA - 2400)
        later = SlotPoint.from_system_slot(1, 41)
        ru.on_slot_boundary(later, OTA - 1000, None)
        acquired, released, held = ru.rg_pool_stats
        assert released == 1 and held == 0


class TestUplinkEmission:
    def run_ul_slot(self, ru, slot, samples):
        ru.on_frame(ul_cplane(slot, EAXCS[0]), slot.system_slot() * 500 - 2400)
        ru.on_frame(ul_cplane(slot, EAXCS[1], seq=1), slot.system_slot() * 500 - 2400)
        return ru.on_slot_boundary(slot, slot.system_slot() * 500 - 1500, samples)

    def test_emits_per_symbol_frames_inside_ta3(self):
        ru = make_engine()
        grid = low_phy.ResourceGrid(SLOT, NUM.nof_prb, 2)
        rng = np.random.default_rng(1)
        grid.data[:] = (rng.integers(0, 2, grid.data.shape) * 2 - 1) / np.sqrt(2)
        samples = {b.port: b.samples for b in low_phy.modulate(grid, NUM)}
        self.run_ul_slot(ru, SLOT, samples)
        assert ru.counters.ul_slots_emitted == 1
        frames = ru.drain_frame_pool(10**9)
        assert len(frames) == 14 * 2
        mid = PROFILE.ta3_min + (PROFILE.ta3_max - PROFILE.ta3_min) // 2
        assert all(f.transmit_at == OTA + mid for f in frames)
        decoded = CODEC.decode_uplane(frames[0].data)
        assert decoded.msg.app.data_direction == Direction.UL
        assert decoded.msg.sections[0].num_prb == 0  # whole carrier

    def test_emitted_grid_matches_injected_tone(self):
        ru = make_engine()
        grid = low_phy.ResourceGrid(SLOT, NUM.nof_prb, 2)
        k = NUM.subcarriers // 2 + 4
        grid.data[:, k, 0] = 0.25
        samples = {b.port: b.samples for b in low_phy.modulate(grid, NUM)}
        self.run_ul_slot(ru, SLOT, samples)
        from ofhsim.iq_compress import decompress_blocks, fixed_to_float, scalars_to_complex, unpack_prb_blocks

        for frame in ru.drain_frame_pool(10**9):
            decoded = CODEC.decode_uplane(frame.data)
            sec = decoded.msg.sections[0]
            exp, mant = unpack_prb_blocks(sec.payload, NUM.nof_prb, sec.comp_meth, sec.iq_width)
            rec = scalars_to_complex(fixed_to_float(decompress_blocks(exp, mant, CompMeth.BFP)))
            rec = rec.reshape(-1)
            if decoded.eaxc == EAXCS[0]:
                assert abs(rec[k] - 0.25) < 0.003
                rec[k] = 0
            assert np.abs(rec).max() < 0.003

    def test_samples_without_context_discarded_silently(self):
        ru = make_engine()
        samples = {0: np.zeros(NUM.samples_per_slot, complex), 1: np.zeros(NUM.samples_per_slot, complex)}
        ru.on_slot_boundary(SLOT, OTA - 1500, samples)
        assert ru.counters.ul_slots_emitted == 0
        assert len(ru.drain_frame_pool(10**9)) == 0


class TestPrach:
    def test_occasion_emits_filtered_frames(self):
        ru = make_engine()
        f0 = -612
        ru.on_frame(prach_cplane(SLOT, f0), OTA - 2400)
        sc = low_phy.prach_band_start(f0) + 5
        tone = low_phy.synthesize_tone(NUM, SLOT, sc, 0.5, range(2, 14))
        samples = {0: tone, 1: np.zeros(NUM.samples_per_slot, complex)}
        ru.on_slot_boundary(SLOT, OTA - 1500, samples)
        assert ru.counters.prach_occasions_emitted == 1
        frames = ru.drain_frame_pool(10**9)
        assert len(frames) == 12
        from ofhsim.iq_compress import decompress_blocks, fixed_to_float, scalars_to_complex, unpack_prb_blocks

        for frame in frames:
            decoded = CODEC.decode_uplane(frame.data)
            assert decoded.msg.app.filter_index == FILTER_INDEX_PRACH_B4
            sec = decoded.msg.sections[0]
            assert sec.num_prb == 12
            exp, mant = unpack_prb_blocks(sec.payload, 12, sec.comp_meth, sec.iq_width)
            bins = scalars_to_complex(fixed_to_float(decompress_blocks(exp, mant, CompMeth.BFP))).reshape(-1)
            assert abs(bins[5] - 0.5) < 0.003
            assert np.abs(bins[139:]).max() < 1e-9  # padding beyond length_ra


class TestFramePool:
    def test_empty_drain(self):
        pool = FramePool()
        assert pool.drain(100) == []

    def test_due_only(self):
        pool = FramePool()
        pool.insert(10, 1, b"a")
        pool.insert(11, 1, b"b")
        assert [f.data for f in pool.drain(10)] == [b"a"]
        assert [f.data for f in pool.drain(11)] == [b"b"]

    def test_out_of_order_inserts_drain_in_time_order(self):
        pool = FramePool()
        times = [50, 10, 30, 20, 40, 10]
        for i, t in enumerate(times):
            pool.insert(t, 1, bytes([i]))
        drained = pool.drain(100)
        assert [f.transmit_at for f in drained] == sorted(times)
        # ties broken by insertion order
        assert [f.data for f in drained if f.transmit_at == 10] == [b"\x01", b"\x05"]


class TestFrameIdResolution:
    def test_wraparound_resolution(self):
        ru = make_engine()
        # advance the engine near the end of the frame-id fold
        current = SlotPoint(1, 255, 9, 1)
        ru.on_slot_boundary(current, current.system_slot() * 500 - 1500, None)
        nxt = current.add_slots(1)  # sfn 256, wire frame_id 0
        assert nxt.sfn == 256
        ota = nxt.system_slot() * 500
        ru.on_frame(dl_cplane(nxt), ota - 2400)
        assert ru.counters.cplane_dl.on_time == 1

    def test_counters_snapshot_is_a_copy(self):
        ru = make_engine()
        snap = ru.snapshot_counters()
        ru.on_frame(dl_cplane(SLOT), OTA - 2400)
        assert snap.cplane_dl.on_time == 0
        assert ru.counters.cplane_dl.on_time == 1


def test_config_carries_no_duplex_pattern():
    # the engine adapts to patterns purely from control-plane arrivals
    names = [f.name.lower() for f in dataclasses.fields(RuConfig)]
    assert not any("pattern" in n or "tdd" in n or "duplex" in n for n in names)
