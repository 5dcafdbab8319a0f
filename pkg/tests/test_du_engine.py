"""DU scheduler: emission instants, pattern ownership, uplink windows."""

import numpy as np
import pytest

from ofhsim.delay_profile import preset
from ofhsim.du_engine import (
    DlPayload,
    DuConfigError,
    DuEngine,
    DuSchedulerConfig,
    PrachGrant,
    PrachSchedule,
    TddPattern,
)
from ofhsim.iq_compress import CompMeth, compress_blocks, pack_prb_blocks
from ofhsim.ofh_codec import (
    MSG_TYPE_CPLANE,
    MSG_TYPE_UPLANE,
    Direction,
    EaxcId,
    OfhAppHeader,
    OfhCodec,
    UPlaneMessage,
    UPlaneSection,
    peek_msg_type,
)
from ofhsim.timing import NumerologyConfig, SlotPoint

NUM = NumerologyConfig.from_rate(30, 23_040_000, 51)
PROFILE = preset("tdd_scs30", "du")
EAXCS = (EaxcId(0, 0, 0, 0), EaxcId(0, 0, 0, 1))
CODEC = OfhCodec(NUM.nof_prb)


def make_engine(pattern="DDDSU", ports=2, prach=None, **overrides) -> DuEngine:
    kwargs = dict(
        numerology=NUM,
        profile=PROFILE,
        scheduling_offset_slots=10,
        pattern=TddPattern.parse(pattern) if pattern else None,
        comp_meth=CompMeth.BFP,
        comp_width=9,
        eaxcs=EAXCS[:ports],
        prach=prach,
    )
    kwargs.update(overrides)
    return DuEngine(DuSchedulerConfig(**kwargs))


def schedule(du: DuEngine, system_slot: int):
    slot = SlotPoint.from_system_slot(NUM.mu, system_slot)
    now = system_slot * NUM.slot_us - du.cfg.scheduling_offset_slots * NUM.slot_us
    return du.schedule_slot(slot, now, du.payloads_for(slot)), system_slot * NUM.slot_us


class TestScheduleSlot:
    def test_ul_slot_emits_single_cplane_inside_window(self):
        du = make_engine(ports=1)
        emissions, ota = schedule(du, 24)  # slot 24 % 5 == 4 -> U
        assert len(emissions) == 1
        emit_at, data = emissions[0]
        assert ota - PROFILE.t1a_max_cp_ul <= emit_at <= ota - PROFILE.t1a_min_cp_ul
        assert peek_msg_type(data) == MSG_TYPE_CPLANE
        frame = CODEC.decode_cplane(data)
        assert frame.msg.app.data_direction == Direction.UL

    def test_dl_slot_c_before_u_with_gap(self):
        du = make_engine(ports=2)
        emissions, ota = schedule(du, 20)  # D slot
        cplane = [e for e, d in emissions if peek_msg_type(d) == MSG_TYPE_CPLANE]
        uplane = [e for e, d in emissions if peek_msg_type(d) == MSG_TYPE_UPLANE]
        assert len(cplane) == 2 and len(uplane) == 28
        assert max(cplane) < min(uplane)
        assert min(uplane) - max(cplane) >= du.cfg.tcp_adv_dl_us
        for e in cplane:
            assert ota - PROFILE.t1a_max_cp_dl <= e <= ota - PROFILE.t1a_min_cp_dl
        for e in uplane:
            assert ota - PROFILE.t1a_max_up <= e <= ota - PROFILE.t1a_min_up

    def test_schedule_offset_precedes_all_emissions(self):
        du = make_engine()
        emissions, ota = schedule(du, 20)
        schedule_time = ota - 10 * NUM.slot_us
        assert all(e >= schedule_time for e, _ in emissions)
        assert schedule_time == ota - 5000 and ota - 2670 > schedule_time

    def test_wrong_now_rejected(self):
        du = make_engine()
        slot = SlotPoint.from_system_slot(1, 20)
        with pytest.raises(DuConfigError):
            du.schedule_slot(slot, 0, [DlPayload(du.make_dl_grid(slot))])

    def test_direction_mismatch_rejected(self):
        du = make_engine()
        slot = SlotPoint.from_system_slot(1, 24)  # U slot
        now = 24 * NUM.slot_us - 5000
        with pytest.raises(DuConfigError):
            du.schedule_slot(slot, now, [DlPayload(du.make_dl_grid(slot))])

    def test_fdd_slot_gets_both_directions(self):
        num0 = NumerologyConfig.from_rate(15, 30_720_000, 106)
        cfg = DuSchedulerConfig(
            numerology=num0,
            profile=preset("fdd_scs15", "du"),
            scheduling_offset_slots=5,
            pattern=None,
            comp_meth=CompMeth.BFP,
            comp_width=9,
            eaxcs=EAXCS[:1],
        )
        du = DuEngine(cfg)
        slot = SlotPoint.from_system_slot(0, 10)
        emissions = du.schedule_slot(slot, 10_000 - 5_000, du.payloads_for(slot))
        kinds = {(peek_msg_type(d), d[8] >> 7) for _, d in emissions}
        assert (MSG_TYPE_CPLANE, Direction.DL) in kinds
        assert (MSG_TYPE_CPLANE, Direction.UL) in kinds
        assert (MSG_TYPE_UPLANE, Direction.DL) in kinds


class TestConfigValidation:
    def test_offset_too_small(self):
        with pytest.raises(DuConfigError, match="scheduling offset"):
            make_engine(scheduling_offset_slots=5)

    def test_emission_point_outside_window(self):
        with pytest.raises(DuConfigError, match="t1a_up"):
            make_engine(t1a_up_point_us=PROFILE.t1a_max_up + 1)

    def test_c_before_u_violation(self):
        with pytest.raises(DuConfigError, match="tcp_adv"):
            make_engine(t1a_cp_dl_point_us=2400, t1a_up_point_us=2400)

    def test_bad_pattern(self):
        with pytest.raises(DuConfigError):
            TddPattern.parse("DDXSU")


class TestRunPattern:
    @pytest.mark.parametrize(
        "pattern,dl,ul", [("DDDSU", 8, 2), ("DDDDDDDSUU", 8, 2)]
    )
    def test_tdd_counts_over_ten_slots(self, pattern, dl, ul):
        du = make_engine(pattern=pattern, ports=1)
        du.run_pattern(n_frames=1, start_system_slot=20)
        # one frame at mu=1 is 20 slots: twice the pattern period
        assert du.counters.dl_slots_scheduled == 2 * dl

    def test_fdd_schedules_both_every_slot(self):
        num0 = NumerologyConfig.from_rate(15, 30_720_000, 106)
        cfg = DuSchedulerConfig(
            numerology=num0,
            profile=preset("fdd_scs15", "du"),
            scheduling_offset_slots=5,
            pattern=None,
            comp_meth=CompMeth.BFP,
            comp_width=9,
            eaxcs=EAXCS[:1],
        )
        du = DuEngine(cfg)
        emissions = du.run_pattern(n_frames=1)
        assert du.counters.dl_slots_scheduled == 10
        ul_cplanes = [
            d for _, d in emissions
            if peek_msg_type(d) == MSG_TYPE_CPLANE and d[8] >> 7 == Direction.UL
        ]
        assert len(ul_cplanes) == 10

    def test_prach_occasion_replaces_ul_grant(self):
        prach = PrachSchedule(
            config_index=159,
            freq_offset_halfscs=-612,
            occasion_period_slots=20,
            occasion_offsets=(19,),
        )
        du = make_engine(prach=prach, ports=1)
        slot = SlotPoint.from_system_slot(1, 39)  # 39 % 20 == 19
        payloads = du.payloads_for(slot)
        assert len(payloads) == 1 and isinstance(payloads[0], PrachGrant)
        emissions = du.schedule_slot(slot, 39 * 500 - 5000, payloads)
        frame = CODEC.decode_cplane(emissions[0][1])
        assert frame.msg.section_type == 3
        assert frame.msg.sections[0].type3.freq_offset == -612

    def test_deterministic_expansion(self):
        a = make_engine().run_pattern(2)
        b = make_engine().run_pattern(2)
        assert a == b


def ul_uplane_frame(slot: SlotPoint, seq=0, eaxc=EAXCS[0]):
    rng = np.random.default_rng(7)
    values = rng.integers(-2000, 2000, size=(NUM.nof_prb, 24))
    exp, mant = compress_blocks(values, CompMeth.BFP, 9)
    payload = pack_prb_blocks(exp, mant, CompMeth.BFP, 9)
    msg = UPlaneMessage(
        app=OfhAppHeader(Direction.UL, 0, slot.sfn & 0xFF, slot.subframe, slot.slot, 3),
        sections=(UPlaneSection(1, 0, 0, CompMeth.BFP, 9, payload),),
    )
    return CODEC.encode_uplane(msg, eaxc, seq)


class TestOnUplinkFrame:
    SLOT = SlotPoint.from_system_slot(1, 24)
    OTA = 24 * NUM.slot_us

    def test_on_time_at_lower_bound(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT), self.OTA + PROFILE.ta4_min)
        assert du.counters.ul_on_time == 1
        delivered = du.take_delivered()
        assert len(delivered) == 1 and delivered[0].symbol == 3

    def test_late_past_upper_bound(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT), self.OTA + PROFILE.ta4_max + 1)
        assert du.counters.ul_late == 1

    def test_early(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT), self.OTA + PROFILE.ta4_min - 1)
        assert du.counters.ul_early == 1

    def test_duplicate_ignored_once(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=0), self.OTA + 1000)
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=0), self.OTA + 1001)
        assert du.counters.ul_duplicates == 1
        assert du.counters.ul_on_time == 1
        assert len(du.take_delivered()) == 1

    def test_gap_counted(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=0), self.OTA + 1000)
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=3), self.OTA + 1001)
        assert du.counters.ul_seq_gaps == 2
        assert du.counters.ul_on_time == 2

    def test_decode_error(self):
        du = make_engine()
        du.on_uplink_frame(b"\x10\x00\x00", self.OTA + 1000)
        assert du.counters.ul_decode_errors == 1

    def test_lambda_statistics(self):
        du = make_engine()
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=0), self.OTA + 1000)
        du.on_uplink_frame(ul_uplane_frame(self.SLOT, seq=1), self.OTA + 1200)
        c = du.counters
        assert (c.lambda_min, c.lambda_max) == (1000, 1200)
        assert c.lambda_mean == 1100.0
