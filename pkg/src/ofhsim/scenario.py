"""Scenario configuration: the flat, human-writable run description.

Key names in the config file mirror the field names of the domain types so
scenarios stay portable; delay profiles load either as preset names or as
mappings keyed exactly like the published table rows (``t2a_max_cp_dl`` and
friends, integer microseconds).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import yaml

from .delay_profile import (
    DuDelayProfile,
    FronthaulDelay,
    RuDelayProfile,
    derive_du_profile,
    preset,
)
from .du_engine import DuEngine, DuSchedulerConfig, PrachSchedule, TddPattern
from .iq_compress import CompMeth
from .low_phy import prach_band_start
from .ofh_codec import EaxcId
from .ru_engine import RuConfig, RuEngine
from .timing import NumerologyConfig


class ScenarioError(ValueError):
    pass


_DUPLEX_DEFAULTS = {
    "tdd": dict(scs_khz=30, sampling_rate_hz=23_040_000, nof_prb=51, offset=10, prach_index=159),
    "fdd": dict(scs_khz=15, sampling_rate_hz=30_720_000, nof_prb=106, offset=5, prach_index=213),
}


@dataclass(frozen=True)
class PrachScenario:
    enabled: bool = False
    index: int = 159
    freq_offset_halfscs: int = 0
    occasion_period_slots: int = 20
    occasion_offsets: tuple[int, ...] = (19,)
    ue_tone_bin: int = 5
    ue_tone_absolute_sc: int | None = None
    ue_tone_amplitude: float = 0.5


@dataclass(frozen=True)
class Scenario:
    numerology: NumerologyConfig
    duplex: str
    pattern: TddPattern | None
    ru_profile: RuDelayProfile
    du_profile: DuDelayProfile
    fronthaul: FronthaulDelay = FronthaulDelay()
    jitter: str = "none"  # none | uniform | sequence
    jitter_sequence: tuple[int, ...] = ()
    drop_rate: float = 0.0
    seed: int = 7
    comp_meth: CompMeth = CompMeth.BFP
    comp_width: int = 9
    scheduling_offset_slots: int = 10
    tcp_adv_dl_us: int = 125
    t1a_cp_dl_point_us: int | None = None
    t1a_up_point_us: int | None = None
    t1a_cp_ul_point_us: int | None = None
    ta3_tx_offset_us: int | None = None
    lowphy_lead_slots: int = 3
    prach: PrachScenario = field(default_factory=PrachScenario)
    n_frames: int = 20
    ports: int = 2
    du_payload_seed: int = 11
    ue_payload_seed: int = 23

    # -- derived views ------------------------------------------------------

    @property
    def eaxcs(self) -> tuple[EaxcId, ...]:
        return tuple(EaxcId(0, 0, 0, p) for p in range(self.ports))

    @property
    def first_system_slot(self) -> int:
        # Start far enough into the hyperframe (whole frames) that every
        # pre-OTA emission instant lands at a non-negative virtual time.
        spf = self.numerology.slots_per_frame
        lead_slots = max(self.scheduling_offset_slots, self.lowphy_lead_slots)
        return spf * max(1, -(-lead_slots // spf))

    @property
    def total_slots(self) -> int:
        return self.n_frames * self.numerology.slots_per_frame

    def slot_kind(self, system_slot: int) -> str:
        if self.pattern is None:
            return "F"
        return self.pattern.kind(system_slot)

    def is_prach_occasion(self, system_slot: int) -> bool:
        return (
            self.prach.enabled
            and system_slot % self.prach.occasion_period_slots in self.prach.occasion_offsets
        )

    def carries_uplink(self, system_slot: int) -> bool:
        return self.slot_kind(system_slot) in ("U", "F")

    def prach_schedule(self) -> PrachSchedule | None:
        if not self.prach.enabled:
            return None
        return PrachSchedule(
            config_index=self.prach.index,
            freq_offset_halfscs=self.prach.freq_offset_halfscs,
            occasion_period_slots=self.prach.occasion_period_slots,
            occasion_offsets=self.prach.occasion_offsets,
        )

    def ru_config(self) -> RuConfig:
        return RuConfig(
            numerology=self.numerology,
            profile=self.ru_profile,
            comp_meth=self.comp_meth,
            comp_width=self.comp_width,
            eaxcs=self.eaxcs,
            lowphy_lead_slots=self.lowphy_lead_slots,
            ta3_tx_offset_us=self.ta3_tx_offset_us,
        )

    def du_config(self) -> DuSchedulerConfig:
        return DuSchedulerConfig(
            numerology=self.numerology,
            profile=self.du_profile,
            scheduling_offset_slots=self.scheduling_offset_slots,
            pattern=self.pattern,
            comp_meth=self.comp_meth,
            comp_width=self.comp_width,
            eaxcs=self.eaxcs,
            prach=self.prach_schedule(),
            tcp_adv_dl_us=self.tcp_adv_dl_us,
            t1a_cp_dl_point_us=self.t1a_cp_dl_point_us,
            t1a_up_point_us=self.t1a_up_point_us,
            t1a_cp_ul_point_us=self.t1a_cp_ul_point_us,
            payload_seed=self.du_payload_seed,
        )

    def ue_tone_sc(self) -> int:
        if self.prach.ue_tone_absolute_sc is not None:
            return self.prach.ue_tone_absolute_sc
        return prach_band_start(self.prach.freq_offset_halfscs) + self.prach.ue_tone_bin

    # -- validation -----------------------------------------------------------

    def validate(self) -> None:
        num = self.numerology
        if self.duplex not in ("tdd", "fdd"):
            raise ScenarioError(f"duplex must be tdd or fdd, not {self.duplex!r}")
        if (self.pattern is None) != (self.duplex == "fdd"):
            raise ScenarioError("tdd requires a pattern; fdd must not carry one")
        if not 1 <= self.n_frames <= 512:
            raise ScenarioError("n_frames must lie in [1, 512]")
        if self.ports < 1:
            raise ScenarioError("at least one antenna port is required")
        if self.comp_meth == CompMeth.NONE and self.comp_width != 16:
            raise ScenarioError("pass-through compression requires width 16")
        if not 1 <= self.comp_width <= 16:
            raise ScenarioError("comp width must lie in [1, 16]")
        if self.jitter not in ("none", "uniform", "sequence"):
            raise ScenarioError(f"unknown jitter kind {self.jitter!r}")
        if self.jitter == "none" and (
            self.fronthaul.t12_min != self.fronthaul.t12_max
            or self.fronthaul.t34_min != self.fronthaul.t34_max
        ):
            raise ScenarioError("jitter 'none' requires fixed fronthaul delays (min == max)")
        if self.jitter == "sequence":
            if not self.jitter_sequence:
                raise ScenarioError("jitter 'sequence' requires jitter_sequence values")
            fh = self.fronthaul
            for v in self.jitter_sequence:
                if not (fh.t12_min <= v <= fh.t12_max and fh.t34_min <= v <= fh.t34_max):
                    raise ScenarioError(f"sequence delay {v} outside the fronthaul bounds")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ScenarioError("drop_rate must lie in [0, 1)")
        lead_us = self.lowphy_lead_slots * num.slot_us
        closes = (
            self.ru_profile.t2a_min_cp_dl,
            self.ru_profile.t2a_min_cp_ul,
            self.ru_profile.t2a_min_up,
        )
        if any(lead_us > c for c in closes):
            raise ScenarioError(
                f"low-PHY lead of {lead_us} us overruns a reception window closing at "
                f"{min(closes)} us before OTA"
            )
        if self.prach.enabled:
            if any(o >= self.prach.occasion_period_slots for o in self.prach.occasion_offsets):
                raise ScenarioError("PRACH occasion offsets must be below the period")
            start = prach_band_start(self.prach.freq_offset_halfscs)
            if start < -num.fft_size // 2 or start + 139 > num.fft_size // 2:
                raise ScenarioError("PRACH band does not fit the FFT bandwidth")
            if self.pattern is not None:
                span = _lcm(self.pattern.period_slots, self.prach.occasion_period_slots)
                for s in range(span):
                    if self.is_prach_occasion(s) and self.pattern.kind(s) != "U":
                        raise ScenarioError(f"PRACH occasion lands on a {self.pattern.kind(s)} slot")
        # Engine constructors enforce the window/offset feasibility rules.
        RuEngine(self.ru_config())
        DuEngine(self.du_config())


def _lcm(a: int, b: int) -> int:
    import math

    return a * b // math.gcd(a, b)


# -- parsing ------------------------------------------------------------------

_RU_KEYS = [f.name for f in RuDelayProfile.__dataclass_fields__.values()]
_DU_KEYS = [f.name for f in DuDelayProfile.__dataclass_fields__.values()]


def _parse_profile(value, side: str, fh: FronthaulDelay, ru=None):
    if isinstance(value, str):
        if side == "du" and value == "derive":
            return derive_du_profile(ru, fh)
        try:
            return preset(value, side)
        except KeyError as e:
            raise ScenarioError(str(e)) from None
    if isinstance(value, dict):
        keys = _RU_KEYS if side == "ru" else _DU_KEYS
        missing = [k for k in keys if k not in value]
        extra = [k for k in value if k not in keys]
        if missing or extra:
            raise ScenarioError(f"{side}_profile keys: missing {missing}, unexpected {extra}")
        cls = RuDelayProfile if side == "ru" else DuDelayProfile
        return cls(**{k: int(value[k]) for k in keys})
    raise ScenarioError(f"{side}_profile must be a preset name or a mapping")


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping")
    try:
        duplex_block = raw.get("duplex", {})
        duplex = duplex_block.get("mode", "tdd")
        defaults = _DUPLEX_DEFAULTS.get(duplex, _DUPLEX_DEFAULTS["tdd"])
        num_block = raw.get("numerology", {})
        numerology = NumerologyConfig.from_rate(
            scs_khz=int(num_block.get("scs_khz", defaults["scs_khz"])),
            sampling_rate_hz=int(num_block.get("sampling_rate_hz", defaults["sampling_rate_hz"])),
            nof_prb=int(num_block.get("nof_prb", defaults["nof_prb"])),
        )
        pattern = None
        if duplex == "tdd":
            pattern = TddPattern.parse(str(duplex_block.get("pattern", "DDDSU")))
        fh_block = raw.get("fronthaul", {})
        fronthaul = FronthaulDelay(
            t12_min=int(fh_block.get("t12_min", 0)),
            t12_max=int(fh_block.get("t12_max", 0)),
            t34_min=int(fh_block.get("t34_min", 0)),
            t34_max=int(fh_block.get("t34_max", 0)),
        )
        ru_profile = _parse_profile(raw.get("ru_profile", "tdd_scs30"), "ru", fronthaul)
        du_profile = _parse_profile(
            raw.get("du_profile", "derive"), "du", fronthaul, ru=ru_profile
        )
        comp_block = raw.get("comp", {})
        meth_name = str(comp_block.get("meth", "bfp")).lower()
        if meth_name not in ("none", "bfp"):
            raise ScenarioError(f"unknown compression method {meth_name!r}")
        comp_meth = CompMeth.NONE if meth_name == "none" else CompMeth.BFP
        comp_width = int(comp_block.get("width", 16 if comp_meth == CompMeth.NONE else 9))
        prach_block = raw.get("prach", {})
        slots_per_frame = numerology.slots_per_frame
        prach = PrachScenario(
            enabled=bool(prach_block.get("enabled", False)),
            index=int(prach_block.get("index", defaults["prach_index"])),
            freq_offset_halfscs=int(
                prach_block.get("freq_offset_halfscs", -numerology.subcarriers)
            ),
            occasion_period_slots=int(
                prach_block.get("occasion_period_slots", slots_per_frame)
            ),
            occasion_offsets=tuple(
                int(v) for v in prach_block.get("occasion_offsets", [slots_per_frame - 1])
            ),
            ue_tone_bin=int(prach_block.get("ue_tone_bin", 5)),
            ue_tone_absolute_sc=(
                int(prach_block["ue_tone_absolute_sc"])
                if "ue_tone_absolute_sc" in prach_block
                else None
            ),
            ue_tone_amplitude=float(prach_block.get("ue_tone_amplitude", 0.5)),
        )
        points = raw.get("t1a_points", {})
        scenario = Scenario(
            numerology=numerology,
            duplex=duplex,
            pattern=pattern,
            ru_profile=ru_profile,
            du_profile=du_profile,
            fronthaul=fronthaul,
            jitter=str(fh_block.get("jitter", "none")),
            jitter_sequence=tuple(int(v) for v in fh_block.get("jitter_sequence", [])),
            drop_rate=float(fh_block.get("drop_rate", 0.0)),
            seed=int(fh_block.get("seed", raw.get("seed", 7))),
            comp_meth=comp_meth,
            comp_width=comp_width,
            scheduling_offset_slots=int(raw.get("scheduling_offset_slots", defaults["offset"])),
            tcp_adv_dl_us=int(raw.get("tcp_adv_dl_us", 125)),
            t1a_cp_dl_point_us=int(points["cp_dl"]) if "cp_dl" in points else None,
            t1a_up_point_us=int(points["up"]) if "up" in points else None,
            t1a_cp_ul_point_us=int(points["cp_ul"]) if "cp_ul" in points else None,
            ta3_tx_offset_us=int(raw["ta3_tx_offset_us"]) if "ta3_tx_offset_us" in raw else None,
            lowphy_lead_slots=int(raw.get("lowphy_lead_slots", 3)),
            prach=prach,
            n_frames=int(raw.get("n_frames", 20)),
            ports=int(raw.get("ports", 2)),
            du_payload_seed=int(raw.get("du_payload_seed", 11)),
            ue_payload_seed=int(raw.get("ue_payload_seed", 23)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    scenario.validate()
    return scenario


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ScenarioError(f"cannot parse {path}: {e}") from e
    return scenario_from_dict(raw)


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)
