"""Fronthaul timing windows: published presets, derivation and membership.

All bounds are integer microseconds relative to a slot's OTA instant.  RU-side
reception windows open ``max`` before OTA and close ``min`` before OTA; the
uplink transmit (ta3) and DU reception (ta4) windows sit after OTA.  Bounds
are inclusive at both ends.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum


class WindowKind(Enum):
    CPLANE_DL = "cplane_dl"
    CPLANE_UL = "cplane_ul"
    UPLANE_DL = "uplane_dl"
    UPLANE_UL_TX = "uplane_ul_tx"
    UPLANE_UL_RX = "uplane_ul_rx"


class Timeliness(Enum):
    EARLY = "early"
    ON_TIME = "on_time"
    LATE = "late"


class WindowCollapseError(ValueError):
    """A derived window ended up with max < min."""


@dataclass(frozen=True)
class RuDelayProfile:
    t2a_max_cp_dl: int
    t2a_min_cp_dl: int
    t2a_max_cp_ul: int
    t2a_min_cp_ul: int
    t2a_max_up: int
    t2a_min_up: int
    ta3_max: int
    ta3_min: int

    def __post_init__(self):
        _check_pairs(self, "t2a_max_cp_dl t2a_max_cp_ul t2a_max_up ta3_max".split())
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass(frozen=True)
class DuDelayProfile:
    t1a_max_cp_dl: int
    t1a_min_cp_dl: int
    t1a_max_cp_ul: int
    t1a_min_cp_ul: int
    t1a_max_up: int
    t1a_min_up: int
    ta4_max: int
    ta4_min: int

    def __post_init__(self):
        _check_pairs(self, "t1a_max_cp_dl t1a_max_cp_ul t1a_max_up ta4_max".split())


@dataclass(frozen=True)
class FronthaulDelay:
    t12_min: int = 0
    t12_max: int = 0
    t34_min: int = 0
    t34_max: int = 0

    def __post_init__(self):
        if self.t12_min > self.t12_max or self.t34_min > self.t34_max:
            raise ValueError("fronthaul delay min exceeds max")


def _check_pairs(profile, max_names):
    for max_name in max_names:
        min_name = max_name.replace("max", "min")
        if getattr(profile, max_name) < getattr(profile, min_name):
            raise ValueError(f"{max_name} < {min_name}")


# Published delay profiles, in microseconds.
_PRESETS = {
    ("tdd_scs30", "ru"): RuDelayProfile(
        t2a_max_cp_dl=2635,
        t2a_min_cp_dl=2221,
        t2a_max_cp_ul=2635,
        t2a_min_cp_ul=2221,
        t2a_max_up=2454,
        t2a_min_up=2015,
        ta3_max=1280,
        ta3_min=925,
    ),
    ("tdd_scs30", "du"): DuDelayProfile(
        t1a_max_cp_dl=2635,
        t1a_min_cp_dl=2335,
        t1a_max_cp_ul=2670,
        t1a_min_cp_ul=2386,
        t1a_max_up=2460,
        t1a_min_up=2180,
        ta4_max=1325,
        ta4_min=925,
    ),
    ("fdd_scs15", "ru"): RuDelayProfile(
        t2a_max_cp_dl=4135,
        t2a_min_cp_dl=3721,
        t2a_max_cp_ul=4135,
        t2a_min_cp_ul=3721,
        t2a_max_up=3954,
        t2a_min_up=3515,
        ta3_max=1480,
        ta3_min=1125,
    ),
    ("fdd_scs15", "du"): DuDelayProfile(
        t1a_max_cp_dl=4135,
        t1a_min_cp_dl=3886,
        t1a_max_cp_ul=4135,
        t1a_min_cp_ul=3886,
        t1a_max_up=3990,
        t1a_min_up=3680,
        ta4_max=1500,
        ta4_min=1125,
    ),
}

PRESET_NAMES = ("tdd_scs30", "fdd_scs15")


def preset(name: str, side: str):
    """Published profile values for a named setup; side is 'ru' or 'du'."""
    try:
        return _PRESETS[(name, side)]
    except KeyError:
        raise KeyError(f"unknown delay profile preset ({name!r}, {side!r})") from None


def derive_ru_profile(
    lowphy_lead_slots: int,
    ofh_proc_slots_max: int,
    ofh_proc_slots_min: int,
    ulproc_slots_max: int,
    ulproc_slots_min: int,
    slot_us: int,
    cp_margin_us: int = 200,
) -> RuDelayProfile:
    """Slot-count template for an RU profile.

    Downlink reception must cover the low-PHY lead plus the packet-processing
    budget; C-plane bounds sit ``cp_margin_us`` above the U-plane bounds; the
    uplink transmit window spans the uplink processing budget.  This is a
    parameterized template, not a reproduction of the published tables (which
    are empirically tuned); it lands within one slot of them.
    """
    counts = (
        lowphy_lead_slots,
        ofh_proc_slots_max,
        ofh_proc_slots_min,
        ulproc_slots_max,
        ulproc_slots_min,
    )
    if any(c <= 0 for c in counts):
        raise ValueError("lead and processing slot counts must be positive")
    if slot_us <= 0:
        raise ValueError("slot_us must be positive")
    if cp_margin_us < 0:
        raise ValueError("cp_margin_us must be non-negative")
    up_max = (lowphy_lead_slots + ofh_proc_slots_max) * slot_us
    up_min = (lowphy_lead_slots + ofh_proc_slots_min) * slot_us
    return RuDelayProfile(
        t2a_max_cp_dl=up_max + cp_margin_us,
        t2a_min_cp_dl=up_min + cp_margin_us,
        t2a_max_cp_ul=up_max + cp_margin_us,
        t2a_min_cp_ul=up_min + cp_margin_us,
        t2a_max_up=up_max,
        t2a_min_up=up_min,
        ta3_max=ulproc_slots_max * slot_us,
        ta3_min=ulproc_slots_min * slot_us,
    )


def derive_du_profile(ru: RuDelayProfile, fh: FronthaulDelay) -> DuDelayProfile:
    """DU windows implied by an RU profile plus the fronthaul delay spread.

    Transmit bounds shrink by the delay jitter (max side takes the minimum
    delay, min side the maximum); reception bounds shift out by the uplink
    delay.  Raises :class:`WindowCollapseError` when a window inverts.
    """
    values = {
        "t1a_max_cp_dl": ru.t2a_max_cp_dl + fh.t12_min,
        "t1a_min_cp_dl": ru.t2a_min_cp_dl + fh.t12_max,
        "t1a_max_cp_ul": ru.t2a_max_cp_ul + fh.t12_min,
        "t1a_min_cp_ul": ru.t2a_min_cp_ul + fh.t12_max,
        "t1a_max_up": ru.t2a_max_up + fh.t12_min,
        "t1a_min_up": ru.t2a_min_up + fh.t12_max,
        "ta4_max": ru.ta3_max + fh.t34_max,
        "ta4_min": ru.ta3_min + fh.t34_min,
    }
    for max_name in ("t1a_max_cp_dl", "t1a_max_cp_ul", "t1a_max_up", "ta4_max"):
        min_name = max_name.replace("max", "min")
        if values[max_name] < values[min_name]:
            raise WindowCollapseError(
                f"{max_name}={values[max_name]} < {min_name}={values[min_name]}"
            )
    return DuDelayProfile(**values)


def window_bounds(kind: WindowKind, profile) -> tuple[int, int, bool]:
    """(min, max, before_ota) bounds of a window kind within a profile."""
    if isinstance(profile, RuDelayProfile):
        table = {
            WindowKind.CPLANE_DL: (profile.t2a_min_cp_dl, profile.t2a_max_cp_dl, True),
            WindowKind.CPLANE_UL: (profile.t2a_min_cp_ul, profile.t2a_max_cp_ul, True),
            WindowKind.UPLANE_DL: (profile.t2a_min_up, profile.t2a_max_up, True),
            WindowKind.UPLANE_UL_TX: (profile.ta3_min, profile.ta3_max, False),
        }
    else:
        table = {
            WindowKind.CPLANE_DL: (profile.t1a_min_cp_dl, profile.t1a_max_cp_dl, True),
            WindowKind.CPLANE_UL: (profile.t1a_min_cp_ul, profile.t1a_max_cp_ul, True),
            WindowKind.UPLANE_DL: (profile.t1a_min_up, profile.t1a_max_up, True),
            WindowKind.UPLANE_UL_RX: (profile.ta4_min, profile.ta4_max, False),
        }
    try:
        return table[kind]
    except KeyError:
        raise ValueError(f"profile {type(profile).__name__} has no bounds for {kind}") from None


def check_window(kind: WindowKind, event_time: int, ota_time: int, profile) -> Timeliness:
    """Classify an event against a window; exactly one verdict always holds."""
    lo, hi, before = window_bounds(kind, profile)
    if before:
        start, end = ota_time - hi, ota_time - lo
    else:
        start, end = ota_time + lo, ota_time + hi
    if event_time < start:
        return Timeliness.EARLY
    if event_time > end:
        return Timeliness.LATE
    return Timeliness.ON_TIME


@dataclass(frozen=True)
class Finding:
    ok: bool
    bound: str
    detail: str = ""
    delta_us: int = 0


def validate_pair(ru: RuDelayProfile, du: DuDelayProfile, fh: FronthaulDelay) -> list[Finding]:
    """Consistency audit of a configured RU/DU profile pair.

    Downlink: warn when the DU's earliest emission can land before the RU
    window opens, or its latest emission can land after it closes.  Uplink:
    warn when the RU's transmit window plus the fronthaul delay can fall
    outside the DU reception window.  Published table pairs trip the downlink
    max-side warnings by a handful of microseconds; findings never error.
    """
    findings = []

    def check(bound, lhs, rhs, detail):
        if lhs > rhs:
            findings.append(Finding(False, bound, detail, lhs - rhs))
        else:
            findings.append(Finding(True, bound))

    for x in ("cp_dl", "cp_ul", "up"):
        du_max = getattr(du, f"t1a_max_{x}")
        du_min = getattr(du, f"t1a_min_{x}")
        ru_max = getattr(ru, f"t2a_max_{x}")
        ru_min = getattr(ru, f"t2a_min_{x}")
        check(
            f"t1a_max_{x}",
            du_max,
            ru_max + fh.t12_min,
            "earliest DU emission can arrive before the RU window opens",
        )
        check(
            f"t1a_min_{x}",
            ru_min + fh.t12_max,
            du_min,
            "latest DU emission can arrive after the RU window closes",
        )
    check(
        "ta4_max",
        ru.ta3_max + fh.t34_max,
        du.ta4_max,
        "latest RU transmission can arrive after the DU window closes",
    )
    check(
        "ta4_min",
        du.ta4_min,
        ru.ta3_min + fh.t34_min,
        "earliest RU transmission can arrive before the DU window opens",
    )
    return findings


def warnings_of(findings: list[Finding]) -> list[Finding]:
    return [f for f in findings if not f.ok]
