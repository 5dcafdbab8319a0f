"""Deterministic split-7.2 fronthaul stack: codec, RU/DU engines, simulator."""

from .delay_profile import (
    DuDelayProfile,
    FronthaulDelay,
    RuDelayProfile,
    Timeliness,
    WindowKind,
    check_window,
    derive_du_profile,
    derive_ru_profile,
    preset,
    validate_pair,
)
from .iq_compress import CompMeth, compress, decompress, prb_block_size
from .low_phy import PrachExtractConfig, ResourceGrid, SampleBlock, demodulate, extract_prach, modulate
from .ofh_codec import (
    CPlaneMessage,
    CSection,
    Direction,
    EaxcId,
    OfhAppHeader,
    OfhCodec,
    SequenceTracker,
    UPlaneMessage,
    UPlaneSection,
)
from .ru_engine import RuConfig, RuCounters, RuEngine
from .du_engine import DuEngine, DuSchedulerConfig, TddPattern
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from .sim_transport import LinkModel, read_capture, replay, run, write_capture
from .timing import (
    AlignmentConfig,
    GpsInstant,
    NumerologyConfig,
    SlotPoint,
    align_start_time,
    alignment_offset,
    calculate_slot_diff,
    gps_slot_point,
    slot_point_from_sample_time,
    symbol_sizes_for,
)

__version__ = "0.1.0"
