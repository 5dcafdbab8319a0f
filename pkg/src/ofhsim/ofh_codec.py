"""Bit-exact encoder/decoder for eCPRI-framed fronthaul messages.

Frame layout (all multi-byte fields big-endian unless noted):

  eCPRI header, 4 bytes:
      [version(4)=1 | reserved(3)=0 | concatenation(1)=0]
      [msg_type(8)]                  0x00 = IQ data (U-plane), 0x02 = control (C-plane)
      [payload_size(16)]             byte length following these 4 bytes
  transport, 4 bytes:
      [eaxc(16)] [seq_id(8)] [e_bit(1)=1 | sub_seq(7)=0]
  application header, 4 bytes:
      [data_direction(1) | payload_version(3)=1 | filter_index(4)]
      [frame_id(8)]
      [subframe_id(4) | slot_id(6) | start_symbol_id(6)]

C-plane body: [num_sections(8)] [section_type(8)] [ud_comp_hdr(8)], then per
section 8 bytes:
      [section_id(12) | rb(1) | sym_inc(1) | start_prb(10)]
      [num_prb(8)] [re_mask(12) | num_symbol(4)] [ef(1) | beam_id(15)]
section type 3 appends 8 more bytes per section:
      [time_offset(16)] [frame_structure(8)] [cp_length(16)] [freq_offset(s24)]

U-plane body: one or more data sections, each
      [section_id(12) | rb(1) | sym_inc(1) | start_prb(10)]
      [num_prb(8)] [ud_comp_hdr(8)] [reserved(8)=0]
followed by num_prb compressed PRB blocks (num_prb == 0 means every PRB of
the carrier).  ud_comp_hdr is [iq_width(4) | comp_meth(4)]; a width nibble of
0 encodes 16.  Trailing zero bytes after the declared payload are treated as
padding; any nonzero trailing byte is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .iq_compress import CompMeth, prb_block_size

ECPRI_VERSION = 1
MSG_TYPE_UPLANE = 0x00
MSG_TYPE_CPLANE = 0x02

SECTION_TYPE_REGULAR = 1
SECTION_TYPE_PRACH = 3

FILTER_INDEX_STANDARD = 0
FILTER_INDEX_PRACH_B4 = 3

RE_MASK_ALL = 0xFFF


class Direction(IntEnum):
    UL = 0
    DL = 1


class OfhCodecError(Exception):
    """Base class for codec failures."""


class EncodeError(OfhCodecError):
    def __init__(self, field_name: str, detail: str):
        super().__init__(f"{field_name}: {detail}")
        self.field_name = field_name


class DecodeError(OfhCodecError):
    pass


class TruncatedFrameError(DecodeError):
    pass


class VersionError(DecodeError):
    pass


class UnsupportedSectionTypeError(DecodeError):
    pass


@dataclass(frozen=True)
class EaxcId:
    """One logical antenna-carrier stream address on the fronthaul."""

    du_port: int = 0
    band_sector: int = 0
    cc: int = 0
    ru_port: int = 0

    def pack(self, widths: tuple[int, int, int, int]) -> int:
        value = 0
        for part, width, name in zip(
            (self.du_port, self.band_sector, self.cc, self.ru_port),
            widths,
            ("du_port", "band_sector", "cc", "ru_port"),
        ):
            if not 0 <= part < (1 << width):
                raise EncodeError(f"eaxc.{name}", f"value {part} exceeds {width} bits")
            value = (value << width) | part
        return value

    @classmethod
    def unpack(cls, value: int, widths: tuple[int, int, int, int]) -> "EaxcId":
        parts = []
        for width in reversed(widths):
            parts.append(value & ((1 << width) - 1))
            value >>= width
        ru_port, cc, band_sector, du_port = parts
        return cls(du_port, band_sector, cc, ru_port)


@dataclass(frozen=True)
class OfhAppHeader:
    data_direction: Direction
    filter_index: int
    frame_id: int
    subframe_id: int
    slot_id: int
    start_symbol_id: int
    payload_version: int = 1


@dataclass(frozen=True)
class Type3Extras:
    time_offset: int = 0
    frame_structure: int = 0
    cp_length: int = 0
    freq_offset: int = 0  # signed, units of half a subcarrier spacing


@dataclass(frozen=True)
class CSection:
    section_id: int
    start_prb: int
    num_prb: int  # 0 means "all PRBs of the carrier"
    num_symbol: int
    re_mask: int = RE_MASK_ALL
    rb: int = 0
    sym_inc: int = 0
    ef: int = 0
    beam_id: int = 0
    type3: Type3Extras | None = None


@dataclass(frozen=True)
class CPlaneMessage:
    app: OfhAppHeader
    section_type: int
    comp_meth: CompMeth
    iq_width: int
    sections: tuple[CSection, ...]


@dataclass(frozen=True)
class UPlaneSection:
    section_id: int
    start_prb: int
    num_prb: int  # 0 means "all PRBs of the carrier"
    comp_meth: CompMeth
    iq_width: int
    payload: bytes
    rb: int = 0
    sym_inc: int = 0


@dataclass(frozen=True)
class UPlaneMessage:
    app: OfhAppHeader
    sections: tuple[UPlaneSection, ...]


@dataclass(frozen=True)
class DecodedFrame:
    eaxc: EaxcId
    seq_id: int
    msg: CPlaneMessage | UPlaneMessage


def peek_msg_type(data: bytes) -> int:
    if len(data) < 2:
        raise TruncatedFrameError("frame shorter than the eCPRI header")
    return data[1]


def _field(value: int, bits: int, name: str) -> int:
    if not 0 <= value < (1 << bits):
        raise EncodeError(name, f"value {value} exceeds {bits} bits")
    return value


def _comp_hdr_byte(meth: CompMeth, width: int) -> int:
    if not 1 <= width <= 16:
        raise EncodeError("iq_width", f"value {width} out of range [1, 16]")
    return ((width & 0xF) << 4) | (int(meth) & 0xF)


def _parse_comp_hdr(byte: int) -> tuple[CompMeth, int]:
    width = (byte >> 4) & 0xF
    width = 16 if width == 0 else width
    meth = byte & 0xF
    if meth not in (int(CompMeth.NONE), int(CompMeth.BFP)):
        raise DecodeError(f"unsupported compression method {meth}")
    if meth == int(CompMeth.NONE) and width != 16:
        raise DecodeError("pass-through compression with iq_width != 16")
    return CompMeth(meth), width


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFrameError(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        b = self.take(2)
        return (b[0] << 8) | b[1]


class OfhCodec:
    """Encoder/decoder bound to a carrier size and eAxC bit split."""

    def __init__(self, nof_prb: int, eaxc_widths: tuple[int, int, int, int] = (4, 4, 4, 4)):
        if sum(eaxc_widths) != 16:
            raise ValueError("eAxC field widths must sum to 16")
        self.nof_prb = nof_prb
        self.eaxc_widths = eaxc_widths

    # -- shared header helpers -------------------------------------------

    def _encode_prefix(
        self, msg_type: int, app: OfhAppHeader, eaxc: EaxcId, seq_id: int, body: bytes
    ) -> bytes:
        _field(seq_id, 8, "seq_id")
        _field(app.filter_index, 4, "filter_index")
        _field(app.frame_id, 8, "frame_id")
        if not 0 <= app.subframe_id < 10:
            raise EncodeError("subframe_id", f"value {app.subframe_id} out of range")
        _field(app.slot_id, 6, "slot_id")
        if not 0 <= app.start_symbol_id < 14:
            raise EncodeError("start_symbol_id", f"value {app.start_symbol_id} out of range")
        if app.payload_version != 1:
            raise EncodeError("payload_version", "must be 1")
        eaxc_value = eaxc.pack(self.eaxc_widths)
        transport = bytes(
            [eaxc_value >> 8, eaxc_value & 0xFF, seq_id, 0x80]  # e_bit set, sub_seq 0
        )
        app0 = (int(app.data_direction) << 7) | (app.payload_version << 4) | app.filter_index
        sf_slot_sym = (app.subframe_id << 12) | (app.slot_id << 6) | app.start_symbol_id
        app_bytes = bytes([app0, app.frame_id, sf_slot_sym >> 8, sf_slot_sym & 0xFF])
        payload = transport + app_bytes + body
        if len(payload) > 0xFFFF:
            raise EncodeError("payload_size", "payload exceeds 16 bits")
        header = bytes([ECPRI_VERSION << 4, msg_type, len(payload) >> 8, len(payload) & 0xFF])
        return header + payload

    def _decode_prefix(self, data: bytes, expect_type: int):
        r = _Reader(data)
        first = r.u8()
        if first >> 4 != ECPRI_VERSION:
            raise VersionError(f"eCPRI version {first >> 4}, expected {ECPRI_VERSION}")
        if first & 0x01:
            raise DecodeError("eCPRI concatenation is not supported")
        msg_type = r.u8()
        if msg_type != expect_type:
            raise DecodeError(f"message type 0x{msg_type:02x}, expected 0x{expect_type:02x}")
        payload_size = r.u16()
        if 4 + payload_size > len(data):
            raise TruncatedFrameError(
                f"payload_size {payload_size} exceeds the {len(data)} byte buffer"
            )
        if any(data[4 + payload_size :]):
            raise DecodeError("nonzero trailing bytes after the declared payload")
        r.data = data[: 4 + payload_size]
        eaxc = EaxcId.unpack(r.u16(), self.eaxc_widths)
        seq_id = r.u8()
        ebit_sub = r.u8()
        if not ebit_sub & 0x80 or ebit_sub & 0x7F:
            raise DecodeError("fragmented frames (sub_seq) are not supported")
        app0 = r.u8()
        frame_id = r.u8()
        sf_slot_sym = r.u16()
        if (app0 >> 4) & 0x7 != 1:
            raise DecodeError(f"payload_version {(app0 >> 4) & 0x7}, expected 1")
        app = OfhAppHeader(
            data_direction=Direction(app0 >> 7),
            filter_index=app0 & 0xF,
            frame_id=frame_id,
            subframe_id=sf_slot_sym >> 12,
            slot_id=(sf_slot_sym >> 6) & 0x3F,
            start_symbol_id=sf_slot_sym & 0x3F,
        )
        if app.subframe_id >= 10:
            raise DecodeError(f"subframe_id {app.subframe_id} out of range")
        return r, eaxc, seq_id, app

    def effective_prbs(self, start_prb: int, num_prb: int) -> int:
        count = self.nof_prb if num_prb == 0 else num_prb
        if start_prb + count > self.nof_prb:
            raise DecodeError(
                f"PRB range [{start_prb}, {start_prb + count}) exceeds carrier of {self.nof_prb}"
            )
        return count

    # -- C-plane ----------------------------------------------------------

    def encode_cplane(self, msg: CPlaneMessage, eaxc: EaxcId, seq_id: int) -> bytes:
        if msg.section_type not in (SECTION_TYPE_REGULAR, SECTION_TYPE_PRACH):
            raise EncodeError("section_type", f"unsupported value {msg.section_type}")
        if not msg.sections:
            raise EncodeError("sections", "at least one section is required")
        body = bytearray()
        body.append(_field(len(msg.sections), 8, "num_sections"))
        body.append(msg.section_type)
        body.append(_comp_hdr_byte(msg.comp_meth, msg.iq_width))
        for sec in msg.sections:
            if (msg.section_type == SECTION_TYPE_PRACH) != (sec.type3 is not None):
                raise EncodeError("type3", "extras present iff section_type is 3")
            _field(sec.section_id, 12, "section_id")
            _field(sec.rb, 1, "rb")
            _field(sec.sym_inc, 1, "sym_inc")
            _field(sec.start_prb, 10, "start_prb")
            _field(sec.num_prb, 8, "num_prb")
            _field(sec.re_mask, 12, "re_mask")
            if not 1 <= sec.num_symbol <= 14:
                raise EncodeError("num_symbol", f"value {sec.num_symbol} out of range [1, 14]")
            if msg.app.start_symbol_id + sec.num_symbol > 14:
                raise EncodeError("num_symbol", "allocation extends past the slot")
            _field(sec.ef, 1, "ef")
            _field(sec.beam_id, 15, "beam_id")
            count = self.nof_prb if sec.num_prb == 0 else sec.num_prb
            if sec.start_prb + count > self.nof_prb:
                raise EncodeError("start_prb", "PRB range exceeds the carrier")
            word = (sec.section_id << 12) | (sec.rb << 11) | (sec.sym_inc << 10) | sec.start_prb
            body += word.to_bytes(3, "big")
            body.append(sec.num_prb)
            body += (((sec.re_mask << 4) | sec.num_symbol)).to_bytes(2, "big")
            body += (((sec.ef << 15) | sec.beam_id)).to_bytes(2, "big")
            if sec.type3 is not None:
                ex = sec.type3
                _field(ex.time_offset, 16, "time_offset")
                _field(ex.frame_structure, 8, "frame_structure")
                _field(ex.cp_length, 16, "cp_length")
                if not -(1 << 23) <= ex.freq_offset < (1 << 23):
                    raise EncodeError("freq_offset", f"value {ex.freq_offset} exceeds 24 bits")
                body += ex.time_offset.to_bytes(2, "big")
                body.append(ex.frame_structure)
                body += ex.cp_length.to_bytes(2, "big")
                body += (ex.freq_offset & 0xFFFFFF).to_bytes(3, "big")
        return self._encode_prefix(MSG_TYPE_CPLANE, msg.app, eaxc, seq_id, bytes(body))

    def decode_cplane(self, data: bytes) -> DecodedFrame:
        r, eaxc, seq_id, app = self._decode_prefix(data, MSG_TYPE_CPLANE)
        num_sections = r.u8()
        section_type = r.u8()
        if section_type not in (SECTION_TYPE_REGULAR, SECTION_TYPE_PRACH):
            raise UnsupportedSectionTypeError(f"section type {section_type}")
        if num_sections == 0:
            raise DecodeError("C-plane message with zero sections")
        comp_meth, iq_width = _parse_comp_hdr(r.u8())
        sections = []
        for _ in range(num_sections):
            word = int.from_bytes(r.take(3), "big")
            start_prb = word & 0x3FF
            num_prb = r.u8()
            mask_sym = r.u16()
            num_symbol = mask_sym & 0xF
            ef_beam = r.u16()
            if not 1 <= num_symbol <= 14:
                raise DecodeError(f"num_symbol {num_symbol} out of range [1, 14]")
            if app.start_symbol_id + num_symbol > 14:
                raise DecodeError("section allocation extends past the slot")
            self.effective_prbs(start_prb, num_prb)
            extras = None
            if section_type == SECTION_TYPE_PRACH:
                time_offset = r.u16()
                frame_structure = r.u8()
                cp_length = r.u16()
                raw = int.from_bytes(r.take(3), "big")
                freq_offset = raw - (1 << 24) if raw & (1 << 23) else raw
                extras = Type3Extras(time_offset, frame_structure, cp_length, freq_offset)
            sections.append(
                CSection(
                    section_id=word >> 12,
                    start_prb=start_prb,
                    num_prb=num_prb,
                    num_symbol=num_symbol,
                    re_mask=mask_sym >> 4,
                    rb=(word >> 11) & 1,
                    sym_inc=(word >> 10) & 1,
                    ef=ef_beam >> 15,
                    beam_id=ef_beam & 0x7FFF,
                    type3=extras,
                )
            )
        if r.pos != len(r.data):
            raise DecodeError(f"{len(r.data) - r.pos} undeclared bytes inside the payload")
        msg = CPlaneMessage(app, section_type, comp_meth, iq_width, tuple(sections))
        return DecodedFrame(eaxc, seq_id, msg)

    # -- U-plane ----------------------------------------------------------

    def encode_uplane(self, msg: UPlaneMessage, eaxc: EaxcId, seq_id: int) -> bytes:
        if not msg.sections:
            raise EncodeError("sections", "at least one data section is required")
        body = bytearray()
        for sec in msg.sections:
            _field(sec.section_id, 12, "section_id")
            _field(sec.rb, 1, "rb")
            _field(sec.sym_inc, 1, "sym_inc")
            _field(sec.start_prb, 10, "start_prb")
            _field(sec.num_prb, 8, "num_prb")
            count = self.nof_prb if sec.num_prb == 0 else sec.num_prb
            if sec.start_prb + count > self.nof_prb:
                raise EncodeError("start_prb", "PRB range exceeds the carrier")
            expect = count * prb_block_size(sec.comp_meth, sec.iq_width)
            if len(sec.payload) != expect:
                raise EncodeError(
                    "payload", f"expected {expect} bytes for {count} PRBs, got {len(sec.payload)}"
                )
            word = (sec.section_id << 12) | (sec.rb << 11) | (sec.sym_inc << 10) | sec.start_prb
            body += word.to_bytes(3, "big")
            body.append(sec.num_prb)
            body.append(_comp_hdr_byte(sec.comp_meth, sec.iq_width))
            body.append(0)
            body += sec.payload
        return self._encode_prefix(MSG_TYPE_UPLANE, msg.app, eaxc, seq_id, bytes(body))

    def decode_uplane(self, data: bytes) -> DecodedFrame:
        r, eaxc, seq_id, app = self._decode_prefix(data, MSG_TYPE_UPLANE)
        sections = []
        while r.pos < len(r.data):
            word = int.from_bytes(r.take(3), "big")
            start_prb = word & 0x3FF
            num_prb = r.u8()
            comp_meth, iq_width = _parse_comp_hdr(r.u8())
            if r.u8() != 0:
                raise DecodeError("nonzero reserved byte in data section")
            count = self.effective_prbs(start_prb, num_prb)
            payload = r.take(count * prb_block_size(comp_meth, iq_width))
            sections.append(
                UPlaneSection(
                    section_id=word >> 12,
                    start_prb=start_prb,
                    num_prb=num_prb,
                    comp_meth=comp_meth,
                    iq_width=iq_width,
                    payload=payload,
                    rb=(word >> 11) & 1,
                    sym_inc=(word >> 10) & 1,
                )
            )
        if not sections:
            raise DecodeError("U-plane message with zero data sections")
        return DecodedFrame(eaxc, seq_id, UPlaneMessage(app, tuple(sections)))


class SeqKind(IntEnum):
    IN_ORDER = 0
    GAP = 1
    DUPLICATE = 2


class SequenceTracker:
    """Per-stream sequence continuity, modulo 256.

    A stream is one (eAxC, direction, plane) triple; keep one tracker per
    serialized reception path (single writer per stream).
    """

    def __init__(self):
        self._expected: dict = {}

    def track(self, eaxc, direction, plane, seq_id: int) -> tuple[SeqKind, int]:
        """Returns (kind, gap); gap is the number of skipped frames, else 0."""
        key = (eaxc, direction, plane)
        expected = self._expected.get(key)
        if expected is None:
            self._expected[key] = (seq_id + 1) & 0xFF
            return SeqKind.IN_ORDER, 0
        delta = (seq_id - expected) & 0xFF
        if delta == 0:
            self._expected[key] = (seq_id + 1) & 0xFF
            return SeqKind.IN_ORDER, 0
        if delta < 128:
            self._expected[key] = (seq_id + 1) & 0xFF
            return SeqKind.GAP, delta
        return SeqKind.DUPLICATE, 0
