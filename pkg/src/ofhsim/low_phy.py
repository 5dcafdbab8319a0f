"""Low PHY: resource grids, OFDM modulation/demodulation, PRACH extraction.

Conventions fixed here so IQ payloads are implementation-independent: the
inverse DFT carries the 1/N normalization and the forward DFT none; the
carrier's subcarriers are centered on DC with negative frequencies in the
upper FFT half; each symbol's cyclic prefix is its last N_cp useful samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timing import NumerologyConfig, SlotPoint, slot_point_from_sample_time


class LowPhyError(ValueError):
    pass


class ResourceGrid:
    """Symbol x subcarrier x port storage for one slot.

    Single-writer while being filled, immutable by convention afterwards.
    Unwritten entries read as exact zero; the written mask is PRB-granular
    per (symbol, port).
    """

    def __init__(self, slot: SlotPoint, nof_prb: int, ports: int):
        self.slot = slot
        self.nof_prb = nof_prb
        self.ports = ports
        self.data = np.zeros((14, 12 * nof_prb, ports), dtype=np.complex128)
        self.written = np.zeros((14, nof_prb, ports), dtype=bool)

    def write_prbs(self, symbol: int, start_prb: int, port: int, values: np.ndarray):
        values = np.asarray(values, dtype=np.complex128).reshape(-1)
        nprb, rem = divmod(values.size, 12)
        if rem or start_prb + nprb > self.nof_prb:
            raise LowPhyError(
                f"write of {values.size} REs at PRB {start_prb} does not fit the grid"
            )
        k0 = 12 * start_prb
        self.data[symbol, k0 : k0 + values.size, port] = values
        self.written[symbol, start_prb : start_prb + nprb, port] = True

    def reset(self, slot: SlotPoint):
        self.slot = slot
        self.data[:] = 0
        self.written[:] = False


@dataclass(frozen=True)
class SampleBlock:
    """A contiguous run of baseband samples for one port."""

    start: int  # sample ticks at the configured rate
    port: int
    samples: np.ndarray


@dataclass(frozen=True)
class PrachExtractConfig:
    freq_offset_halfscs: int
    length_ra: int
    symbols: tuple[int, ...]


def _center_map(subcarriers: int, fft_size: int) -> np.ndarray:
    # Subcarrier k sits (k - K/2) subcarriers away from DC.
    return (np.arange(subcarriers) - subcarriers // 2) % fft_size


def _synthesize(spectrum: np.ndarray, sizes) -> np.ndarray:
    """iFFT + cyclic prefix per symbol; spectrum is (nsym, fft[, ports])."""
    fft_size = spectrum.shape[1]
    time = np.fft.ifft(spectrum, axis=1)
    parts = []
    for s, size in enumerate(sizes):
        cp = size - fft_size
        parts.append(time[s, fft_size - cp :])
        parts.append(time[s])
    return np.concatenate(parts, axis=0)


def _slot_spectra(block: SampleBlock, cfg: NumerologyConfig) -> tuple[SlotPoint, np.ndarray]:
    """CP removal + forward DFT of every symbol in a slot-aligned block."""
    point, symbol, sample = slot_point_from_sample_time(block.start, cfg)
    if symbol != 0 or sample != 0:
        raise LowPhyError(f"block start {block.start} is not on a slot boundary")
    sizes = cfg.slot_symbol_sizes(point.slot)
    if len(block.samples) != sum(sizes):
        raise LowPhyError(
            f"block of {len(block.samples)} samples, expected {sum(sizes)} for one slot"
        )
    useful = np.empty((14, cfg.fft_size), dtype=np.complex128)
    offset = 0
    for s, size in enumerate(sizes):
        cp = size - cfg.fft_size
        useful[s] = block.samples[offset + cp : offset + size]
        offset += size
    return point, np.fft.fft(useful, axis=1)


def modulate(grid: ResourceGrid, cfg: NumerologyConfig) -> list[SampleBlock]:
    """Frequency-domain slot grid to one time-domain block per port."""
    if grid.data.shape[:2] != (14, cfg.subcarriers):
        raise LowPhyError("grid dimensions do not match the numerology")
    spectrum = np.zeros((14, cfg.fft_size, grid.ports), dtype=np.complex128)
    spectrum[:, _center_map(cfg.subcarriers, cfg.fft_size), :] = grid.data
    samples = _synthesize(spectrum, cfg.slot_symbol_sizes(grid.slot.slot))
    start = grid.slot.system_slot() * cfg.samples_per_slot
    return [SampleBlock(start, p, np.ascontiguousarray(samples[:, p])) for p in range(grid.ports)]


def demodulate(block: SampleBlock, cfg: NumerologyConfig) -> ResourceGrid:
    """One slot-aligned sample block back to a single-port grid."""
    point, spectra = _slot_spectra(block, cfg)
    grid = ResourceGrid(point, cfg.nof_prb, ports=1)
    grid.data[:, :, 0] = spectra[:, _center_map(cfg.subcarriers, cfg.fft_size)]
    grid.written[:] = True
    return grid


def prach_band_start(freq_offset_halfscs: int) -> int:
    # Half-subcarrier offsets land between bins; round toward zero.
    return int(freq_offset_halfscs / 2)


def extract_prach(
    block: SampleBlock, cfg: NumerologyConfig, px: PrachExtractConfig
) -> np.ndarray:
    """Frequency-domain PRACH bins of the occasion symbols, (nsym, length_ra)."""
    start_sc = prach_band_start(px.freq_offset_halfscs)
    offsets = start_sc + np.arange(px.length_ra)
    if offsets[0] < -cfg.fft_size // 2 or offsets[-1] >= cfg.fft_size // 2:
        raise LowPhyError(
            f"PRACH band [{offsets[0]}, {offsets[-1]}] exceeds the FFT bandwidth"
        )
    _, spectra = _slot_spectra(block, cfg)
    return spectra[np.asarray(px.symbols)][:, offsets % cfg.fft_size]


def synthesize_tone(
    cfg: NumerologyConfig,
    slot: SlotPoint,
    sc_offset: int,
    amplitude: complex,
    symbols,
) -> np.ndarray:
    """Slot-length sample vector carrying one tone at an absolute subcarrier.

    ``sc_offset`` counts subcarriers from DC (signed); the tone occupies the
    given symbols with amplitude recoverable exactly by the forward DFT.
    """
    if not -cfg.fft_size // 2 <= sc_offset < cfg.fft_size // 2:
        raise LowPhyError(f"subcarrier offset {sc_offset} exceeds the FFT bandwidth")
    spectrum = np.zeros((14, cfg.fft_size), dtype=np.complex128)
    for s in symbols:
        spectrum[s, sc_offset % cfg.fft_size] = amplitude
    return _synthesize(spectrum, cfg.slot_symbol_sizes(slot.slot))
