"""Run reports: counter rows, reconciliation and the CSV surface.

The CSV schema is one row per counter with columns (entity, stream, counter,
value) plus a mandatory header; it is the machine-readable output of a run.
"""

from __future__ import annotations

import csv
import io

from .ru_engine import StreamCounters
from .sim_transport import RunResult

RU_STREAMS = ("cplane_dl", "cplane_ul", "uplane_dl", "unknown")
_STREAM_FIELDS = ("on_time", "early_dropped", "late_dropped", "no_context_dropped", "decode_error")


def build_rows(result: RunResult) -> list[tuple[str, str, str, str]]:
    rows: list[tuple[str, str, str, str]] = []
    ru = result.ru_counters
    for stream in RU_STREAMS:
        counters: StreamCounters = getattr(ru, stream)
        for name in _STREAM_FIELDS:
            rows.append(("ru", stream, name, str(getattr(counters, name))))
        total = counters.total()
        pct = 100.0 if total == 0 else 100.0 * counters.on_time / total
        rows.append(("ru", stream, "on_time_pct", f"{pct:.3f}"))
    rows.append(("ru", "all", "dl_slots_modulated", str(ru.dl_slots_modulated)))
    rows.append(("ru", "all", "ul_slots_emitted", str(ru.ul_slots_emitted)))
    rows.append(("ru", "all", "prach_occasions_emitted", str(ru.prach_occasions_emitted)))
    du = result.du_counters
    for name in (
        "ul_on_time",
        "ul_early",
        "ul_late",
        "ul_seq_gaps",
        "ul_duplicates",
        "ul_decode_errors",
        "dl_slots_scheduled",
    ):
        rows.append(("du", "uplane_ul" if name.startswith("ul") else "all", name, str(getattr(du, name))))
    du_total = du.ul_on_time + du.ul_early + du.ul_late
    pct = 100.0 if du_total == 0 else 100.0 * du.ul_on_time / du_total
    rows.append(("du", "uplane_ul", "on_time_pct", f"{pct:.3f}"))
    rows.append(("du", "lambda", "count", str(du.lambda_count)))
    rows.append(("du", "lambda", "min_us", str(du.lambda_min if du.lambda_min is not None else 0)))
    rows.append(("du", "lambda", "mean_us", f"{du.lambda_mean:.3f}"))
    rows.append(("du", "lambda", "max_us", str(du.lambda_max if du.lambda_max is not None else 0)))
    rows.append(("sim", "link", "frames_sent_to_ru", str(result.frames_sent_to_ru)))
    rows.append(("sim", "link", "frames_dropped_to_ru", str(result.frames_dropped_to_ru)))
    rows.append(("sim", "link", "frames_sent_to_du", str(result.frames_sent_to_du)))
    rows.append(("sim", "link", "frames_dropped_to_du", str(result.frames_dropped_to_du)))
    integ = result.integrity
    rows.append(("sim", "integrity", "dl_slots_checked", str(integ.dl_slots_checked)))
    rows.append(("sim", "integrity", "dl_slots_ok", str(integ.dl_slots_ok)))
    rows.append(("sim", "integrity", "ul_slots_checked", str(integ.ul_slots_checked)))
    rows.append(("sim", "integrity", "ul_slots_ok", str(integ.ul_slots_ok)))
    rows.append(("sim", "integrity", "ul_missing_fragments", str(integ.ul_missing_fragments)))
    rows.append(("sim", "integrity", "ta3_violations", str(integ.ta3_violations)))
    rows.append(("sim", "integrity", "du_emission_violations", str(integ.du_emission_violations)))
    rows.append(("sim", "integrity", "dl_max_err", f"{integ.dl_max_err:.9e}"))
    rows.append(("sim", "integrity", "ul_max_err", f"{integ.ul_max_err:.9e}"))
    rows.append(("sim", "integrity", "ok", "1" if integ.ok() else "0"))
    warning_count = sum(1 for f in result.findings if not f.ok)
    rows.append(("sim", "profile", "warnings", str(warning_count)))
    rows.append(("sim", "reconcile", "ok", "1" if not reconcile_failures(result) else "0"))
    return rows


def to_csv(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("entity", "stream", "counter", "value"))
    writer.writerows(rows)
    return buf.getvalue().encode()


def reconcile_failures(result: RunResult) -> list[str]:
    """Conservation checks: every delivered frame lands in exactly one counter."""
    failures = []
    ru = result.ru_counters
    delivered_ru = result.frames_sent_to_ru - result.frames_dropped_to_ru
    classified_ru = sum(getattr(ru, s).total() for s in RU_STREAMS)
    if delivered_ru != classified_ru:
        failures.append(f"ru classified {classified_ru} of {delivered_ru} delivered frames")
    du = result.du_counters
    delivered_du = result.frames_sent_to_du - result.frames_dropped_to_du
    classified_du = (
        du.ul_on_time + du.ul_early + du.ul_late + du.ul_duplicates + du.ul_decode_errors
    )
    if delivered_du != classified_du:
        failures.append(f"du classified {classified_du} of {delivered_du} delivered frames")
    return failures


def total_drops(result: RunResult) -> int:
    ru = result.ru_counters
    dropped = result.frames_dropped_to_ru + result.frames_dropped_to_du
    for stream in RU_STREAMS:
        c = getattr(ru, stream)
        dropped += c.early_dropped + c.late_dropped + c.no_context_dropped + c.decode_error
    du = result.du_counters
    dropped += du.ul_early + du.ul_late + du.ul_duplicates + du.ul_decode_errors
    return dropped
