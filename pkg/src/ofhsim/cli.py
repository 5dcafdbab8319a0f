"""Operator commands: scenario runner, capture analyzer, delay-profile tools.

Exit codes of ``run``: 0 clean, 1 configuration or parse problems, 2 when the
run saw drops or failed an integrity check.  The ``OFHSIM_OUT_DIR`` variable
redirects relative output paths.
"""

from __future__ import annotations

import os
import sys
from dataclasses import fields, replace

import click

from .delay_profile import (
    FronthaulDelay,
    PRESET_NAMES,
    derive_du_profile,
    preset,
    validate_pair,
    warnings_of,
)
from .ofh_codec import (
    MSG_TYPE_CPLANE,
    MSG_TYPE_UPLANE,
    OfhCodec,
    OfhCodecError,
    SeqKind,
    SequenceTracker,
    peek_msg_type,
)
from .report import build_rows, reconcile_failures, to_csv, total_drops
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from .sim_transport import DIR_TO_RU, CaptureError, read_capture, replay, run


def _out_path(path: str) -> str:
    base = os.environ.get("OFHSIM_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_profile_source(source: str) -> Scenario:
    """A preset name or a scenario file, reduced to the RU-side view."""
    if source in PRESET_NAMES:
        mode = "tdd" if source.startswith("tdd") else "fdd"
        return scenario_from_dict(
            {"duplex": {"mode": mode}, "ru_profile": source, "du_profile": source}
        )
    return load_scenario(source)


@click.group()
def main():
    """Deterministic split-7.2 fronthaul simulator."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Write the CSV report here.")
@click.option("--capture", "capture_path", default=None, help="Write the frame capture here.")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
def cmd_run(config_path, out, capture_path, seed):
    """Execute a scenario and report its counters."""
    try:
        scenario = load_scenario(config_path)
        if seed is not None:
            scenario = replace(scenario, seed=seed)
            scenario.validate()
    except ScenarioError as e:
        click.echo(f"configuration error: {e}", err=True)
        sys.exit(1)

    result = run(scenario, want_capture=capture_path is not None)
    csv_bytes = to_csv(build_rows(result))
    if out:
        with open(_out_path(out), "wb") as fh:
            fh.write(csv_bytes)
    else:
        click.echo(csv_bytes.decode(), nl=False)
    if capture_path:
        with open(_out_path(capture_path), "wb") as fh:
            fh.write(result.capture)
    for line in result.assertion_log:
        click.echo(line, err=True)
    failures = reconcile_failures(result)
    for f in failures:
        click.echo(f"reconciliation failure: {f}", err=True)
    if total_drops(result) > 0 or not result.integrity.ok() or failures:
        sys.exit(2)
    sys.exit(0)


@main.command("analyze")
@click.argument("capture_path", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--profile",
    "profile_source",
    required=True,
    help="Delay profile preset name or a scenario file.",
)
def cmd_analyze(capture_path, profile_source):
    """Classify a recorded capture against a delay profile."""
    try:
        scenario = _load_profile_source(profile_source)
        with open(capture_path, "rb") as fh:
            blob = fh.read()
        counters = replay(blob, scenario)
        records = read_capture(blob)
    except (ScenarioError, CaptureError, OSError) as e:
        click.echo(f"analyze error: {e}", err=True)
        sys.exit(1)

    click.echo("stream,on_time,early_dropped,late_dropped,no_context_dropped,decode_error")
    for stream in ("cplane_dl", "cplane_ul", "uplane_dl", "unknown"):
        c = getattr(counters, stream)
        click.echo(
            f"{stream},{c.on_time},{c.early_dropped},{c.late_dropped},"
            f"{c.no_context_dropped},{c.decode_error}"
        )
    codec = OfhCodec(scenario.numerology.nof_prb)
    tracker = SequenceTracker()
    gaps: dict = {}
    for rec in records:
        try:
            if peek_msg_type(rec.data) == MSG_TYPE_CPLANE:
                frame = codec.decode_cplane(rec.data)
            elif peek_msg_type(rec.data) == MSG_TYPE_UPLANE:
                frame = codec.decode_uplane(rec.data)
            else:
                continue
        except OfhCodecError:
            continue
        key = (frame.eaxc, frame.msg.app.data_direction, rec.direction)
        kind, gap = tracker.track(*key, frame.seq_id)
        stats = gaps.setdefault(key, [0, 0, 0])
        stats[0] += 1
        if kind == SeqKind.GAP:
            stats[1] += gap
        elif kind == SeqKind.DUPLICATE:
            stats[2] += 1
    click.echo("eaxc,direction,leg,frames,seq_gaps,duplicates")
    for (eaxc, direction, leg), (n, g, d) in sorted(
        gaps.items(), key=lambda kv: (kv[0][2], int(kv[0][1]), kv[0][0].ru_port)
    ):
        leg_name = "to_ru" if leg == DIR_TO_RU else "to_du"
        click.echo(
            f"du{eaxc.du_port}.bs{eaxc.band_sector}.cc{eaxc.cc}.ru{eaxc.ru_port},"
            f"{direction.name},{leg_name},{n},{g},{d}"
        )
    sys.exit(0)


@main.group("profile")
def cmd_profile():
    """Inspect, derive and validate delay profiles."""


def _print_profile(profile):
    for f in fields(profile):
        click.echo(f"{f.name}\t{getattr(profile, f.name)}")


@cmd_profile.command("show")
@click.argument("name")
@click.option("--side", type=click.Choice(["ru", "du", "both"]), default="both")
def profile_show(name, side):
    """Print the published values of a preset."""
    try:
        if side in ("ru", "both"):
            click.echo(f"[{name} ru]")
            _print_profile(preset(name, "ru"))
        if side in ("du", "both"):
            click.echo(f"[{name} du]")
            _print_profile(preset(name, "du"))
    except KeyError as e:
        click.echo(str(e), err=True)
        sys.exit(1)


@cmd_profile.command("derive")
@click.argument("name")
@click.option("--t12-min", default=0, type=int)
@click.option("--t12-max", default=0, type=int)
@click.option("--t34-min", default=0, type=int)
@click.option("--t34-max", default=0, type=int)
def profile_derive(name, t12_min, t12_max, t34_min, t34_max):
    """DU profile implied by an RU preset and a fronthaul delay spread."""
    try:
        ru = preset(name, "ru")
        fh = FronthaulDelay(t12_min, t12_max, t34_min, t34_max)
        _print_profile(derive_du_profile(ru, fh))
    except (KeyError, ValueError) as e:
        click.echo(str(e), err=True)
        sys.exit(1)


@cmd_profile.command("validate")
@click.argument("ru_name")
@click.argument("du_name")
@click.option("--t12-min", default=0, type=int)
@click.option("--t12-max", default=0, type=int)
@click.option("--t34-min", default=0, type=int)
@click.option("--t34-max", default=0, type=int)
def profile_validate(ru_name, du_name, t12_min, t12_max, t34_min, t34_max):
    """Audit an RU/DU profile pair for window consistency."""
    try:
        ru = preset(ru_name, "ru")
        du = preset(du_name, "du")
        fh = FronthaulDelay(t12_min, t12_max, t34_min, t34_max)
    except (KeyError, ValueError) as e:
        click.echo(str(e), err=True)
        sys.exit(1)
    findings = validate_pair(ru, du, fh)
    for f in findings:
        if f.ok:
            click.echo(f"ok\t{f.bound}")
        else:
            click.echo(f"warning\t{f.bound}\toff by {f.delta_us} us: {f.detail}")
    click.echo(f"{len(warnings_of(findings))} warning(s)")


if __name__ == "__main__":
    main()
