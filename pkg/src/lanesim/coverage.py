"""Fault-coverage levels and time-at-risk accounting.

Coverage is reported per application and is the weakest-link count over its
tasks: an application is only as replicated as its least replicated task.
Functional coverage counts active copies per task; zonal coverage counts
the distinct lanes those active copies occupy (two copies sharing a lane
survive a processor loss but not a lane loss, so zonal never exceeds
functional). Copies being policed or restabilizing have not been readmitted
and count toward neither. Peripheral coverage counts healthy sensor input
channels, which is why a sensor fault degrades it without touching
functional coverage.

Time at risk is the per-application sum of the detection-to-readmission
windows; while such a window is open the application runs one level below
strength, so a second fault inside it is flagged as a risk hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .reconfig import Health, Outcome, ReconfigRecord, ReplicaGroup


class CoverageLevel(IntEnum):
    NONE = 0
    SIMPLEX = 1
    DUPLEX = 2
    TRIPLEX = 3
    QUADRUPLEX = 4

    @property
    def label(self) -> str:
        return self.name.lower()


def _level(count: int) -> CoverageLevel:
    return CoverageLevel(min(count, 4))


def functional_coverage(group: ReplicaGroup) -> CoverageLevel:
    """Minimum over the application's tasks of its active copy count."""
    counts = []
    for task_id in group.task_ids:
        counts.append(sum(
            1 for c in group.copies
            if c.task_id == task_id and c.health is Health.ACTIVE
        ))
    return _level(min(counts)) if counts else CoverageLevel.NONE


def zonal_coverage(group: ReplicaGroup) -> CoverageLevel:
    """Minimum over tasks of distinct lanes holding an active copy."""
    counts = []
    for task_id in group.task_ids:
        lanes = {
            c.lane for c in group.copies
            if c.task_id == task_id and c.health is Health.ACTIVE
        }
        counts.append(len(lanes))
    return _level(min(counts)) if counts else CoverageLevel.NONE


def peripheral_coverage(healthy_channels: int) -> CoverageLevel:
    return _level(healthy_channels)


@dataclass(frozen=True)
class CoverageSample:
    """One step in the piecewise-constant coverage timeline."""

    time_us: int
    app_id: int
    functional: CoverageLevel
    zonal: CoverageLevel
    peripheral: CoverageLevel


@dataclass
class RiskReport:
    total_us: int = 0
    intervals: list = field(default_factory=list)          # (start_us, end_us, closed)
    secondary_hits: list = field(default_factory=list)     # (hit_record_id, at_us)


def _interval(record: ReconfigRecord, horizon_us: int):
    if record.t_f_us is None:
        return None
    if record.outcome is Outcome.READMITTED and record.t_a_us is not None:
        return (record.t_f_us, record.t_a_us, True)
    # Degraded or abandoned recoveries never restore strength: the window
    # stays open and is clipped at the horizon.
    return (record.t_f_us, horizon_us, False)


def time_at_risk(records: list[ReconfigRecord], horizon_us: int) -> dict[int, RiskReport]:
    """Per-application at-risk windows, totals, and secondary-fault hits."""
    out: dict[int, RiskReport] = {}
    per_app: dict[int, list] = {}
    for rec in records:
        per_app.setdefault(rec.app_id, []).append(rec)
    for app_id, recs in sorted(per_app.items()):
        report = RiskReport()
        spans = []
        for rec in recs:
            span = _interval(rec, horizon_us)
            if span is None:
                continue
            spans.append((rec, span))
            report.intervals.append(span)
            report.total_us += span[1] - span[0]
        for rec, _ in spans:
            for other, (start, end, _closed) in spans:
                if other is rec:
                    continue
                if start < rec.t_f_us < end:
                    report.secondary_hits.append((rec.record_id, rec.t_f_us))
                    break
        out[app_id] = report
    return out
