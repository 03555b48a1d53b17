"""Fault model, cross-monitoring voters, and detection classification.

Detection has two mechanisms. Built-in test (BIT) is local health
monitoring: it catches permanent and transient hardware faults on the
processor it runs on, and is structurally blind to Byzantine behaviour. The
cross-monitor compares replicated output values across lanes every voting
round; silence and wrong values both show up there.

Two voters are provided:

``cross_monitor``
    One value per lane. A lane is flagged when its value sits more than the
    tolerance away from the consensus of the agreeing majority among the
    other lanes (median or mean per config). Two lanes that disagree cannot
    out-vote each other, and three-plus mutually divergent values have no
    majority; both cases come back ambiguous rather than flagged.

``exchange_vote``
    The full received-values matrix (what each receiver claims every sender
    sent it). Senders are flagged for equivocation (no majority-coherent
    story about what they sent) or for a majority-agreed value outside
    tolerance. A single Byzantine lane needs at least four lanes to be
    identified uniquely: with three, its asymmetric values and lying relays
    leave no healthy majority and the outcome is ambiguous.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .model import TimingConfig


class FaultKind(Enum):
    TRANSIENT = "transient"
    PERMANENT = "permanent"
    BYZANTINE = "byzantine"


class TargetKind(Enum):
    LANE = "lane"
    PROCESSOR = "processor"
    TASK = "task"
    SENSOR = "sensor"


@dataclass(frozen=True)
class FaultTarget:
    kind: TargetKind
    lane: int | None = None
    proc: int | None = None
    app: int | None = None
    task: int | None = None

    def hits_processor(self, lane: int, proc: int) -> bool:
        """Does this target silence the whole (lane, proc) element?"""
        if self.kind is TargetKind.LANE:
            return self.lane == lane
        if self.kind is TargetKind.PROCESSOR:
            return (self.lane, self.proc) == (lane, proc)
        return False

    def hits_copy(self, lane: int, proc: int, app: int, task: int) -> bool:
        if self.kind is TargetKind.TASK:
            return (self.lane, self.proc, self.app, self.task) == (lane, proc, app, task)
        return self.hits_processor(lane, proc)


@dataclass(frozen=True)
class FaultSpec:
    fault_id: int
    at_us: int
    kind: FaultKind
    target: FaultTarget
    duration_us: int | None = None   # transient only
    value_skew: float = 0.0          # byzantine / sensor value corruption
    per_receiver: bool = False       # byzantine: different value per receiver
    bit_detectable: bool = True

    def active_at(self, t_us: int) -> bool:
        if t_us < self.at_us:
            return False
        if self.kind is FaultKind.TRANSIENT and self.duration_us is not None:
            return t_us < self.at_us + self.duration_us
        return True

    @property
    def clears_at_us(self) -> int | None:
        if self.kind is FaultKind.TRANSIENT and self.duration_us is not None:
            return self.at_us + self.duration_us
        return None


class Granularity(Enum):
    LANE = "lane"
    PROCESSOR = "processor"
    TASK = "task"
    SENSOR = "sensor"


class Mechanism(Enum):
    CROSS_MONITOR = "cross_monitor"
    BIT = "bit"


@dataclass(frozen=True)
class Detection:
    detected_at_us: int
    granularity: Granularity
    mechanism: Mechanism
    lane: int | None = None
    proc: int | None = None
    app: int | None = None
    task: int | None = None


class Consensus(Enum):
    MEDIAN_OF_OTHERS = "median_of_others"
    MEAN_OF_OTHERS = "mean_of_others"


@dataclass(frozen=True)
class VoterConfig:
    tolerance: float = 0.5
    consensus: Consensus = Consensus.MEDIAN_OF_OTHERS


class InsufficientLanes(Exception):
    """Cross-monitoring needs at least two values to compare."""


@dataclass(frozen=True)
class VoteOutcome:
    flagged: frozenset
    ambiguous: bool = False


def _consensus_value(values, cfg: VoterConfig) -> float:
    if cfg.consensus is Consensus.MEAN_OF_OTHERS:
        return sum(values) / len(values)
    return statistics.median(values)


def _largest_clique(items: list, tol: float):
    """Largest pairwise-agreeing subset; deterministic on ties (first anchor).

    items: list of (key, value) with comparable float values.
    """
    best = []
    for _, anchor in items:
        clique = [(k, v) for k, v in items if abs(v - anchor) <= tol]
        # pairwise coherence, not just anchor distance
        vals = [v for _, v in clique]
        if max(vals) - min(vals) <= tol and len(clique) > len(best):
            best = clique
    return best


def cross_monitor(values: Mapping[int, float], cfg: VoterConfig) -> VoteOutcome:
    """Flag lanes whose value deviates from the agreeing majority of the rest."""
    if len(values) < 2:
        raise InsufficientLanes(f"need at least 2 lane values, got {len(values)}")
    items = sorted(values.items())
    tol = cfg.tolerance

    if len(items) == 2:
        (a, va), (b, vb) = items
        if abs(va - vb) <= tol:
            return VoteOutcome(frozenset())
        return VoteOutcome(frozenset({a, b}), ambiguous=True)

    clique = _largest_clique(items, tol)
    if 2 * len(clique) <= len(items):
        return VoteOutcome(frozenset(k for k, _ in items), ambiguous=True)
    consensus = _consensus_value([v for _, v in clique], cfg)
    flagged = frozenset(k for k, v in items if abs(v - consensus) > tol)
    return VoteOutcome(flagged)


def can_identify_byzantine(lane_count: int) -> bool:
    """A single Byzantine lane is uniquely identifiable only with >= 4 lanes."""
    return lane_count >= 4


_EQUIVOCAL = object()
_SILENT = object()


@dataclass(frozen=True)
class ExchangeOutcome:
    silent: frozenset
    flagged: frozenset
    ambiguous: bool = False

    @property
    def implicated(self) -> frozenset:
        return self.silent | self.flagged


def exchange_vote(received: Mapping, cfg: VoterConfig) -> ExchangeOutcome:
    """Vote over the full received-values matrix.

    ``received[r][s]`` is the value receiver r claims sender s delivered
    (None for nothing received). Receivers are the participants still
    executing; senders may include silent ones. Silence established by a
    majority of reports is a confident implication on its own; value
    disagreements fall back to majority rule and come back ambiguous when
    the coherent lanes cannot out-vote the flagged ones.
    """
    receivers = sorted(received)
    senders = sorted({s for r in receivers for s in received[r]})
    if len(senders) < 2:
        raise InsufficientLanes(f"need at least 2 participants, got {len(senders)}")
    tol = cfg.tolerance

    established: dict = {}
    for s in senders:
        reports = [(r, received[r][s]) for r in receivers if r != s and s in received[r]]
        if not reports:
            # s is the only receiver left; its own claim is all there is.
            established[s] = received[s][s] if s in received and s in received[s] else _EQUIVOCAL
            continue
        none_cluster = [(r, v) for r, v in reports if v is None]
        value_cluster = _largest_clique([(r, v) for r, v in reports if v is not None], tol)
        cluster = none_cluster if len(none_cluster) >= len(value_cluster) else value_cluster
        if 2 * len(cluster) > len(reports):
            if cluster and cluster[0][1] is None:
                established[s] = _SILENT
            else:
                established[s] = statistics.median(v for _, v in cluster)
        else:
            established[s] = _EQUIVOCAL

    silent = frozenset(s for s, e in established.items() if e is _SILENT)
    present = [s for s in senders if s not in silent]
    numeric = {s: established[s] for s in present if established[s] is not _EQUIVOCAL}

    if not numeric:
        return ExchangeOutcome(silent, frozenset(present), ambiguous=bool(present))

    if len(present) == 2 and len(numeric) == 2:
        a, b = sorted(numeric)
        if abs(numeric[a] - numeric[b]) > tol:
            return ExchangeOutcome(silent, frozenset(present), ambiguous=True)

    consensus = statistics.median(numeric.values())
    flagged = {s for s in present
               if established[s] is _EQUIVOCAL or abs(numeric[s] - consensus) > tol}
    unflagged = [s for s in present if s not in flagged]
    if flagged and len(unflagged) <= len(flagged):
        return ExchangeOutcome(silent, frozenset(flagged), ambiguous=True)
    return ExchangeOutcome(silent, frozenset(flagged))


def bit_detects(fault: FaultSpec, lane: int, proc: int,
                hosted_tasks, now_us: int) -> bool:
    """Would this processor's built-in test catch the fault right now?

    BIT sees local permanent/transient hardware faults on the processor or
    on a task copy it hosts. A lane-level fault takes the monitor down with
    everything else, and Byzantine behaviour passes every local check.
    """
    if not fault.bit_detectable or fault.kind is FaultKind.BYZANTINE:
        return False
    if not fault.active_at(now_us):
        return False
    t = fault.target
    if t.kind is TargetKind.PROCESSOR:
        return (t.lane, t.proc) == (lane, proc)
    if t.kind is TargetKind.TASK:
        return (t.lane, t.proc) == (lane, proc) and (t.app, t.task) in hosted_tasks
    return False


@dataclass(frozen=True)
class ShutdownDirective:
    """What a detection implies should be removed from service."""

    granularity: Granularity
    lane: int
    proc: int | None = None
    app: int | None = None
    task: int | None = None

    def sort_key(self):
        order = {Granularity.LANE: 0, Granularity.PROCESSOR: 1,
                 Granularity.TASK: 2, Granularity.SENSOR: 3}
        return (order[self.granularity], self.lane,
                self.proc or -1, self.app or -1, self.task or -1)


def classify(implicated, hosted) -> list[ShutdownDirective]:
    """Fold implicated copies into lane-, processor- or task-level directives.

    ``implicated`` is a set of (lane, proc, app, task) copies that deviated
    or fell silent this round; ``hosted`` maps (lane, proc) to the set of
    (app, task) copies the processor currently hosts. A lane directive needs
    every hosting processor of the lane implicated in full, and at least two
    of them (voting cannot implicate an empty spare, and single-processor
    evidence only supports processor granularity). A processor directive
    needs all of its hosted copies implicated; anything less is per-task.
    """
    by_proc: dict = {}
    for (lane, proc, app, task) in implicated:
        by_proc.setdefault((lane, proc), set()).add((app, task))

    directives: list[ShutdownDirective] = []
    consumed = set()

    full_procs = {
        key for key, tasks in by_proc.items()
        if hosted.get(key) and tasks >= hosted[key]
    }
    lanes = {lane for lane, _ in by_proc}
    for lane in sorted(lanes):
        hosting = {key for key in hosted if key[0] == lane and hosted[key]}
        lane_full = {key for key in full_procs if key[0] == lane}
        if hosting and lane_full >= hosting and len(lane_full) >= 2:
            directives.append(ShutdownDirective(Granularity.LANE, lane))
            consumed.update(key for key in by_proc if key[0] == lane)

    for key in sorted(by_proc):
        if key in consumed:
            continue
        lane, proc = key
        if key in full_procs:
            directives.append(ShutdownDirective(Granularity.PROCESSOR, lane, proc))
        else:
            for app, task in sorted(by_proc[key]):
                directives.append(
                    ShutdownDirective(Granularity.TASK, lane, proc, app, task))
    return sorted(directives, key=ShutdownDirective.sort_key)


def police_matches(value: float, consensus: float, cfg: TimingConfig) -> bool:
    """Is a policed copy's output within tolerance of the active consensus?"""
    return abs(value - consensus) <= cfg.tolerance
