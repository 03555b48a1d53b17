"""Deterministic discrete-event engine for replicated lane sets.

The engine advances an integer microsecond clock over a heap of typed
events. Ties at one instant resolve by a fixed kind order (activations
before completions before releases before votes before the recovery
machinery), then by payload key, then by insertion order, so a scenario
replays byte-identically on every run.

Processor time is accounted lazily: the running job is charged whenever
an event touches its processor, and completion events are validated
against a per-processor generation counter so a preempted or killed
job's stale completion is simply dropped.

The recovery pipeline is driven end to end by events: a vote round (or a
built-in test) implicates copies, one classification per instant folds
the evidence into shutdown directives, selection plans spare placements
the same instant, the bus serializes code install and state snapshot
transfers, and policing at later vote rounds readmits the new copies.
"""

from __future__ import annotations

import heapq
import itertools
import random
import statistics
from dataclasses import dataclass, field
from enum import Enum

from . import coverage as cov
from .fault import (FaultKind, Granularity, ShutdownDirective, TargetKind,
                    bit_detects, classify, cross_monitor, exchange_vote,
                    police_matches)
from .model import (Architecture, ApplicationSpec, InvalidModel, StateStrategy,
                    SystemModel, TaskSpec, Violation, initial_allocation)
from .reconfig import (Copy, FailedTask, Health, Outcome, PoliceCounter,
                       ReconfigRecord, ReplicaGroup, SpareCandidate,
                       select_spare)
from .timing import (BusState, ProcessorState, available_transfer_bandwidth,
                     transfer_time)

US_PER_MS = 1000


class ScenarioInvalid(InvalidModel):
    """The scenario parsed but cannot be brought into initial service."""


class InsufficientInstances(Exception):
    """Jitter needs at least two observed instances of the selection."""


class EventKind(Enum):
    # Declaration order is the tie-break rank at one instant.
    FAULT_ACTIVATE = "FaultActivate"
    FAULT_CLEAR = "FaultClear"
    TASK_COMPLETE = "TaskComplete"
    DEADLINE_CHECK = "DeadlineCheck"
    BIT_CHECK = "BITCheck"
    TASK_RELEASE = "TaskRelease"
    VOTE_ROUND = "VoteRound"
    CLASSIFY = "Classify"
    SELECTION = "SelectionDone"
    INSTALL_DONE = "InstallDone"
    STATE_TRANSFER_DONE = "StateTransferDone"
    PILOT_APPROVAL = "PilotApproval"
    READMIT = "Readmit"


_RANK = {kind: rank for rank, kind in enumerate(EventKind)}


@dataclass(frozen=True)
class TraceEvent:
    """One row of the run trace; None fields render as '-'."""

    time_us: int
    kind: str
    lane: int | None = None
    proc: int | None = None
    app: int | None = None
    task: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class DeadlineMissRecord:
    time_us: int
    lane: int
    proc: int
    app: int
    task: int
    release_us: int


@dataclass(frozen=True)
class CompletionRecord:
    finish_us: int
    start_us: int
    release_us: int
    lane: int
    proc: int
    app: int
    task: int


@dataclass
class SimResult:
    seed: int
    horizon_us: int
    records: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    risk: dict = field(default_factory=dict)
    deadline_misses: list = field(default_factory=list)
    completions: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    final_coverage: dict = field(default_factory=dict)

    def outcome_counts(self) -> dict:
        counts = {o: 0 for o in Outcome}
        for rec in self.records:
            counts[rec.outcome] += 1
        return counts

    def summary(self) -> str:
        counts = self.outcome_counts()
        return (f"{counts[Outcome.READMITTED]} readmitted, "
                f"{counts[Outcome.DEGRADED_DUPLEX]} degraded, "
                f"{counts[Outcome.ABANDONED]} abandoned; "
                f"{len(self.deadline_misses)} deadline misses; "
                f"{len(self.trace)} trace events over "
                f"{self.horizon_us / US_PER_MS:g} ms")


@dataclass
class _Job:
    rt: "_CopyRt"
    release_us: int
    deadline_us: int
    remaining_us: int
    start_us: int | None = None


class _Proc:
    """Runtime face of one (lane, processor) slot."""

    def __init__(self, lane: int, proc: int, role):
        self.lane = lane
        self.proc = proc
        self.role = role
        self.failed = False     # halted by an active fault
        self.dead = False       # permanently withdrawn from service
        self.admitted = ProcessorState()
        self.prios: dict = {}
        self.jobs: dict = {}    # (app_id, task_id) -> _Job
        self.replay: dict = {}  # copy_id -> [_CopyRt, remaining_us]
        self.running = None     # ("job", key) | ("replay", copy_id)
        self.since = 0
        self.gen = 0

    @property
    def key(self):
        return (self.lane, self.proc)

    def refresh_priorities(self):
        self.prios = self.admitted.priorities()


@dataclass
class _CopyRt:
    """Engine-side state of one task copy."""

    copy: Copy
    spec: TaskSpec
    app: ApplicationSpec
    origin_us: int
    completed_ever: bool = False
    replay_left_us: int = 0
    converge_left: int = 0
    police: PoliceCounter | None = None
    eligible_us: int | None = None
    episode: "_Episode | None" = None
    restabilizing: bool = False

    @property
    def key(self):
        return (self.copy.app_id, self.copy.task_id)

    @property
    def place(self):
        return (self.copy.lane, self.copy.proc)


@dataclass
class _Episode:
    """An in-flight recovery, folded into a ReconfigRecord when it closes."""

    record_id: int
    app_id: int
    strategy: StateStrategy
    failed_copy_ids: tuple
    origin: str                       # "reconfig" | "restabilize"
    cause_ids: tuple = ()
    t_f: int | None = None
    t_r: int | None = None
    t_i: int | None = None
    t_s: int | None = None
    t_e: int | None = None
    t_a: int | None = None
    placements: dict = field(default_factory=dict)
    degraded: list = field(default_factory=list)
    copies: list = field(default_factory=list)    # _CopyRt awaiting readmission
    lost: list = field(default_factory=list)      # _CopyRt withdrawn at t_f
    outcome: Outcome | None = None
    closed: bool = False

    def to_record(self) -> ReconfigRecord:
        return ReconfigRecord(
            record_id=self.record_id,
            app_id=self.app_id,
            failed_copy_ids=self.failed_copy_ids,
            strategy=self.strategy,
            outcome=self.outcome if self.outcome is not None else Outcome.ABANDONED,
            t_f_us=self.t_f, t_r_us=self.t_r, t_i_us=self.t_i,
            t_s_us=self.t_s, t_e_us=self.t_e, t_a_us=self.t_a,
            placements=dict(self.placements),
            degraded_tasks=tuple(sorted(self.degraded)),
        )


class Engine:
    def __init__(self, scenario):
        self.sc = scenario
        self.model: SystemModel = scenario.model
        self.cfg = self.model.timing
        self.voter = scenario.voter
        self.settings = scenario.settings
        self.policies = scenario.policies
        self.horizon = self.settings.horizon_us
        self.rng = random.Random(self.settings.seed)

        self.now = 0
        self._heap: list = []
        self._seq = itertools.count()

        self.trace: list = []
        self.records: list = []
        self.samples: list = []
        self.misses: list = []
        self.completions: list = []
        self.counters: dict = {
            "releases": 0, "completions": 0, "deadline_misses": 0,
            "vote_rounds": 0, "detections": 0, "shutdowns": 0,
            "transfers": 0, "readmissions": 0,
        }

        self.procs: dict = {}
        self.groups: dict = {}
        self.copies: dict = {}          # copy_id -> _CopyRt
        self.channels: dict = {}        # app_id -> {lane: healthy}
        self.bus = BusState(self.model.bus.max_load)

        self._copy_ids = itertools.count(1)
        self._record_ids = itertools.count(1)
        self._episodes: list = []
        self._pending_implicated: set = set()
        self._classify_at: int | None = None
        self._pending_selection: list = []
        self._selection_at: int | None = None
        self._bus_queue: list = []      # [episode, phase] FIFO
        self._bus_active = None
        self._stall_noted: set = set()
        self._bit_detected: set = set()
        self._last_cov: dict = {}

        self._init_topology()

    # -- setup ---------------------------------------------------------------

    def _init_topology(self):
        for lane in self.model.lanes:
            for p in lane.processors:
                self.procs[(lane.lane_id, p.proc_id)] = _Proc(
                    lane.lane_id, p.proc_id, p.role)

        homes = initial_allocation(self.model)
        for app in sorted(self.model.applications, key=lambda a: a.app_id):
            group = ReplicaGroup(app.app_id,
                                 tuple(sorted(t.task_id for t in app.tasks)))
            self.groups[app.app_id] = group
            self.channels[app.app_id] = {l: True for l in self.model.lane_ids}
            for task in sorted(app.tasks, key=lambda t: t.task_id):
                for lane_id in sorted(self.model.lane_ids):
                    lane, proc = homes[(app.app_id, task.task_id, lane_id)]
                    copy = Copy(next(self._copy_ids), app.app_id,
                                task.task_id, lane, proc)
                    group.copies.append(copy)
                    rt = _CopyRt(copy, task, app, origin_us=0)
                    self.copies[copy.copy_id] = rt
                    pr = self.procs[(lane, proc)]
                    pr.admitted = pr.admitted.with_task(
                        rt.key, task.wcet_us, task.period_us, task.deadline_us)
                    self.bus = self.bus.with_demand(
                        ("copy", app.app_id, task.task_id, lane, proc),
                        task.message_demand)

        violations = []
        if self.settings.enforce_admission:
            for pr in self.procs.values():
                if pr.admitted.utilization > self.cfg.effective_bound:
                    violations.append(Violation(
                        "AdmissionExceeded",
                        f"lane {pr.lane} processor {pr.proc} starts at utilization "
                        f"{float(pr.admitted.utilization):.4f} over the bound "
                        f"{float(self.cfg.effective_bound):.2f}"))
        if self.bus.current_load > self.bus.max_load:
            violations.append(Violation(
                "BusOverload",
                f"baseline message load {float(self.bus.current_load):.4f} exceeds "
                f"bus capacity {float(self.bus.max_load):.4f}"))
        if violations:
            raise ScenarioInvalid(violations)

        for pr in self.procs.values():
            pr.refresh_priorities()

    def _prime_events(self):
        for rt in self.copies.values():
            self._push(0, EventKind.TASK_RELEASE, rt.copy.copy_id,
                       {"copy": rt.copy.copy_id})
        for app in self.model.applications:
            period = app.shortest_period_us
            if period <= self.horizon:
                self._push(period, EventKind.VOTE_ROUND, app.app_id,
                           {"app": app.app_id, "period": period})
        bitp = self.settings.bit_period_us
        for key in sorted(self.procs):
            if bitp <= self.horizon:
                self._push(bitp, EventKind.BIT_CHECK, key, {"proc": key})
        for f in sorted(self.sc.faults, key=lambda f: (f.at_us, f.fault_id)):
            self._push(f.at_us, EventKind.FAULT_ACTIVATE, f.fault_id,
                       {"fault": f})
            clears = f.clears_at_us
            if clears is not None and clears <= self.horizon:
                self._push(clears, EventKind.FAULT_CLEAR, f.fault_id,
                           {"fault": f})
        if self.policies.pilot_gate:
            for i, a in enumerate(self.policies.approvals):
                if a.at_us <= self.horizon:
                    self._push(a.at_us, EventKind.PILOT_APPROVAL, i,
                               {"approval": a})
        for app_id in self.groups:
            self._sample(app_id)

    # -- event plumbing --------------------------------------------------------

    def _push(self, at_us: int, kind: EventKind, key, data: dict):
        heapq.heappush(self._heap,
                       (at_us, _RANK[kind], _sortable(key), next(self._seq),
                        kind, data))

    def _row(self, kind: str, lane=None, proc=None, app=None, task=None,
             detail: str = ""):
        self.trace.append(TraceEvent(self.now, kind, lane, proc, app, task, detail))

    def run(self) -> SimResult:
        self._prime_events()
        handlers = {
            EventKind.FAULT_ACTIVATE: self._on_fault_activate,
            EventKind.FAULT_CLEAR: self._on_fault_clear,
            EventKind.TASK_COMPLETE: self._on_complete,
            EventKind.DEADLINE_CHECK: self._on_deadline_check,
            EventKind.BIT_CHECK: self._on_bit_check,
            EventKind.TASK_RELEASE: self._on_release,
            EventKind.VOTE_ROUND: self._on_vote_round,
            EventKind.CLASSIFY: self._on_classify,
            EventKind.SELECTION: self._on_selection,
            EventKind.INSTALL_DONE: self._on_install_done,
            EventKind.STATE_TRANSFER_DONE: self._on_state_done,
            EventKind.PILOT_APPROVAL: self._on_pilot_approval,
            EventKind.READMIT: self._on_readmit,
        }
        while self._heap and self._heap[0][0] <= self.horizon:
            at, _rank, _key, _seq, kind, data = heapq.heappop(self._heap)
            self.now = at
            handlers[kind](data)
        self.now = self.horizon
        return self._wrap_up()

    def _wrap_up(self) -> SimResult:
        for ep in self._episodes:
            if not ep.closed:
                ep.outcome = Outcome.ABANDONED
                self._close_episode(ep, at_horizon=True)
        self.records.sort(key=lambda r: r.record_id)
        result = SimResult(
            seed=self.settings.seed,
            horizon_us=self.horizon,
            records=self.records,
            trace=self.trace,
            samples=self.samples,
            risk=cov.time_at_risk(self.records, self.horizon),
            deadline_misses=self.misses,
            completions=self.completions,
            counters=dict(self.counters),
        )
        for app_id, group in sorted(self.groups.items()):
            result.final_coverage[app_id] = (
                cov.functional_coverage(group),
                cov.zonal_coverage(group),
                cov.peripheral_coverage(self._healthy_channels(app_id)),
            )
        return result

    # -- processor accounting --------------------------------------------------

    def _touch(self, pr: _Proc):
        if pr.running is None:
            pr.since = self.now
            return
        ran = self.now - pr.since
        what, key = pr.running
        if what == "job":
            job = pr.jobs.get(key)
            if job is not None:
                # the first dispatch only counts once it consumed time; a
                # zero-width dispatch preempted at the same instant did not
                # actually start the job
                if ran > 0 and job.start_us is None:
                    job.start_us = pr.since
                job.remaining_us -= ran
        else:
            entry = pr.replay.get(key)
            if entry is not None:
                entry[1] -= ran
        pr.since = self.now

    def _dispatch(self, pr: _Proc):
        """Pick the next thing to run; assumes _touch already ran at now."""
        chosen = None
        if not pr.failed and not pr.dead:
            ready = [
                (pr.prios.get(key, len(pr.prios)), key)
                for key, job in pr.jobs.items()
                if job.release_us <= self.now and job.remaining_us > 0
            ]
            if ready:
                chosen = ("job", min(ready)[1])
            elif pr.replay:
                live = [cid for cid, (rt, left) in pr.replay.items() if left > 0]
                if live:
                    chosen = ("replay", min(live))
        if chosen == pr.running:
            return
        pr.running = chosen
        pr.since = self.now
        pr.gen += 1
        if chosen is None:
            return
        what, key = chosen
        if what == "job":
            eta = self.now + pr.jobs[key].remaining_us
        else:
            eta = self.now + pr.replay[key][1]
        self._push(eta, EventKind.TASK_COMPLETE, (pr.key, key),
                   {"proc": pr.key, "what": chosen, "gen": pr.gen})

    def _halt_proc(self, pr: _Proc):
        """Drop everything the processor was doing (fault or withdrawal)."""
        self._touch(pr)
        pr.jobs.clear()
        pr.running = None
        pr.gen += 1
        pr.since = self.now

    def _kill_job(self, pr: _Proc, key):
        self._touch(pr)
        pr.jobs.pop(key, None)
        if pr.running == ("job", key):
            pr.running = None
            pr.gen += 1
        self._dispatch(pr)

    # -- releases, completions, deadlines ---------------------------------------

    def _on_release(self, data):
        rt = self.copies.get(data["copy"])
        if rt is None or rt.copy.health is Health.SHUTDOWN:
            return
        nxt = self.now + rt.spec.period_us
        if nxt <= self.horizon:
            self._push(nxt, EventKind.TASK_RELEASE, rt.copy.copy_id,
                       {"copy": rt.copy.copy_id})
        pr = self.procs[rt.place]
        if pr.failed or pr.dead or self._silenced(rt.copy):
            return
        self.counters["releases"] += 1
        self._touch(pr)
        pr.jobs[rt.key] = _Job(rt, self.now, self.now + rt.spec.deadline_us,
                               rt.spec.wcet_us)
        deadline = self.now + rt.spec.deadline_us
        if deadline <= self.horizon:
            self._push(deadline, EventKind.DEADLINE_CHECK, rt.copy.copy_id,
                       {"copy": rt.copy.copy_id, "release": self.now})
        self._dispatch(pr)

    def _on_complete(self, data):
        pr = self.procs[data["proc"]]
        if data["gen"] != pr.gen or pr.running != data["what"]:
            return
        self._touch(pr)
        what, key = data["what"]
        if what == "job":
            job = pr.jobs.get(key)
            if job is None or job.remaining_us > 0:
                return
            del pr.jobs[key]
            rt = job.rt
            rt.completed_ever = True
            self.counters["completions"] += 1
            self.completions.append(CompletionRecord(
                self.now, job.start_us, job.release_us,
                pr.lane, pr.proc, rt.copy.app_id, rt.copy.task_id))
        else:
            entry = pr.replay.get(key)
            if entry is None or entry[1] > 0:
                return
            rt = entry[0]
            del pr.replay[key]
            rt.replay_left_us = 0
            self._row("ReplayDone", pr.lane, pr.proc, rt.copy.app_id,
                      rt.copy.task_id, "history backlog cleared")
        pr.running = None
        pr.gen += 1
        self._dispatch(pr)

    def _on_deadline_check(self, data):
        rt = self.copies.get(data["copy"])
        if rt is None:
            return
        pr = self.procs[rt.place]
        job = pr.jobs.get(rt.key)
        if job is None or job.release_us != data["release"]:
            return
        if job.remaining_us > 0:
            self.counters["deadline_misses"] += 1
            self.misses.append(DeadlineMissRecord(
                self.now, pr.lane, pr.proc, rt.copy.app_id, rt.copy.task_id,
                job.release_us))
            self._row("DeadlineMiss", pr.lane, pr.proc, rt.copy.app_id,
                      rt.copy.task_id,
                      f"released at {job.release_us}us, "
                      f"{job.remaining_us}us of work left")
            self._kill_job(pr, rt.key)

    # -- faults ------------------------------------------------------------------

    def _active_faults(self, at_us=None):
        t = self.now if at_us is None else at_us
        return [f for f in self.sc.faults if f.active_at(t)]

    def _silenced(self, copy: Copy) -> bool:
        """Is the copy halted (not just skewed) by an active fault?"""
        for f in self._active_faults():
            if f.kind is FaultKind.BYZANTINE or f.target.kind is TargetKind.SENSOR:
                continue
            if f.target.hits_copy(copy.lane, copy.proc, copy.app_id, copy.task_id):
                return True
        return False

    def _refresh_proc_failure(self, pr: _Proc):
        halted = any(
            f.target.hits_processor(pr.lane, pr.proc)
            for f in self._active_faults()
            if f.kind is not FaultKind.BYZANTINE
            and f.target.kind is not TargetKind.SENSOR
        )
        if halted and not pr.failed:
            self._halt_proc(pr)
            pr.failed = True
        elif not halted and pr.failed:
            pr.failed = False
            pr.since = self.now
            self._dispatch(pr)

    def _on_fault_activate(self, data):
        f = data["fault"]
        t = f.target
        self._row("FaultActivate", t.lane, t.proc, t.app, t.task,
                  f"fault {f.fault_id}: {f.kind.value} {t.kind.value}")
        if t.kind is TargetKind.SENSOR or f.kind is FaultKind.BYZANTINE:
            return
        if t.kind is TargetKind.TASK:
            # the copy's executable halts; the processor carries on
            for rt in self.copies.values():
                if (rt.copy.lane, rt.copy.proc, rt.copy.app_id,
                        rt.copy.task_id) == (t.lane, t.proc, t.app, t.task):
                    self._kill_job(self.procs[rt.place], rt.key)
            return
        for pr in self.procs.values():
            if t.hits_processor(pr.lane, pr.proc):
                self._refresh_proc_failure(pr)

    def _on_fault_clear(self, data):
        f = data["fault"]
        t = f.target
        self._row("FaultClear", t.lane, t.proc, t.app, t.task,
                  f"fault {f.fault_id} cleared")
        if t.kind is TargetKind.SENSOR:
            self._restore_channel(f)
            return
        if f.kind is not FaultKind.BYZANTINE and t.kind is not TargetKind.TASK:
            for pr in self.procs.values():
                if t.hits_processor(pr.lane, pr.proc):
                    self._refresh_proc_failure(pr)
        for ep in self._episodes:
            if (not ep.closed and ep.origin == "restabilize"
                    and f.fault_id in ep.cause_ids and ep.t_e is None):
                ep.t_e = self.now

    def _restore_channel(self, fault):
        app_id, lane = fault.target.app, fault.target.lane
        if self.channels[app_id][lane]:
            return
        if self.policies.pilot_gate:
            at = self.policies.approval_time(lane=lane, app=app_id, sensor=True)
            if at is None:
                return      # never approved; channel stays out
            if at > self.now:
                self._push(at, EventKind.READMIT, ("sensor", app_id, lane),
                           {"sensor": (app_id, lane)})
                return
        self._readmit_channel(app_id, lane)

    def _readmit_channel(self, app_id, lane):
        self.channels[app_id][lane] = True
        self._row("Readmit", lane=lane, app=app_id, detail="sensor channel restored")
        self._sample(app_id)

    def _healthy_channels(self, app_id) -> int:
        return sum(1 for ok in self.channels[app_id].values() if ok)

    # -- built-in test -------------------------------------------------------------

    def _on_bit_check(self, data):
        key = data["proc"]
        pr = self.procs[key]
        if pr.dead:
            return
        nxt = self.now + self.settings.bit_period_us
        if nxt <= self.horizon:
            self._push(nxt, EventKind.BIT_CHECK, key, {"proc": key})
        hosted = {
            (rt.copy.app_id, rt.copy.task_id)
            for rt in self.copies.values()
            if rt.place == key and rt.copy.health is Health.ACTIVE
        }
        for f in sorted(self._active_faults(), key=lambda f: f.fault_id):
            if f.fault_id in self._bit_detected:
                continue
            if not bit_detects(f, pr.lane, pr.proc, hosted, self.now):
                continue
            p = self.settings.bit_detect_probability
            if p < 1.0 and self.rng.random() >= p:
                continue
            self._bit_detected.add(f.fault_id)
            if f.target.kind is TargetKind.PROCESSOR:
                d = ShutdownDirective(Granularity.PROCESSOR, pr.lane, pr.proc)
            else:
                d = ShutdownDirective(Granularity.TASK, pr.lane, pr.proc,
                                      f.target.app, f.target.task)
            self.counters["detections"] += 1
            self._row("Detection", pr.lane, pr.proc, f.target.app, f.target.task,
                      f"bit caught {f.kind.value} fault {f.fault_id} "
                      f"({d.granularity.value} granularity)")
            self._apply_directives([d])
            return

    # -- voting ---------------------------------------------------------------------

    def _reference_value(self) -> float:
        return self.settings.reference.value(self.now)

    def _skew_for(self, copy: Copy):
        """Active byzantine fault hitting this copy, if any."""
        for f in self._active_faults():
            if f.kind is FaultKind.BYZANTINE and f.target.hits_copy(
                    copy.lane, copy.proc, copy.app_id, copy.task_id):
                return f
        return None

    def _emitted(self, rt: _CopyRt) -> float | None:
        """Value the copy puts on the exchange this round, or None if silent."""
        pr = self.procs[rt.place]
        if pr.failed or pr.dead:
            return None
        if rt.replay_left_us > 0 or not rt.completed_ever:
            return None
        if self._silenced(rt.copy):
            return None
        value = self._reference_value()
        byz = self._skew_for(rt.copy)
        if byz is not None:
            value += byz.value_skew
        if rt.converge_left > 0:
            value += 2.0 * self.voter.tolerance * rt.converge_left
        return value

    def _on_vote_round(self, data):
        app = self.model.application(data["app"])
        self.counters["vote_rounds"] += 1
        nxt = self.now + data["period"]
        if nxt <= self.horizon:
            self._push(nxt, EventKind.VOTE_ROUND, app.app_id, data)

        self._check_sensors(app)
        for task in sorted(app.tasks, key=lambda t: t.task_id):
            self._vote_task(app, task)

    def _check_sensors(self, app):
        for f in self._active_faults():
            if f.target.kind is not TargetKind.SENSOR or f.target.app != app.app_id:
                continue
            lane = f.target.lane
            if self.channels[app.app_id][lane]:
                self.channels[app.app_id][lane] = False
                self.counters["detections"] += 1
                self._row("Detection", lane=lane, app=app.app_id,
                          detail=f"input voting isolated sensor channel "
                                 f"(fault {f.fault_id}, sensor granularity)")
                self._sample(app.app_id)

    def _vote_task(self, app, task):
        rts = [rt for rt in self.copies.values()
               if rt.copy.app_id == app.app_id and rt.copy.task_id == task.task_id]
        actives = [rt for rt in rts if rt.copy.health is Health.ACTIVE]
        expected = [
            rt for rt in actives
            if rt.completed_ever or self.now >= rt.origin_us + rt.spec.deadline_us
        ]
        emissions = {rt.place: (rt, self._emitted(rt)) for rt in expected}
        emitting = {place: v for place, (rt, v) in emissions.items() if v is not None}
        silent = {place for place, (rt, v) in emissions.items() if v is None}

        implicated = {
            (place[0], place[1], app.app_id, task.task_id) for place in silent
        }
        flagged, ambiguous = frozenset(), False
        if len(emitting) >= 2:
            per_rcv = [rt for rt in expected
                       if (byz := self._skew_for(rt.copy)) is not None
                       and byz.per_receiver]
            if per_rcv:
                outcome = exchange_vote(
                    self._exchange_matrix(expected, emitting), self.voter)
                flagged, ambiguous = outcome.flagged, outcome.ambiguous
            else:
                outcome = cross_monitor(emitting, self.voter)
                flagged, ambiguous = outcome.flagged, outcome.ambiguous
            if not ambiguous:
                implicated.update(
                    (place[0], place[1], app.app_id, task.task_id)
                    for place in flagged if place in emitting)

        if implicated or flagged or ambiguous:
            self._row("VoteRound", app=app.app_id, task=task.task_id,
                      detail=self._vote_detail(silent, flagged, ambiguous))
        if implicated:
            self._pending_implicated.update(implicated)
            if self._classify_at != self.now:
                self._classify_at = self.now
                self._push(self.now, EventKind.CLASSIFY, app.app_id, {})

        self._police_task(app, task, rts, emitting)

    @staticmethod
    def _vote_detail(silent, flagged, ambiguous) -> str:
        parts = []
        if silent:
            parts.append("silent=" + ",".join(
                f"{l}.{p}" for l, p in sorted(silent)))
        if flagged:
            parts.append("flagged=" + ",".join(
                f"{l}.{p}" for l, p in sorted(flagged)))
        if ambiguous:
            parts.append("ambiguous")
        return " ".join(parts)

    def _exchange_matrix(self, expected, emitting):
        """Build receiver x sender claims, including per-receiver lies."""
        received: dict = {}
        senders = [rt for rt in expected]
        receivers = [rt for rt in expected if rt.place in emitting]
        ref = self._reference_value()
        for r in receivers:
            claims: dict = {}
            r_byz = self._skew_for(r.copy)
            for s in senders:
                truth = self._sent_value(s, r, ref)
                if truth is None:
                    claims[s.place] = None
                elif r_byz is not None and r_byz.per_receiver and s is not r:
                    # a two-faced relay also lies about what it heard
                    sign = 1 if (s.copy.lane + r_byz.fault_id) % 2 == 0 else -1
                    claims[s.place] = truth + 1.5 * r_byz.value_skew * sign
                else:
                    claims[s.place] = truth
            received[r.place] = claims
        return received

    def _sent_value(self, sender: _CopyRt, receiver: _CopyRt, ref: float):
        base = self._emitted(sender)
        if base is None:
            return None
        byz = self._skew_for(sender.copy)
        if byz is not None and byz.per_receiver and sender is not receiver:
            sign = 1 if (receiver.copy.lane + byz.fault_id) % 2 == 0 else -1
            return ref + byz.value_skew * sign
        return base

    def _police_task(self, app, task, rts, emitting):
        watched = [rt for rt in rts
                   if rt.copy.health in (Health.POLICED, Health.RESTABILIZING)]
        if not watched:
            return
        active_values = [v for place, v in sorted(emitting.items())
                         if any(rt.place == place and rt.copy.health is Health.ACTIVE
                                for rt in rts)]
        consensus = statistics.median(active_values) if active_values else None
        for rt in sorted(watched, key=lambda rt: rt.copy.copy_id):
            if rt.police is None:
                continue
            if rt.replay_left_us > 0:
                self._row("PoliceRound", rt.copy.lane, rt.copy.proc,
                          app.app_id, task.task_id, "replay outstanding")
                continue
            value = self._emitted(rt)
            if value is None or consensus is None:
                continue
            matched = police_matches(value, consensus, self.cfg)
            if rt.converge_left > 0:
                rt.converge_left -= 1
            done = rt.police.update(matched)
            self._row("PoliceRound", rt.copy.lane, rt.copy.proc,
                      app.app_id, task.task_id,
                      f"{'match' if matched else 'deviation'} "
                      f"{min(rt.police.count, rt.police.required)}/{rt.police.required}")
            if done and rt.eligible_us is None:
                rt.eligible_us = self.now
                self._maybe_readmit(rt)

    def _maybe_readmit(self, rt: _CopyRt):
        if rt.restabilizing and self.policies.pilot_gate:
            c = rt.copy
            at = self.policies.approval_time(lane=c.lane, proc=c.proc,
                                             app=c.app_id, task=c.task_id)
            if at is None or at > self.now:
                return      # waits for the pilot (or forever)
        self._push(self.now, EventKind.READMIT, rt.copy.copy_id,
                   {"copy": rt.copy.copy_id})

    def _on_pilot_approval(self, data):
        a = data["approval"]
        self._row("PilotApproval", a.lane, a.proc, a.app, a.task,
                  "sensor scope" if a.sensor else "")
        if a.sensor:
            return      # sensor restores are driven from the clear event
        for rt in sorted(self.copies.values(), key=lambda rt: rt.copy.copy_id):
            c = rt.copy
            if (rt.restabilizing and rt.eligible_us is not None
                    and c.health is Health.RESTABILIZING
                    and a.matches(lane=c.lane, proc=c.proc, app=c.app_id,
                                  task=c.task_id)):
                self._push(self.now, EventKind.READMIT, c.copy_id,
                           {"copy": c.copy_id})

    def _on_readmit(self, data):
        if "sensor" in data:
            self._readmit_channel(*data["sensor"])
            return
        rt = self.copies[data["copy"]]
        if rt.copy.health not in (Health.POLICED, Health.RESTABILIZING):
            return
        rt.copy.health = Health.ACTIVE
        rt.eligible_us = None
        self.counters["readmissions"] += 1
        self._row("Readmit", rt.copy.lane, rt.copy.proc,
                  rt.copy.app_id, rt.copy.task_id,
                  "copy readmitted to the active set")
        self._sample(rt.copy.app_id)
        ep = rt.episode
        if ep is not None and not ep.closed:
            if all(c.copy.health is Health.ACTIVE for c in ep.copies):
                ep.t_a = self.now
                ep.outcome = (Outcome.DEGRADED_DUPLEX if ep.degraded
                              else Outcome.READMITTED)
                self._close_episode(ep)

    # -- classification and shutdown ---------------------------------------------

    def _on_classify(self, data):
        implicated = self._pending_implicated
        self._pending_implicated = set()
        self._classify_at = None
        if not implicated:
            return
        hosted = {}
        for rt in self.copies.values():
            if rt.copy.health is Health.ACTIVE:
                hosted.setdefault(rt.place, set()).add(rt.key)
        directives = classify(implicated, hosted)
        for d in directives:
            self.counters["detections"] += 1
            self._row("Detection", d.lane, d.proc, d.app, d.task,
                      f"cross-monitor consensus ({d.granularity.value} granularity)")
        self._apply_directives(directives)

    def _directive_causes(self, d: ShutdownDirective):
        """Active faults that explain a directive's scope."""
        out = []
        for f in self._active_faults():
            t = f.target
            if t.kind is TargetKind.SENSOR:
                continue
            if d.granularity is Granularity.LANE:
                hit = t.lane == d.lane
            elif d.granularity is Granularity.PROCESSOR:
                hit = t.hits_processor(d.lane, d.proc) or (
                    t.kind is TargetKind.TASK and (t.lane, t.proc) == (d.lane, d.proc))
            else:
                hit = t.hits_copy(d.lane, d.proc, d.app, d.task)
            if hit:
                out.append(f)
        return out

    def _apply_directives(self, directives):
        affected: dict = {}     # app_id -> {"copies": [...], "transient": bool,
                                #            "causes": set}
        for d in directives:
            causes = self._directive_causes(d)
            transient = bool(causes) and all(
                f.kind is FaultKind.TRANSIENT for f in causes)
            cause_ids = tuple(sorted(f.fault_id for f in causes))
            victims = self._directive_victims(d)
            self.counters["shutdowns"] += 1
            self._row("ShutdownApplied", d.lane, d.proc, d.app, d.task,
                      f"{d.granularity.value} shutdown, "
                      f"{'restabilize in place' if transient else 'withdrawn'}"
                      + (f", faults {list(cause_ids)}" if cause_ids else ""))
            if not transient:
                self._mark_dead(d)
            for rt in victims:
                if transient:
                    rt.copy.health = Health.RESTABILIZING
                    rt.restabilizing = True
                    rt.police = PoliceCounter(self.cfg.police_rounds)
                    rt.eligible_us = None
                else:
                    self._withdraw_copy(rt)
            for rt in victims:
                entry = affected.setdefault(
                    rt.copy.app_id,
                    {"copies": [], "transient": transient, "causes": set()})
                entry["copies"].append(rt)
                entry["transient"] = entry["transient"] and transient
                entry["causes"].update(cause_ids)

        for app_id in sorted(affected):
            entry = affected[app_id]
            self._sample(app_id)
            self._open_episode(app_id, entry)
        # withdrawals may have freed bandwidth a stalled transfer was waiting
        # for; when a selection event is pending at this same instant, its own
        # pump runs after the new reservations instead
        if self._selection_at != self.now:
            self._pump_bus()

    def _directive_victims(self, d: ShutdownDirective):
        out = []
        for rt in sorted(self.copies.values(), key=lambda rt: rt.copy.copy_id):
            c = rt.copy
            if c.health is not Health.ACTIVE:
                continue
            if d.granularity is Granularity.LANE:
                hit = c.lane == d.lane
            elif d.granularity is Granularity.PROCESSOR:
                hit = (c.lane, c.proc) == (d.lane, d.proc)
            else:
                hit = (c.lane, c.proc, c.app_id, c.task_id) == (
                    d.lane, d.proc, d.app, d.task)
            if hit:
                out.append(rt)
        return out

    def _mark_dead(self, d: ShutdownDirective):
        if d.granularity is Granularity.TASK:
            return
        for pr in self.procs.values():
            if pr.lane != d.lane:
                continue
            if d.granularity is Granularity.PROCESSOR and pr.proc != d.proc:
                continue
            if not pr.dead:
                pr.dead = True
                self._halt_proc(pr)

    def _withdraw_copy(self, rt: _CopyRt):
        c = rt.copy
        c.health = Health.SHUTDOWN
        pr = self.procs[rt.place]
        self._kill_job(pr, rt.key)
        pr.admitted = pr.admitted.without_task(rt.key)
        pr.refresh_priorities()
        pr.replay.pop(c.copy_id, None)
        self.bus = self.bus.without_demand(
            ("copy", c.app_id, c.task_id, c.lane, c.proc))

    def _open_episode(self, app_id, entry):
        app = self.model.application(app_id)
        if (self.model.architecture is Architecture.FEDERATED_QUADRUPLEX
                and not entry["transient"]):
            # a federated lane set has nowhere to move work: the loss simply
            # stands, and only the coverage timeline records it
            return
        ep = _Episode(
            record_id=next(self._record_ids),
            app_id=app_id,
            strategy=app.state_model.strategy,
            failed_copy_ids=tuple(sorted(rt.copy.copy_id
                                         for rt in entry["copies"])),
            origin="restabilize" if entry["transient"] else "reconfig",
            cause_ids=tuple(sorted(entry["causes"])),
            t_f=self.now,
        )
        self._episodes.append(ep)
        if entry["transient"]:
            ep.t_r = ep.t_i = ep.t_s = self.now
            ep.copies = list(entry["copies"])
            for rt in ep.copies:
                rt.episode = ep
            cleared = [f for f in self.sc.faults
                       if f.fault_id in ep.cause_ids and not f.active_at(self.now)]
            if len(cleared) == len(ep.cause_ids):
                ep.t_e = self.now
            return
        ep.copies = []
        ep.lost = entry["copies"]
        self._pending_selection.append(ep)
        if self._selection_at != self.now:
            self._selection_at = self.now
            self._push(self.now, EventKind.SELECTION, app_id, {})

    # -- selection and the transfer bus ---------------------------------------------

    def _on_selection(self, data):
        pending = self._pending_selection
        self._pending_selection = []
        self._selection_at = None
        crit = {a.app_id: a.criticality for a in self.model.applications}
        pending.sort(key=lambda ep: (crit[ep.app_id], ep.app_id))
        for ep in pending:
            self._select_for(ep)
        # transfers start only after every same-instant episode has reserved
        # its bandwidth, so durations never depend on processing order
        self._pump_bus()

    def _select_for(self, ep: _Episode):
        app = self.model.application(ep.app_id)
        group = self.groups[ep.app_id]
        lost = {}
        for rt in ep.lost:
            lost.setdefault(rt.copy.task_id, rt)

        for task_id in sorted(lost):
            if not group.active(task_id):
                ep.t_r = self.now
                ep.outcome = Outcome.ABANDONED
                self._row("Abandoned", app=ep.app_id, task=task_id,
                          detail="no surviving active copy to recover from")
                self._close_episode(ep)
                return

        failed = [
            FailedTask(ep.app_id, task_id, app.task(task_id),
                       home_lane=lost[task_id].copy.lane)
            for task_id in sorted(lost)
        ]
        spares = [
            SpareCandidate(lane, proc, self.procs[(lane, proc)].admitted,
                           occupied=len(self.procs[(lane, proc)].admitted) > 0)
            for lane, proc in sorted(self.model.spare_positions())
            if not self.procs[(lane, proc)].dead
            and not self.procs[(lane, proc)].failed
        ]
        restricted = self.model.architecture is Architecture.RESTRICTED_INTEGRATED
        plan = select_spare(failed, spares, self.bus, self.cfg, restricted)

        ep.t_r = self.now
        for task_id, lane, proc in plan.placements:
            spec = app.task(task_id)
            pr = self.procs[(lane, proc)]
            self._touch(pr)
            pr.admitted = pr.admitted.with_task(
                (ep.app_id, task_id), spec.wcet_us, spec.period_us,
                spec.deadline_us)
            pr.refresh_priorities()
            self.bus = self.bus.with_demand(
                ("copy", ep.app_id, task_id, lane, proc), spec.message_demand)
            ep.placements[task_id] = (lane, proc)
            self._row("SpareSelected", lane, proc, ep.app_id, task_id,
                      f"resulting utilization "
                      f"{float(pr.admitted.utilization):.4f}")
        for task_id in plan.degraded:
            ep.degraded.append(task_id)
            self._row("DegradeToDuplex", app=ep.app_id, task=task_id,
                      detail="no spare could admit the copy")

        if ep.placements:
            self._bus_queue.append([ep, "install"])
        else:
            ep.outcome = Outcome.DEGRADED_DUPLEX
            self._close_episode(ep)

    def _phase_payload(self, ep: _Episode, phase: str):
        app = self.model.application(ep.app_id)
        if phase == "install":
            return sum((app.task(t).code_size for t in sorted(ep.placements)),
                       start=0)
        sm = app.state_model
        if sm.strategy is StateStrategy.TRANSFER:
            return sm.snapshot_size
        if sm.strategy is StateStrategy.HYBRID:
            return sm.min_state_size
        return 0

    def _pump_bus(self):
        while self._bus_queue and self._bus_active is None:
            ep, phase = self._bus_queue[0]
            payload = self._phase_payload(ep, phase)
            if payload == 0:
                self._finish_phase(ep, phase)
                continue
            avail = available_transfer_bandwidth(self.bus)
            if avail <= 0:
                if (ep.record_id, phase) not in self._stall_noted:
                    self._stall_noted.add((ep.record_id, phase))
                    self._row("TransferStall", app=ep.app_id,
                              detail=f"{phase} transfer of {payload} units waits "
                                     f"for bus bandwidth")
                return
            self._stall_noted.discard((ep.record_id, phase))
            if phase == "install":
                ep.t_i = self.now
                kind = EventKind.INSTALL_DONE
            else:
                kind = EventKind.STATE_TRANSFER_DONE
            duration = transfer_time(payload, avail)
            self.counters["transfers"] += 1
            self._bus_active = (ep, phase)
            self._push(self.now + duration, kind, ep.record_id,
                       {"episode": ep})
            return

    def _finish_phase(self, ep: _Episode, phase: str):
        if phase == "install":
            if ep.t_i is None:
                ep.t_i = self.now
            ep.t_s = self.now
            self._bus_queue[0][1] = "state"
        else:
            ep.t_e = self.now
            self._bus_queue.pop(0)
            self._spawn_copies(ep)

    def _on_install_done(self, data):
        ep = data["episode"]
        self._bus_active = None
        self._row("InstallDone", app=ep.app_id,
                  detail=f"code image installed for tasks "
                         f"{sorted(ep.placements)}")
        self._finish_phase(ep, "install")
        self._pump_bus()

    def _on_state_done(self, data):
        ep = data["episode"]
        self._bus_active = None
        self._finish_phase(ep, "state")
        self._pump_bus()

    def _spawn_copies(self, ep: _Episode):
        app = self.model.application(ep.app_id)
        sm = app.state_model
        group = self.groups[ep.app_id]
        self._row("StateTransferDone", app=ep.app_id,
                  detail=f"{sm.strategy.value} state ready; policing starts")
        for task_id in sorted(ep.placements):
            lane, proc = ep.placements[task_id]
            spec = app.task(task_id)
            copy = Copy(next(self._copy_ids), ep.app_id, task_id, lane, proc,
                        health=Health.POLICED)
            group.copies.append(copy)
            rt = _CopyRt(copy, spec, app, origin_us=self.now,
                         police=PoliceCounter(self.cfg.police_rounds),
                         episode=ep)
            self.copies[copy.copy_id] = rt
            ep.copies.append(rt)
            pr = self.procs[(lane, proc)]
            if sm.strategy is StateStrategy.TRANSFER and sm.history_len > 0:
                rt.replay_left_us = sm.history_len * spec.wcet_us
                self._touch(pr)
                pr.replay[copy.copy_id] = [rt, rt.replay_left_us]
                self._dispatch(pr)
            if sm.strategy in (StateStrategy.CONVERGENCE, StateStrategy.HYBRID):
                rt.converge_left = sm.convergence_rounds
            self._push(self.now, EventKind.TASK_RELEASE, copy.copy_id,
                       {"copy": copy.copy_id})

    def _close_episode(self, ep: _Episode, at_horizon: bool = False):
        ep.closed = True
        rec = ep.to_record()
        self.records.append(rec)
        if not at_horizon:
            self._row("RecoveryClosed", app=ep.app_id,
                      detail=f"record {rec.record_id}: {rec.outcome.value}")
        self._sample(ep.app_id)

    # -- coverage sampling ------------------------------------------------------------

    def _sample(self, app_id):
        group = self.groups[app_id]
        snap = (
            cov.functional_coverage(group),
            cov.zonal_coverage(group),
            cov.peripheral_coverage(self._healthy_channels(app_id)),
        )
        if self._last_cov.get(app_id) == snap:
            return
        self._last_cov[app_id] = snap
        self.samples.append(cov.CoverageSample(self.now, app_id, *snap))


def _sortable(key):
    """Heap keys mix ints, tuples and strings; normalize for comparison."""
    if isinstance(key, tuple):
        return (1, tuple(_sortable(k) for k in key))
    if isinstance(key, str):
        return (2, key)
    return (0, key)


def run(scenario) -> SimResult:
    """Simulate a parsed scenario to its horizon."""
    return Engine(scenario).run()


# -- standalone single-processor scheduler ----------------------------------------

@dataclass
class ProcSchedule:
    """What one fixed-priority processor did over a window."""

    completions: list = field(default_factory=list)   # (task_id, release, finish)
    misses: list = field(default_factory=list)        # (task_id, release, deadline)
    background_done_us: int | None = None
    busy_us: int = 0


def schedule_processor(tasks, window_us: int, background_us: int = 0) -> ProcSchedule:
    """Run a deadline-monotonic preemptive schedule on one processor.

    ``tasks`` are TaskSpec-likes released together at time zero. Background
    work soaks up every idle microsecond at less than any task priority;
    the report notes when the backlog (if any) drained. An instance that
    reaches its deadline unfinished is recorded as a miss and aborted.
    """
    tasks = list(tasks)
    order = sorted(range(len(tasks)),
                   key=lambda i: (tasks[i].deadline_us, tasks[i].task_id))
    prio = {i: rank for rank, i in enumerate(order)}

    report = ProcSchedule()
    events: list = []       # (time, rank, idx, release) rank 0=deadline 1=release
    for i, t in enumerate(tasks):
        heapq.heappush(events, (0, 1, i, 0))
    ready: dict = {}        # idx -> [release, deadline, remaining]
    bg_left = background_us
    now = 0

    while now < window_us:
        while events and events[0][0] <= now:
            at, kind, idx, release = heapq.heappop(events)
            if kind == 0:
                job = ready.get(idx)
                if job is not None and job[0] == release and job[2] > 0:
                    report.misses.append((tasks[idx].task_id, release, at))
                    del ready[idx]
            else:
                ready[idx] = [at, at + tasks[idx].deadline_us,
                              tasks[idx].wcet_us]
                if at + tasks[idx].deadline_us <= window_us:
                    heapq.heappush(events,
                                   (at + tasks[idx].deadline_us, 0, idx, at))
                nxt = at + tasks[idx].period_us
                if nxt < window_us:
                    heapq.heappush(events, (nxt, 1, idx, nxt))

        boundary = min(events[0][0], window_us) if events else window_us
        runnable = [(prio[i], i) for i, job in ready.items() if job[2] > 0]
        if runnable:
            idx = min(runnable)[1]
            job = ready[idx]
            span = min(boundary - now, job[2])
            job[2] -= span
            now += span
            report.busy_us += span
            if job[2] == 0:
                report.completions.append((tasks[idx].task_id, job[0], now))
                del ready[idx]
        elif bg_left > 0:
            span = min(boundary - now, bg_left)
            bg_left -= span
            now += span
            report.busy_us += span
            if bg_left == 0:
                report.background_done_us = now
        else:
            now = boundary

    # deadlines landing exactly on the window edge still count, the same
    # way the event engine treats its horizon as inclusive
    while events and events[0][0] <= window_us:
        at, kind, idx, release = heapq.heappop(events)
        if kind == 0:
            job = ready.get(idx)
            if job is not None and job[0] == release and job[2] > 0:
                report.misses.append((tasks[idx].task_id, release, at))
                del ready[idx]
    return report


# -- jitter measurement --------------------------------------------------------------

def measure_jitter(result, *, app=None, task=None, lane=None, proc=None,
                   kind: str = "output", period_us: int | None = None) -> int:
    """Max-min spread of per-instance offsets for one copy selection.

    kind 'output' measures completion minus release, 'input' measures first
    dispatch minus release, and 'release' measures drift of release times
    against the periodic grid (which needs period_us).
    """
    completions = result.completions if hasattr(result, "completions") else result
    picked = [
        c for c in completions
        if (app is None or c.app == app) and (task is None or c.task == task)
        and (lane is None or c.lane == lane) and (proc is None or c.proc == proc)
    ]
    if len(picked) < 2:
        raise InsufficientInstances(
            f"need at least 2 instances to measure jitter, got {len(picked)}")
    if kind == "output":
        offsets = [c.finish_us - c.release_us for c in picked]
    elif kind == "input":
        offsets = [c.start_us - c.release_us for c in picked]
    elif kind == "release":
        if not period_us:
            raise ValueError("release jitter needs period_us")
        offsets = [c.release_us % period_us for c in picked]
    else:
        raise ValueError(f"unknown jitter kind {kind!r}")
    return max(offsets) - min(offsets)
