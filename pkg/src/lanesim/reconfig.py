"""Reconfiguration domain: replica groups, spare selection, recovery records.

A recovery episode runs through a fixed phase order. The timestamps only
promise ordering, never spacing:

    t_f  failure detected                (cross-monitor or BIT)
    t_r  replacement selected            (selection itself is instantaneous)
    t_i  installation commences          (code image queued on the bus)
    t_s  state transfer commences        (= installation complete)
    t_e  new copy eligible to execute    (= state transfer complete)
    t_a  copy readmitted to voting       (after policed execution, and the
                                          pilot gate for restabilized parts)

Spare selection prefers the failed copy's own lane, then other lanes;
within a tier candidates are ranked by lowest resulting utilization with
ties broken by (lane id, proc id). Every placement must pass both the
processor admission test and the bus comms test at the moment of
selection, and in the restricted architecture a spare accepts at most one
application. When nothing fits the task degrades: the application simply
continues one level weaker.

The discrete-event engine (:mod:`lanesim.sim`) drives the episode through
these phases; this module holds the pure pieces it leans on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .model import StateStrategy, TaskSpec
from .timing import (AdmissionDecision, BusState, ProcessorState, admit_task,
                     check_comms, task_utilization)


class Health(Enum):
    ACTIVE = "active"
    POLICED = "policed"
    RESTABILIZING = "restabilizing"
    SHUTDOWN = "shutdown"


@dataclass
class Copy:
    """One replica of one task, living on (lane, proc)."""

    copy_id: int
    app_id: int
    task_id: int
    lane: int
    proc: int
    health: Health = Health.ACTIVE


@dataclass
class ReplicaGroup:
    """All copies of one application, plus its task universe."""

    app_id: int
    task_ids: tuple[int, ...]
    copies: list[Copy] = field(default_factory=list)

    def active(self, task_id: int | None = None) -> list[Copy]:
        return [c for c in self.copies
                if c.health is Health.ACTIVE
                and (task_id is None or c.task_id == task_id)]


class Outcome(Enum):
    READMITTED = "readmitted"
    DEGRADED_DUPLEX = "degraded_duplex"
    ABANDONED = "abandoned"


@dataclass
class ReconfigRecord:
    record_id: int
    app_id: int
    failed_copy_ids: tuple[int, ...]
    strategy: StateStrategy
    outcome: Outcome
    t_f_us: int | None = None
    t_r_us: int | None = None
    t_i_us: int | None = None
    t_s_us: int | None = None
    t_e_us: int | None = None
    t_a_us: int | None = None
    placements: dict = field(default_factory=dict)   # task_id -> (lane, proc)
    degraded_tasks: tuple[int, ...] = ()

    def timestamps(self) -> list[int]:
        stamps = [self.t_f_us, self.t_r_us, self.t_i_us,
                  self.t_s_us, self.t_e_us, self.t_a_us]
        return [s for s in stamps if s is not None]

    def ordering_ok(self) -> bool:
        stamps = self.timestamps()
        return all(a <= b for a, b in zip(stamps, stamps[1:]))


@dataclass(frozen=True)
class SelectionPolicy:
    """Fixed selection semantics, kept explicit for reports and tests."""

    same_lane_first: bool = True


@dataclass
class FailedTask:
    app_id: int
    task_id: int
    task: TaskSpec
    home_lane: int


@dataclass
class SpareCandidate:
    lane: int
    proc: int
    state: ProcessorState
    occupied: bool = False   # hosts (or is reserved for) any application


@dataclass
class PlacementDecision:
    task_id: int
    lane: int
    proc: int
    admission: AdmissionDecision
    comms: AdmissionDecision | None
    chosen: bool


@dataclass
class PlacementPlan:
    app_id: int
    placements: list = field(default_factory=list)   # (task_id, lane, proc)
    degraded: list = field(default_factory=list)     # task_ids with no home
    decisions: list = field(default_factory=list)    # every PlacementDecision tried
    # states after the plan's reservations, so callers can thread them on
    spare_states: dict = field(default_factory=dict)
    bus: BusState | None = None


def recovery_order(apps) -> list[int]:
    """App ids, most critical first (ascending criticality ordinal, then id)."""
    return [a.app_id for a in sorted(apps, key=lambda a: (a.criticality, a.app_id))]


def select_spare(failed: list[FailedTask], spares: list[SpareCandidate],
                 bus: BusState, cfg, restricted: bool,
                 policy: SelectionPolicy = SelectionPolicy()) -> PlacementPlan:
    """Plan placements for one application's failed tasks.

    Mutates nothing: reserved capacity is threaded through local copies of
    the spare states and bus, which the plan carries back to the caller.
    """
    if not failed:
        raise ValueError("nothing to place")
    plan = PlacementPlan(app_id=failed[0].app_id)
    states = {(s.lane, s.proc): s.state for s in spares}
    # spares another application already claimed; our own reservations do
    # not count, since restriction is one application per processor
    taken = {(s.lane, s.proc) for s in spares if s.occupied}
    plan.bus = bus

    for f in sorted(failed, key=lambda f: f.task_id):
        ranked = _ranked_candidates(f, spares, states, taken, restricted, policy)
        placed = False
        for lane, proc in ranked:
            state = states[(lane, proc)]
            admission = admit_task(state, f.task, cfg)
            comms = None
            if admission.accepted:
                comms = check_comms(plan.bus, f.task.messages)
            chosen = admission.accepted and comms is not None and comms.accepted
            plan.decisions.append(PlacementDecision(
                f.task_id, lane, proc, admission, comms, chosen))
            if chosen:
                states[(lane, proc)] = state.with_task(
                    ("plan", f.app_id, f.task_id),
                    f.task.wcet_us, f.task.period_us, f.task.deadline_us)
                plan.bus = plan.bus.with_demand(
                    ("plan", f.app_id, f.task_id), f.task.message_demand)
                plan.placements.append((f.task_id, lane, proc))
                placed = True
                break
        if not placed:
            plan.degraded.append(f.task_id)

    plan.spare_states = states
    return plan


def _ranked_candidates(f: FailedTask, spares, states, taken, restricted, policy):
    u = task_utilization(f.task.wcet_us, f.task.period_us, f.task.deadline_us)

    def usable(s):
        return not (restricted and (s.lane, s.proc) in taken)

    def rank(s):
        return (states[(s.lane, s.proc)].utilization + u, s.lane, s.proc)

    same = sorted((s for s in spares if usable(s) and s.lane == f.home_lane), key=rank)
    other = sorted((s for s in spares if usable(s) and s.lane != f.home_lane), key=rank)
    tiers = same + other if policy.same_lane_first else sorted(same + other, key=rank)
    return [(s.lane, s.proc) for s in tiers]


class PoliceCounter:
    """Counts consecutive in-tolerance rounds; any deviation resets it."""

    def __init__(self, required: int):
        self.required = required
        self.count = 0

    def update(self, matched: bool) -> bool:
        self.count = self.count + 1 if matched else 0
        return self.count >= self.required

    def reset(self):
        self.count = 0
