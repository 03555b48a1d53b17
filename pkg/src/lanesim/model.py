"""System model: lanes, processors, applications, tasks, and document validation.

A system is a set of identical computing lanes. Each lane holds the same
processors, and every application is replicated once per lane with an
identical initial allocation, so the healthy system is an N-modular
redundant arrangement (N = lane count, 2..4). Spare processors start empty
and exist to receive recovered task copies.

``build_system`` turns a plain scenario ``system`` dictionary into a
validated :class:`SystemModel`. Structural problems (missing keys, wrong
types, unknown enum strings) raise :class:`MalformedDocument`; semantic
problems are collected and raised together as :class:`InvalidModel` so a
caller sees the full list of violations at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .timebase import frac, ms_to_us


class Architecture(Enum):
    FEDERATED_QUADRUPLEX = "federated_quadruplex"
    RESTRICTED_INTEGRATED = "restricted_integrated"
    FULLY_INTEGRATED = "fully_integrated"


class ProcessorRole(Enum):
    ALLOCATED = "allocated"
    SPARE = "spare"


class StateStrategy(Enum):
    TRANSFER = "transfer"
    CONVERGENCE = "convergence"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class MessageSpec:
    """A periodic message a task copy puts on the bus.

    Demand on the bus is size / period, in data units per millisecond.
    """

    msg_id: int
    size: Fraction
    period_us: int

    @property
    def demand(self) -> Fraction:
        # data units per millisecond
        return self.size * 1000 / self.period_us


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    wcet_us: int
    period_us: int
    deadline_us: int
    initial_proc: int
    code_size: Fraction = Fraction(0)
    messages: tuple[MessageSpec, ...] = ()

    @property
    def message_demand(self) -> Fraction:
        return sum((m.demand for m in self.messages), Fraction(0))


@dataclass(frozen=True)
class StateModel:
    """How a recovered copy of an application obtains current state.

    transfer     snapshot_size data units are shipped over the bus; the new
                 copy then replays history_len historic samples in background
                 capacity before it can be policed.
    convergence  nothing is shipped; the copy's outputs drift into tolerance
                 over convergence_rounds voting rounds.
    hybrid       a minimum snapshot (min_state_size) is shipped, then the
                 copy converges as above.
    """

    strategy: StateStrategy = StateStrategy.TRANSFER
    snapshot_size: Fraction = Fraction(0)
    history_len: int = 0
    min_state_size: Fraction | None = None
    convergence_rounds: int = 0


@dataclass(frozen=True)
class ApplicationSpec:
    app_id: int
    criticality: int
    tasks: tuple[TaskSpec, ...]
    state_model: StateModel = StateModel()

    def task(self, task_id: int) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    @property
    def shortest_period_us(self) -> int:
        return min(t.period_us for t in self.tasks)


@dataclass(frozen=True)
class ProcessorSpec:
    proc_id: int
    role: ProcessorRole = ProcessorRole.ALLOCATED


@dataclass(frozen=True)
class LaneSpec:
    lane_id: int
    processors: tuple[ProcessorSpec, ...]

    def processor(self, proc_id: int) -> ProcessorSpec:
        for p in self.processors:
            if p.proc_id == proc_id:
                return p
        raise KeyError(proc_id)


@dataclass(frozen=True)
class BusSpec:
    """Shared transfer medium; max_load in data units per millisecond."""

    max_load: Fraction


@dataclass(frozen=True)
class TimingConfig:
    utilization_bound: Fraction = Fraction(69, 100)
    customer_cap_mode: bool = False
    police_rounds: int = 3
    tolerance: float = 0.5

    @property
    def effective_bound(self) -> Fraction:
        # The contractual customer cap overrides the engineering bound.
        return Fraction(1, 2) if self.customer_cap_mode else self.utilization_bound


@dataclass(frozen=True)
class SystemModel:
    architecture: Architecture
    lanes: tuple[LaneSpec, ...]
    bus: BusSpec
    applications: tuple[ApplicationSpec, ...]
    timing: TimingConfig

    @property
    def lane_ids(self) -> tuple[int, ...]:
        return tuple(l.lane_id for l in self.lanes)

    def lane(self, lane_id: int) -> LaneSpec:
        for l in self.lanes:
            if l.lane_id == lane_id:
                return l
        raise KeyError(lane_id)

    def application(self, app_id: int) -> ApplicationSpec:
        for a in self.applications:
            if a.app_id == app_id:
                return a
        raise KeyError(app_id)

    def spare_positions(self) -> list[tuple[int, int]]:
        return [
            (l.lane_id, p.proc_id)
            for l in self.lanes
            for p in l.processors
            if p.role is ProcessorRole.SPARE
        ]


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):  # pragma: no cover - cosmetic
        return f"{self.code}: {self.message}"


class MalformedDocument(Exception):
    """The document's shape is wrong; no model can be built from it."""


class InvalidModel(Exception):
    """The document parsed but breaks one or more model invariants."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


# -- parsing helpers ---------------------------------------------------------

def _require(doc: dict, key: str, kinds, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise MalformedDocument(f"{where}: missing required field '{key}'")
    value = doc[key]
    if kinds is not None and (not isinstance(value, kinds) or isinstance(value, bool)):
        raise MalformedDocument(f"{where}: field '{key}' has the wrong type")
    return value


def _optional(doc: dict, key: str, kinds, default, where: str):
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    if kinds is not None and (not isinstance(value, kinds) or isinstance(value, bool)):
        raise MalformedDocument(f"{where}: field '{key}' has the wrong type")
    return value


def _enum(cls, text, where: str):
    try:
        return cls(text)
    except ValueError:
        names = ", ".join(e.value for e in cls)
        raise MalformedDocument(f"{where}: expected one of [{names}], got {text!r}") from None


def _duration_us(doc, key, where, default=None) -> int:
    if default is not None and key not in doc:
        return default
    raw = _require(doc, key, (int, float), where)
    return ms_to_us(raw)


# -- document -> model -------------------------------------------------------

def _parse_message(doc: dict, task_period_us: int, where: str) -> MessageSpec:
    return MessageSpec(
        msg_id=_require(doc, "msg_id", int, where),
        size=frac(_require(doc, "size", (int, float), where)),
        period_us=_duration_us(doc, "period_ms", where, default=task_period_us),
    )


def _parse_task(doc: dict, lane_count: int, where: str):
    period = _duration_us(doc, "period_ms", where)
    task = dict(
        task_id=_require(doc, "task_id", int, where),
        wcet_us=_duration_us(doc, "wcet_ms", where),
        period_us=period,
        deadline_us=_duration_us(doc, "deadline_ms", where, default=period),
        code_size=frac(_optional(doc, "code_size", (int, float), 0, where)),
    )
    raw_proc = _require(doc, "initial_proc", (int, list), where)
    if isinstance(raw_proc, list):
        if len(raw_proc) != lane_count or not all(
            isinstance(p, int) and not isinstance(p, bool) for p in raw_proc
        ):
            raise MalformedDocument(f"{where}: per-lane initial_proc must list one int per lane")
        procs = tuple(raw_proc)
    else:
        procs = (raw_proc,) * lane_count
    msgs = _optional(doc, "messages", list, [], where)
    task["messages"] = tuple(
        _parse_message(m, period, f"{where}.messages[{i}]") for i, m in enumerate(msgs)
    )
    return task, procs


def _parse_state_model(doc: dict, where: str) -> StateModel:
    return StateModel(
        strategy=_enum(StateStrategy, _optional(doc, "strategy", str, "transfer", where), where),
        snapshot_size=frac(_optional(doc, "snapshot_size", (int, float), 0, where)),
        history_len=_optional(doc, "history_len", int, 0, where),
        min_state_size=(
            frac(doc["min_state_size"]) if doc.get("min_state_size") is not None else None
        ),
        convergence_rounds=_optional(doc, "convergence_rounds", int, 0, where),
    )


def _parse_timing(doc: dict) -> TimingConfig:
    where = "system.timing"
    return TimingConfig(
        utilization_bound=frac(_optional(doc, "utilization_bound", (int, float), 0.69, where)),
        customer_cap_mode=bool(doc.get("customer_cap_mode", False)),
        police_rounds=_optional(doc, "police_rounds", int, 3, where),
        tolerance=float(_optional(doc, "tolerance", (int, float), 0.5, where)),
    )


def build_system(doc: dict) -> SystemModel:
    """Validate a ``system`` document section and build the model.

    Raises MalformedDocument for shape errors, InvalidModel (carrying the
    full violation list) for semantic ones.
    """
    if not isinstance(doc, dict):
        raise MalformedDocument("system section must be an object")

    arch = _enum(Architecture, _require(doc, "architecture", str, "system"), "system.architecture")
    lanes_doc = _require(doc, "lanes", list, "system")
    bus_doc = _optional(doc, "bus", dict, {"max_load": 1000}, "system")
    apps_doc = _optional(doc, "applications", list, [], "system")
    timing = _parse_timing(_optional(doc, "timing", dict, {}, "system"))
    bus = BusSpec(max_load=frac(_require(bus_doc, "max_load", (int, float), "system.bus")))

    violations: list[Violation] = []
    bad = violations.append

    lanes = []
    for i, ld in enumerate(lanes_doc):
        where = f"system.lanes[{i}]"
        lane_id = _require(ld, "lane_id", int, where)
        procs = []
        for j, pd in enumerate(_require(ld, "processors", list, where)):
            pw = f"{where}.processors[{j}]"
            procs.append(ProcessorSpec(
                proc_id=_require(pd, "proc_id", int, pw),
                role=_enum(ProcessorRole, _optional(pd, "role", str, "allocated", pw), pw),
            ))
        lanes.append(LaneSpec(lane_id=lane_id, processors=tuple(procs)))

    if not 2 <= len(lanes) <= 4:
        bad(Violation("MalformedDocument", f"lane count must be 2..4, got {len(lanes)}"))

    lane_ids = [l.lane_id for l in lanes]
    if len(set(lane_ids)) != len(lane_ids):
        bad(Violation("DuplicateId", "duplicate lane ids"))
    for l in lanes:
        ids = [p.proc_id for p in l.processors]
        if len(set(ids)) != len(ids):
            bad(Violation("DuplicateId", f"duplicate processor ids in lane {l.lane_id}"))

    # Lanes must be identical computing elements: same processor ids and roles.
    if lanes:
        ref = {p.proc_id: p.role for p in lanes[0].processors}
        for l in lanes[1:]:
            if {p.proc_id: p.role for p in l.processors} != ref:
                bad(Violation(
                    "AsymmetricLanes",
                    f"lane {l.lane_id} does not mirror lane {lanes[0].lane_id}'s processors",
                ))

    apps = []
    app_ids = set()
    for i, ad in enumerate(apps_doc):
        where = f"system.applications[{i}]"
        app_id = _require(ad, "app_id", int, where)
        if app_id in app_ids:
            bad(Violation("DuplicateId", f"duplicate application id {app_id}"))
        app_ids.add(app_id)
        tasks = []
        task_ids = set()
        for j, td in enumerate(_require(ad, "tasks", list, where)):
            tw = f"{where}.tasks[{j}]"
            fields, procs = _parse_task(td, max(len(lanes), 1), tw)
            if fields["task_id"] in task_ids:
                bad(Violation("DuplicateId",
                              f"duplicate task id {fields['task_id']} in app {app_id}"))
            task_ids.add(fields["task_id"])
            msg_ids = [m.msg_id for m in fields["messages"]]
            if len(set(msg_ids)) != len(msg_ids):
                bad(Violation("DuplicateId", f"duplicate message ids in {tw}"))
            if not 0 < fields["wcet_us"] <= fields["deadline_us"] <= fields["period_us"]:
                bad(Violation("MalformedDocument",
                              f"{tw}: need 0 < wcet <= deadline <= period"))
            if fields["code_size"] < 0:
                bad(Violation("MalformedDocument", f"{tw}: negative code_size"))
            if len(set(procs)) > 1:
                bad(Violation("AsymmetricLanes",
                              f"{tw}: initial_proc differs between lanes {procs}"))
            proc_id = procs[0]
            for l in lanes:
                try:
                    pspec = l.processor(proc_id)
                except KeyError:
                    bad(Violation("MalformedDocument",
                                  f"{tw}: initial_proc {proc_id} not in lane {l.lane_id}"))
                    continue
                if pspec.role is ProcessorRole.SPARE:
                    bad(Violation("SpareHasTasks",
                                  f"app {app_id} task {fields['task_id']} allocated to spare "
                                  f"processor {proc_id} (lane {l.lane_id})"))
            tasks.append(TaskSpec(initial_proc=proc_id, **fields))
        if not tasks:
            bad(Violation("MalformedDocument", f"app {app_id} has no tasks"))
        sm = _parse_state_model(_optional(ad, "state_model", dict, {}, where), f"{where}.state_model")
        if sm.strategy is StateStrategy.CONVERGENCE and sm.snapshot_size != 0:
            bad(Violation("MalformedDocument",
                          f"app {app_id}: convergence strategy ships no snapshot"))
        if sm.strategy is StateStrategy.HYBRID and (
            sm.min_state_size is None or not 0 < sm.min_state_size <= sm.snapshot_size
        ):
            bad(Violation("MalformedDocument",
                          f"app {app_id}: hybrid strategy needs 0 < min_state_size <= snapshot_size"))
        if sm.history_len < 0 or sm.convergence_rounds < 0 or sm.snapshot_size < 0:
            bad(Violation("MalformedDocument", f"app {app_id}: negative state-model value"))
        apps.append(ApplicationSpec(
            app_id=app_id,
            criticality=_optional(ad, "criticality", int, i, where),
            tasks=tuple(tasks),
            state_model=sm,
        ))

    if not 0 < timing.effective_bound <= 1:
        bad(Violation("MalformedDocument", "utilization bound must be in (0, 1]"))
    if timing.police_rounds < 1:
        bad(Violation("MalformedDocument", "police_rounds must be at least 1"))
    if timing.tolerance <= 0:
        bad(Violation("MalformedDocument", "tolerance must be positive"))
    if bus.max_load <= 0:
        bad(Violation("MalformedDocument", "bus max_load must be positive"))

    violations.extend(_architecture_violations(arch, lanes, apps))

    if violations:
        raise InvalidModel(violations)
    return SystemModel(architecture=arch, lanes=tuple(lanes), bus=bus,
                       applications=tuple(apps), timing=timing)


def _architecture_violations(arch, lanes, apps) -> list[Violation]:
    out = []
    spares = [
        (l.lane_id, p.proc_id) for l in lanes for p in l.processors
        if p.role is ProcessorRole.SPARE
    ]
    if arch is Architecture.FEDERATED_QUADRUPLEX:
        if len(apps) != 1 or (apps and len(apps[0].tasks) != 1):
            out.append(Violation("ArchitectureMismatch",
                                 "federated lane set carries exactly one single-task application"))
        if spares:
            out.append(Violation("ArchitectureMismatch",
                                 "federated lanes model no reconfigurable spares"))
    elif arch is Architecture.RESTRICTED_INTEGRATED:
        used = {}
        for a in apps:
            procs = {t.initial_proc for t in a.tasks}
            if len(procs) > 1:
                out.append(Violation(
                    "ArchitectureMismatch",
                    f"app {a.app_id} spans processors {sorted(procs)}; restricted allocation "
                    f"is one processor per application per lane"))
            for p in procs:
                if p in used:
                    out.append(Violation(
                        "ArchitectureMismatch",
                        f"processor {p} hosts apps {used[p]} and {a.app_id}; restricted "
                        f"granularity is a single application per processor"))
                used[p] = a.app_id
        for l in lanes:
            if not any(p.role is ProcessorRole.SPARE for p in l.processors):
                out.append(Violation("ArchitectureMismatch",
                                     f"lane {l.lane_id} has no spare processor"))
    return out


def initial_allocation(model: SystemModel) -> dict[tuple[int, int, int], tuple[int, int]]:
    """Map every (app_id, task_id, lane_id) copy to its (lane, processor) home.

    One copy of every task per lane, mirrored across lanes; spares are empty.
    """
    placing = {}
    for app in model.applications:
        for task in app.tasks:
            for lane in model.lanes:
                placing[(app.app_id, task.task_id, lane.lane_id)] = (lane.lane_id, task.initial_proc)
    return placing
