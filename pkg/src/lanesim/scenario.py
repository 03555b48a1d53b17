"""Scenario documents: parsing, validation, and seeded generation.

A scenario is one JSON object::

    {
      "format_version": 1,
      "system":   { ... lanes / bus / applications / timing ... },
      "faults":   [ {at_ms, kind, target{...}, ...}, ... ],
      "policies": { "pilot_gate": false, "pilot_approvals": [...] },
      "voter":    { "tolerance": 0.5, "consensus": "median_of_others" },
      "sim":      { "seed": 0, "horizon_ms": 500, ... }
    }

Times are milliseconds in the file and integer microseconds in memory.
Randomness is confined to the generator (and the optional BIT detection
probability); the engine itself draws nothing for a fully scripted run.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from . import model as m
from .fault import Consensus, FaultKind, FaultSpec, FaultTarget, TargetKind, VoterConfig
from .model import (Architecture, InvalidModel, MalformedDocument, SystemModel,
                    Violation, build_system, _enum, _optional, _require)
from .timebase import ms_to_us

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Approval:
    """Scripted pilot approval for readmitting a restabilized component.

    Matching is by subset: a component matches the approval when every
    field the approval names agrees with it.
    """

    at_us: int
    lane: int | None = None
    proc: int | None = None
    app: int | None = None
    task: int | None = None
    sensor: bool = False

    def matches(self, *, lane=None, proc=None, app=None, task=None, sensor=False) -> bool:
        for mine, theirs in ((self.lane, lane), (self.proc, proc),
                             (self.app, app), (self.task, task)):
            if mine is not None and mine != theirs:
                return False
        return self.sensor == sensor


@dataclass(frozen=True)
class Policies:
    pilot_gate: bool = False
    approvals: tuple[Approval, ...] = ()

    def approval_time(self, **component) -> int | None:
        for a in self.approvals:
            if a.matches(**component):
                return a.at_us
        return None


@dataclass(frozen=True)
class ReferenceSignal:
    """What healthy copies emit: base plus an optional per-ms ramp."""

    base: float = 0.0
    slope_per_ms: float = 0.0

    def value(self, t_us: int) -> float:
        return self.base + self.slope_per_ms * (t_us / 1000.0)


@dataclass(frozen=True)
class SimSettings:
    seed: int = 0
    horizon_us: int = 500_000
    bit_period_us: int = 25_000
    reference: ReferenceSignal = ReferenceSignal()
    enforce_admission: bool = True
    bit_detect_probability: float = 1.0


@dataclass
class Scenario:
    model: SystemModel
    faults: list[FaultSpec] = field(default_factory=list)
    policies: Policies = Policies()
    voter: VoterConfig = VoterConfig()
    settings: SimSettings = SimSettings()


# -- parsing -----------------------------------------------------------------

def _parse_target(doc: dict, where: str) -> FaultTarget:
    kind = _enum(TargetKind, _require(doc, "kind", str, where), where)
    fields = {}
    needed = {
        TargetKind.LANE: ("lane",),
        TargetKind.PROCESSOR: ("lane", "proc"),
        TargetKind.TASK: ("lane", "proc", "app", "task"),
        TargetKind.SENSOR: ("app", "lane"),
    }[kind]
    for name in needed:
        fields[name] = _require(doc, name, int, where)
    return FaultTarget(kind=kind, **fields)


def _parse_fault(doc: dict, index: int) -> FaultSpec:
    where = f"faults[{index}]"
    kind = _enum(FaultKind, _require(doc, "kind", str, where), where)
    duration = doc.get("duration_ms")
    return FaultSpec(
        fault_id=_optional(doc, "fault_id", int, index, where),
        at_us=ms_to_us(_require(doc, "at_ms", (int, float), where)),
        kind=kind,
        target=_parse_target(_require(doc, "target", dict, where), f"{where}.target"),
        duration_us=ms_to_us(duration) if duration is not None else None,
        value_skew=float(_optional(doc, "value_skew", (int, float), 0.0, where)),
        per_receiver=bool(doc.get("per_receiver", False)),
        bit_detectable=bool(doc.get("bit_detectable",
                                    kind is not FaultKind.BYZANTINE)),
    )


def _parse_policies(doc: dict) -> Policies:
    approvals = []
    for i, ad in enumerate(_optional(doc, "pilot_approvals", list, [], "policies")):
        where = f"policies.pilot_approvals[{i}]"
        approvals.append(Approval(
            at_us=ms_to_us(_require(ad, "at_ms", (int, float), where)),
            lane=_optional(ad, "lane", int, None, where),
            proc=_optional(ad, "proc", int, None, where),
            app=_optional(ad, "app", int, None, where),
            task=_optional(ad, "task", int, None, where),
            sensor=bool(ad.get("sensor", False)),
        ))
    return Policies(pilot_gate=bool(doc.get("pilot_gate", False)),
                    approvals=tuple(approvals))


def _parse_voter(doc: dict) -> VoterConfig:
    return VoterConfig(
        tolerance=float(_optional(doc, "tolerance", (int, float), 0.5, "voter")),
        consensus=_enum(Consensus,
                        _optional(doc, "consensus", str, "median_of_others", "voter"),
                        "voter.consensus"),
    )


def _parse_settings(doc: dict) -> SimSettings:
    where = "sim"
    ref_doc = _optional(doc, "reference", dict, {}, where)
    return SimSettings(
        seed=_optional(doc, "seed", int, 0, where),
        horizon_us=ms_to_us(_optional(doc, "horizon_ms", (int, float), 500, where)),
        bit_period_us=ms_to_us(_optional(doc, "bit_period_ms", (int, float), 25, where)),
        reference=ReferenceSignal(
            base=float(_optional(ref_doc, "value", (int, float), 0.0, "sim.reference")),
            slope_per_ms=float(_optional(ref_doc, "slope_per_ms", (int, float), 0.0,
                                         "sim.reference")),
        ),
        enforce_admission=bool(doc.get("enforce_admission", True)),
        bit_detect_probability=float(_optional(doc, "bit_detect_probability",
                                               (int, float), 1.0, where)),
    )


def parse_scenario(doc: dict) -> Scenario:
    """Build a validated Scenario; raises MalformedDocument / InvalidModel."""
    if not isinstance(doc, dict):
        raise MalformedDocument("scenario must be a JSON object")
    version = _require(doc, "format_version", int, "scenario")
    if version != FORMAT_VERSION:
        raise MalformedDocument(f"unsupported format_version {version!r}")
    system = build_system(_require(doc, "system", dict, "scenario"))
    sc = Scenario(
        model=system,
        faults=[_parse_fault(fd, i)
                for i, fd in enumerate(_optional(doc, "faults", list, [], "scenario"))],
        policies=_parse_policies(_optional(doc, "policies", dict, {}, "scenario")),
        voter=_parse_voter(_optional(doc, "voter", dict, {}, "scenario")),
        settings=_parse_settings(_optional(doc, "sim", dict, {}, "scenario")),
    )
    violations = scenario_violations(sc)
    if violations:
        raise InvalidModel(violations)
    return sc


def scenario_violations(sc: Scenario) -> list[Violation]:
    """Cross-reference checks that need the whole scenario in hand."""
    out = []
    bad = out.append
    if sc.settings.horizon_us <= 0:
        bad(Violation("MalformedDocument", "horizon must be positive"))
    lanes = set(sc.model.lane_ids)
    apps = {a.app_id: a for a in sc.model.applications}
    for f in sc.faults:
        name = f"fault {f.fault_id}"
        if f.at_us >= sc.settings.horizon_us:
            bad(Violation("MalformedDocument", f"{name} fires at/after the horizon"))
        if f.kind is FaultKind.TRANSIENT and (f.duration_us is None or f.duration_us <= 0):
            bad(Violation("MalformedDocument", f"{name}: transient faults need duration_ms > 0"))
        if f.kind is not FaultKind.TRANSIENT and f.duration_us is not None:
            bad(Violation("MalformedDocument", f"{name}: only transient faults have a duration"))
        if f.kind is FaultKind.BYZANTINE and f.value_skew == 0.0:
            bad(Violation("MalformedDocument", f"{name}: byzantine faults need value_skew"))
        t = f.target
        if t.kind is TargetKind.SENSOR:
            if f.kind is FaultKind.BYZANTINE:
                bad(Violation("MalformedDocument", f"{name}: sensor faults are not byzantine"))
            if f.value_skew == 0.0:
                bad(Violation("MalformedDocument", f"{name}: sensor faults need value_skew"))
        if t.lane is not None and t.lane not in lanes:
            bad(Violation("MalformedDocument", f"{name}: unknown lane {t.lane}"))
        if t.proc is not None and sc.model.lanes:
            try:
                sc.model.lanes[0].processor(t.proc)
            except KeyError:
                bad(Violation("MalformedDocument", f"{name}: unknown processor {t.proc}"))
        if t.app is not None:
            if t.app not in apps:
                bad(Violation("MalformedDocument", f"{name}: unknown app {t.app}"))
            elif t.task is not None and all(
                    x.task_id != t.task for x in apps[t.app].tasks):
                bad(Violation("MalformedDocument", f"{name}: unknown task {t.task}"))
    for a in sc.policies.approvals:
        if a.lane is not None and a.lane not in lanes:
            bad(Violation("MalformedDocument", f"approval at {a.at_us}us: unknown lane {a.lane}"))
        if a.app is not None and a.app not in apps:
            bad(Violation("MalformedDocument", f"approval at {a.at_us}us: unknown app {a.app}"))
    if sc.voter.tolerance <= 0:
        bad(Violation("MalformedDocument", "voter tolerance must be positive"))
    if not 0.0 <= sc.settings.bit_detect_probability <= 1.0:
        bad(Violation("MalformedDocument", "bit_detect_probability must be in [0, 1]"))
    if sc.settings.bit_period_us <= 0:
        bad(Violation("MalformedDocument", "bit_period_ms must be positive"))
    return out


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(json.load(fh))


# -- generation --------------------------------------------------------------

# Divisor-friendly periods (ms) keep one hyperperiod short: lcm = 200 ms.
_PERIODS_MS = (10, 20, 25, 40, 50, 100)


def _uunifast(rng: random.Random, n: int, total: float) -> list[float]:
    """Classic utilization splitter: n shares summing to total."""
    shares = []
    remaining = total
    for i in range(1, n):
        nxt = remaining * rng.random() ** (1.0 / (n - i))
        shares.append(remaining - nxt)
        remaining = nxt
    shares.append(remaining)
    return shares


def generate_scenario(lanes: int = 3, procs: int = 3, apps: int = 2,
                      target_utilization: float = 0.5, seed: int = 0,
                      infeasible: bool = False, faults: int = 0,
                      horizon_ms: float | None = None) -> dict:
    """Emit a scenario document with per-processor utilization at the target.

    One processor per lane is reserved as a spare; the rest carry task sets
    drawn to the target utilization (strictly above 1.0 when ``infeasible``,
    which also disables admission enforcement so the run can demonstrate
    deadline misses). ``faults`` > 0 adds that many seeded random fault
    scripts. The output always round-trips through validation.
    """
    if not 2 <= lanes <= 4:
        raise ValueError("lanes must be 2..4")
    if procs < 2:
        raise ValueError("need at least 2 processors per lane (one spare)")
    if apps < 1:
        raise ValueError("need at least one application slot")
    if not infeasible and not 0.0 <= target_utilization <= 1.0:
        raise ValueError("target utilization must be within [0, 1]")

    rng = random.Random(seed)
    allocated = list(range(procs - 1))
    target = rng.uniform(1.05, 1.25) if infeasible else target_utilization

    tasks = []           # (proc, wcet_us, period_us)
    next_task_id = 1
    if target > 0:
        for proc in allocated:
            n = rng.randint(3, 5)
            shares = _uunifast(rng, n, target)
            # an overloaded split must still leave every task with
            # wcet <= period, so redraw rather than let one share pass 1
            while infeasible and max(shares) > 0.95:
                shares = _uunifast(rng, n, target)
            for share in shares:
                period_ms = rng.choice(_PERIODS_MS)
                period_us = period_ms * 1000
                # flooring keeps a feasible draw's sum at or under the target
                wcet_us = max(1, math.floor(share * period_us))
                if not infeasible:
                    wcet_us = min(wcet_us, period_us)
                tasks.append((proc, wcet_us, period_us))

    app_docs = []
    if tasks:
        n_apps = min(apps, len(tasks))
        buckets: list[list] = [[] for _ in range(n_apps)]
        for i, t in enumerate(tasks):
            buckets[i % n_apps].append(t)
        for app_index, bucket in enumerate(buckets):
            task_docs = []
            for proc, wcet_us, period_us in bucket:
                task_docs.append({
                    "task_id": next_task_id,
                    "wcet_ms": wcet_us / 1000,
                    "period_ms": period_us / 1000,
                    "deadline_ms": period_us / 1000,
                    "initial_proc": proc,
                    "code_size": rng.randint(10, 60),
                    "messages": [{"msg_id": 1, "size": 1, "period_ms": period_us / 1000}],
                })
                next_task_id += 1
            app_docs.append({
                "app_id": app_index + 1,
                "criticality": app_index,
                "state_model": {"strategy": "transfer",
                                "snapshot_size": rng.randint(20, 100)},
                "tasks": task_docs,
            })

    hyper_ms = 200
    horizon = horizon_ms if horizon_ms is not None else hyper_ms
    doc = {
        "format_version": FORMAT_VERSION,
        "system": {
            "architecture": Architecture.FULLY_INTEGRATED.value,
            "lanes": [
                {"lane_id": lane,
                 "processors": [
                     {"proc_id": p,
                      "role": "spare" if p == procs - 1 else "allocated"}
                     for p in range(procs)
                 ]}
                for lane in range(lanes)
            ],
            "bus": {"max_load": 50},
            "applications": app_docs,
            "timing": {"utilization_bound": 0.69},
        },
        "faults": [],
        "policies": {"pilot_gate": False, "pilot_approvals": []},
        "voter": {"tolerance": 0.5, "consensus": "median_of_others"},
        "sim": {
            "seed": seed,
            "horizon_ms": horizon,
            "bit_period_ms": 50,
            "enforce_admission": not infeasible,
            "reference": {"value": 0.0},
        },
    }
    if faults > 0 and app_docs:
        doc["faults"] = _random_faults(rng, doc, faults)
    return doc


def _random_faults(rng: random.Random, doc: dict, count: int) -> list[dict]:
    lanes = [l["lane_id"] for l in doc["system"]["lanes"]]
    apps = doc["system"]["applications"]
    horizon_ms = doc["sim"]["horizon_ms"]
    out = []
    for _ in range(count):
        at_ms = round(rng.uniform(5, horizon_ms * 0.5), 1)
        kind = rng.choice(["permanent", "permanent", "transient", "byzantine"])
        roll = rng.random()
        app = rng.choice(apps)
        task = rng.choice(app["tasks"])
        lane = rng.choice(lanes)
        if roll < 0.2:
            target = {"kind": "lane", "lane": lane}
        elif roll < 0.6:
            target = {"kind": "processor", "lane": lane,
                      "proc": task["initial_proc"]}
        elif roll < 0.85:
            target = {"kind": "task", "lane": lane, "proc": task["initial_proc"],
                      "app": app["app_id"], "task": task["task_id"]}
        else:
            kind = rng.choice(["permanent", "transient"])
            target = {"kind": "sensor", "app": app["app_id"], "lane": lane}
        fd = {"at_ms": at_ms, "kind": kind, "target": target}
        if kind == "transient":
            fd["duration_ms"] = round(rng.uniform(10, 40), 1)
        if kind == "byzantine":
            fd["value_skew"] = round(rng.uniform(1.5, 9.0), 2)
            fd["per_receiver"] = rng.random() < 0.5
        if target["kind"] == "sensor":
            fd["value_skew"] = round(rng.uniform(1.5, 9.0), 2)
        out.append(fd)
    out.sort(key=lambda f: f["at_ms"])
    return out


def dump_scenario(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
