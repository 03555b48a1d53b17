"""Shared scenario builders.

The reference layout used throughout the suite is a triplex of lanes,
each with three worker processors plus one spare, and three single-task
applications arranged so that application i lives on worker column i-1.
A processor fault therefore hits exactly one copy of one application,
while a lane fault hits one copy of every application at once.
"""

from lanesim.scenario import parse_scenario


def triplex_system(**overrides):
    doc = {
        "architecture": "restricted_integrated",
        "lanes": [{"lane_id": lane, "processors": [
            {"proc_id": 0}, {"proc_id": 1}, {"proc_id": 2},
            {"proc_id": 3, "role": "spare"}]} for lane in range(3)],
        "bus": {"max_load": 10},
        "applications": [
            {"app_id": i, "criticality": i - 1,
             "state_model": {"strategy": "transfer", "snapshot_size": 80},
             "tasks": [{"task_id": i, "wcet_ms": 2, "period_ms": 20,
                        "deadline_ms": 20, "initial_proc": i - 1,
                        "code_size": 40,
                        "messages": [{"msg_id": 1, "size": 1,
                                      "period_ms": 20}]}]}
            for i in (1, 2, 3)],
        "timing": {"utilization_bound": 0.69, "police_rounds": 3,
                   "tolerance": 0.5},
    }
    doc.update(overrides)
    return doc


def single_app_system(state_model=None, msg_size=1, wcet_ms=2, lanes=3,
                      max_load=10, tasks=None):
    """One application on lanes x (two workers + one spare)."""
    return {
        "architecture": "restricted_integrated",
        "lanes": [{"lane_id": lane, "processors": [
            {"proc_id": 0}, {"proc_id": 1},
            {"proc_id": 2, "role": "spare"}]} for lane in range(lanes)],
        "bus": {"max_load": max_load},
        "applications": [
            {"app_id": 1, "criticality": 0,
             "state_model": state_model or {"strategy": "transfer",
                                            "snapshot_size": 80},
             "tasks": tasks or [
                 {"task_id": 1, "wcet_ms": wcet_ms, "period_ms": 20,
                  "deadline_ms": 20, "initial_proc": 0, "code_size": 40,
                  "messages": [{"msg_id": 1, "size": msg_size,
                                "period_ms": 20}]}]}],
        "timing": {"utilization_bound": 0.69, "police_rounds": 3,
                   "tolerance": 0.5},
    }


def scenario_doc(faults, system=None, horizon_ms=200, seed=1,
                 policies=None, sim=None):
    doc = {
        "format_version": 1,
        "system": system if system is not None else triplex_system(),
        "faults": faults,
        "sim": dict({"seed": seed, "horizon_ms": horizon_ms}, **(sim or {})),
    }
    if policies is not None:
        doc["policies"] = policies
    return doc


def scen(faults, **kw):
    return parse_scenario(scenario_doc(faults, **kw))


def proc_fault(at_ms=50, lane=0, proc=0, kind="permanent", **extra):
    fault = {"at_ms": at_ms, "kind": kind, "bit_detectable": False,
             "target": {"kind": "processor", "lane": lane, "proc": proc}}
    fault.update(extra)
    return fault


def lane_fault(at_ms=50, lane=0, **extra):
    fault = {"at_ms": at_ms, "kind": "permanent", "bit_detectable": False,
             "target": {"kind": "lane", "lane": lane}}
    fault.update(extra)
    return fault
