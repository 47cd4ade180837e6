import pytest
from hypothesis import given, settings, strategies as st

from confab.errors import ConfigError, SafetyViolation
from confab.model import DeviceDescription, initial_state
from confab.package import ConfigurationArtifact, ConfigurationPackage, Instruction, ShippingMetadata, seal
from confab.sim import Fault, PowerModel, SimDevice, execute_package

from helpers import commission_doc, device_entry, lab_fleet_doc, lab_ofm, make_desc, make_world, provide, set_value

RATE = "capabilities/sensing/polling_rate"
TELEMETRY = "capabilities/communication/telemetry"


def sim_device(device_id="d1", exec_drain=0, **desc):
    ofm = lab_ofm()
    d = DeviceDescription.from_dict(make_desc(device_id, **desc))
    return SimDevice(d, initial_state(d, ofm), power=PowerModel(exec_drain_pct=exec_drain)), ofm


def package_bytes(device="d1", instructions=None):
    instructions = instructions or (Instruction("set", RATE, 10), Instruction("verify", RATE, 10))
    return seal(ConfigurationPackage("", "c1", device, ConfigurationArtifact(tuple(instructions)),
                                     ShippingMetadata(20, True, "normal", 100), "snap-0")).to_bytes()


def kinds(world, kind):
    return [e for e in world.events if e["kind"] == kind]


def at(tick, doc):
    return {"at": tick, "commission": doc}


class TestExecutePackage:
    def test_applies_and_verifies(self):
        dev, ofm = sim_device()
        assert execute_package(dev, package_bytes(), ofm, 0) == (True, "")
        assert dev.state.current_values[RATE] == 10

    def test_tampered_untouched(self):
        dev, ofm = sim_device()
        before = dev.state
        raw = bytearray(package_bytes())
        raw[40] ^= 0x20
        ok, detail = execute_package(dev, bytes(raw), ofm, 0)
        assert not ok and detail.startswith("integrity")
        assert dev.state == before

    def test_wrong_secret(self):
        dev, ofm = sim_device()
        ok, detail = execute_package(dev, package_bytes(), ofm, 0, secret=b"nope")
        assert (ok, detail) == (False, "integrity: bad mac")

    def test_addressed_elsewhere(self):
        dev, ofm = sim_device()
        assert not execute_package(dev, package_bytes("d2"), ofm, 0)[0]

    def test_exec_drain(self):
        dev, ofm = sim_device(exec_drain=3, supply="battery", charge=10)
        execute_package(dev, package_bytes(), ofm, 0)
        assert dev.state.charge_pct == 7

    def test_drain_clamps_at_zero(self):
        dev, ofm = sim_device(exec_drain=30, supply="battery", charge=10)
        execute_package(dev, package_bytes(), ofm, 0)
        assert dev.state.charge_pct == 0

    def test_mains_never_drains(self):
        dev, ofm = sim_device(exec_drain=3, supply="mains", charge=10)
        execute_package(dev, package_bytes(), ofm, 0)
        assert dev.state.charge_pct == 10

    def test_injected_failure(self):
        dev, ofm = sim_device()
        dev.faults.append(Fault("d1", 0, "exec-fail", 2))
        assert execute_package(dev, package_bytes(), ofm, 1) == (False, "injected")
        assert dev.state.current_values[RATE] == 50
        assert execute_package(dev, package_bytes(), ofm, 2)[0]

    def test_all_or_nothing(self):
        dev, ofm = sim_device()
        ok, detail = execute_package(dev, package_bytes(instructions=[
            Instruction("set", RATE, 10), Instruction("verify", RATE, 11)]), ofm, 0)
        assert not ok and "verify failed" in detail
        assert dev.state.current_values[RATE] == 50

    def test_out_of_domain_refused(self):
        dev, ofm = sim_device()
        ok, detail = execute_package(dev, package_bytes(instructions=[Instruction("set", RATE, 500)]), ofm, 0)
        assert not ok and "outside" in detail

    def test_service_commands(self):
        dev, ofm = sim_device()
        ok, _ = execute_package(dev, package_bytes(instructions=[
            Instruction("exec", "service enable diagnostics 3"),
            Instruction("exec", "service disable telemetry"),
            Instruction("verify", "service:diagnostics", 2)]), ofm, 0)
        assert ok and dev.state.provided_services == {"diagnostics": 3}

    def test_binding_follows_value(self):
        dev, ofm = sim_device()
        execute_package(dev, package_bytes(instructions=[Instruction("set", TELEMETRY, False)]), ofm, 0)
        assert dev.state.service_level("telemetry") == 0

    def test_unsupported_command(self):
        dev, ofm = sim_device()
        assert not execute_package(dev, package_bytes(instructions=[Instruction("exec", "rm -rf /")]), ofm, 0)[0]


class TestReports:
    def test_periodic_schedule(self):
        w = make_world(lab_fleet_doc([device_entry("d1", report_period=10)], []))
        w.run(25)
        assert [e["tick"] for e in kinds(w, "state-report")] == [0, 10, 20]

    def test_offline_goes_stale(self):
        w = make_world(lab_fleet_doc([device_entry("d1", report_period=10)], []),
                       faults=[{"device": "d1", "at": 11, "kind": "offline", "duration": 20}],
                       config={"staleness_threshold": 15})
        w.run(29)
        view = w.registry.get_state("d1", 28)
        assert view.state.last_updated == 10 and not view.fresh
        w.run(20)
        assert w.registry.get_state("d1", 40).state.last_updated == 40

    def test_dropped_report(self):
        w = make_world(lab_fleet_doc([device_entry("d1", report_period=5)], []),
                       faults=[{"device": "d1", "at": 5, "kind": "drop-message"}])
        w.run(11)
        assert [e["tick"] for e in kinds(w, "state-report")] == [0, 10]
        assert [e["tick"] for e in kinds(w, "report-dropped")] == [5]

    def test_report_after_reconfiguration(self):
        w = make_world(commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))])
        w.run(5)
        assert w.intake.status("c1") == "completed"
        assert w.registry.get_state("d1", 4).state.current_values[RATE] == 10


class TestWorld:
    def test_empty_world_is_silent(self):
        w = make_world(lab_fleet_doc([], []))
        assert w.run(20) == []

    def test_idle_fleet_with_slow_reports(self):
        w = make_world(lab_fleet_doc([device_entry("d1", report_period=50, report_phase=7)], []))
        w.run(7)
        assert w.events == []

    def test_pipeline_phase_order(self):
        w = make_world(commissions=[at(0, commission_doc("c1", ["S1"], [set_value("polling_rate", 10),
                                                                        provide("diagnostics", 1)]))])
        w.run(20)
        keys = [(e["tick"], e["phase"], e["seq"]) for e in w.events]
        assert keys == sorted(keys)
        assert [e["seq"] for e in w.events] == list(range(1, len(w.events) + 1))
        for d in ("d1", "d2", "d3"):
            chain = ["dispatch", "built", "transfer", "executed", "receipt"]
            firsts = []
            for kind in chain:
                evs = [e for e in w.events if e["kind"] == kind
                       and d in (e["data"].get("device"), e["data"].get("receiver"), e["data"].get("device_id"))]
                assert evs, (d, kind)
                firsts.append(evs[0]["seq"])
            assert firsts == sorted(firsts)
        assert w.intake.status("c1") == "completed"

    def test_gate_denies_then_releases(self):
        fleet = lab_fleet_doc(scenarios=[{"scenario_id": "S1", "members": ["d1", "d2", "d3"],
                                          "constraints": ["count(telemetry >= 1) >= 2"]}])
        w = make_world(fleet, commissions=[
            at(0, commission_doc("off-1", ["d1"], [set_value("communication/telemetry", False)], latest=20,
                                 revert_at=30)),
            at(1, commission_doc("off-2", ["d2"], [set_value("communication/telemetry", False)])),
        ])
        w.run(60)
        assert w.denials.get("off-2", 0) > 0
        assert {e["data"]["detail"] for e in kinds(w, "gate-deny")} == {"S1/c0"}
        assert w.intake.status("off-1") == "reverted"
        assert w.intake.status("off-2") == "completed"

    def test_retries_absorb_transient_failure(self):
        w = make_world(lab_fleet_doc([device_entry("d1")], []),
                       commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d1", "at": 1, "kind": "exec-fail", "duration": 2}])
        w.run(6)
        assert [e["data"]["ok"] for e in kinds(w, "executed")] == [False, False, True]
        assert w.intake.status("c1") == "completed"

    def test_retry_budget_exhausted(self):
        w = make_world(lab_fleet_doc([device_entry("d1")], []),
                       commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d1", "at": 0, "kind": "exec-fail", "duration": 10}],
                       config={"retry_budget": 2})
        w.run(6)
        assert len(kinds(w, "executed")) == 2
        assert w.intake.status("c1") == "rejected"
        assert w.device_state("d1").current_values[RATE] == 50

    def test_tamper_in_transit(self):
        w = make_world(lab_fleet_doc([device_entry("d1")], []),
                       commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d1", "at": 0, "kind": "tamper"}])
        w.run(6)
        assert all(e["data"]["detail"].startswith("integrity") for e in kinds(w, "executed"))
        assert w.device_state("d1").current_values[RATE] == 50

    def test_busy_defers_when_interrupts_disallowed(self):
        w = make_world(lab_fleet_doc([device_entry("d1")], []),
                       commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d1", "at": 1, "kind": "busy", "duration": 3}],
                       config={"factory": {"interrupt_allowed": False}})
        w.run(6)
        assert [e["tick"] for e in kinds(w, "execution-deferred")] == [1, 2, 3]
        assert [e["tick"] for e in kinds(w, "executed")] == [4]

    def test_busy_ignored_when_interrupts_allowed(self):
        w = make_world(lab_fleet_doc([device_entry("d1")], []),
                       commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d1", "at": 1, "kind": "busy", "duration": 3}])
        w.run(3)
        assert [e["tick"] for e in kinds(w, "executed")] == [1]

    def test_revert_restores_values(self):
        w = make_world(commissions=[at(0, commission_doc("c1", ["S1"], [set_value("polling_rate", 10)], latest=30,
                                                         revert_at=40))])
        w.run(60)
        assert w.intake.status("c1") == "reverted"
        assert w.intake.status("c1~revert") == "completed"
        for d in ("d1", "d2", "d3"):
            assert w.registry.get_state(d, 59).state.current_values[RATE] == 50

    def test_partial_failure_auto_revert(self):
        w = make_world(commissions=[at(0, commission_doc("c1", ["S1"], [set_value("polling_rate", 10)]))],
                       faults=[{"device": "d3", "at": 0, "kind": "exec-fail", "duration": 50}],
                       config={"auto_revert_partial": True})
        w.run(30)
        assert w.intake.status("c1") == "rejected"
        assert w.intake.status("c1~revert") == "completed"
        assert {w.device_state(d).current_values[RATE] for d in ("d1", "d2", "d3")} == {50}

    def test_agent_rule_submits_internal_requirement(self):
        rule = {"when": "charge_pct < 30", "commission": {
            "importance": 9, "required": [set_value("sensing/mode", "eco")]}}
        dev = device_entry("d1", supply="battery", charge=40, mode="perf", power={"idle_drain_pct_per_tick": 2},
                           rules=[rule])
        w = make_world(lab_fleet_doc([dev], []), config={"factory": {"required_charge_pct": 0}})
        w.run(12)
        fired = kinds(w, "internal-requirement")
        assert [e["tick"] for e in fired] == [5]
        assert w.intake.status("d1-rule0-t5") == "completed"
        assert w.device_state("d1").current_values["capabilities/sensing/mode"] == "eco"

    def test_market_world_conserves(self):
        policy = {"kind": "market", "renewal_period": 5, "renewal_amount": 4,
                  "participants": {"ops": {"weight": 1, "balance": 10}, "lab": {"weight": 0.5, "balance": 0}}}
        w = make_world(policy=policy, commissions=[
            at(0, commission_doc("a", ["d1"], [set_value("polling_rate", 10)], importance=6, source="ops")),
            at(0, commission_doc("b", ["d2"], [set_value("polling_rate", 11)], importance=3, source="lab")),
        ])
        w.run(40)
        assert w.scheduler.conservation_holds()
        assert w.intake.status("a") == "completed" and w.intake.status("b") == "completed"
        b_dispatch = next(e for e in w.events if e["kind"] == "dispatch" and e["data"]["commission"] == "b")
        assert b_dispatch["tick"] == 5  # renewals at 0 and 5 give lab 2 + 2 >= its bid of 3

    def test_audit_raises_on_environment_breach(self):
        fleet = lab_fleet_doc([device_entry("d1", supply="battery", charge=60,
                                            power={"idle_drain_pct_per_tick": 5})],
                              [{"scenario_id": "S1", "members": ["d1"], "constraints": ["charge_pct >= 50"]}])
        w = make_world(fleet)
        with pytest.raises(SafetyViolation):
            w.run(10)
        assert kinds(w, "audit-violation")

    def test_strict_submit(self):
        from confab.commissioning import Commission
        from confab.errors import CommissionRejected

        w = make_world()
        with pytest.raises(CommissionRejected):
            w.submit(Commission.from_dict(commission_doc("x", ["ghost"], [set_value("polling_rate", 1)])), strict=True)
        assert kinds(w, "commission-rejected")


class TestDeterminism:
    def doc(self, seed):
        return dict(
            commissions=[at(t, commission_doc(f"c{t}", ["S1"], [set_value("polling_rate", 10 + t)], latest=200))
                         for t in range(0, 30, 3)],
            faults=[{"device": "d2", "at": 0, "kind": "drop-message", "duration": 200, "probability": 0.5},
                    {"device": "d3", "at": 0, "kind": "exec-fail", "duration": 200, "probability": 0.3}],
            strategy="seed", seed=seed)

    def test_identical_seed_identical_log(self):
        a, b = make_world(**self.doc(3)), make_world(**self.doc(3))
        a.run(120)
        b.run(120)
        assert a.event_lines() == b.event_lines()

    def test_seed_drives_random_faults(self):
        logs = set()
        for seed in range(4):
            w = make_world(**self.doc(seed))
            w.run(120)
            logs.add("\n".join(w.event_lines()))
        assert len(logs) > 1

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            Fault("d1", 0, "busy", probability=0)

    def test_unknown_fault_kind(self):
        with pytest.raises(ConfigError):
            Fault("d1", 0, "meteor")

    def test_write_log_is_lf_jsonl(self, tmp_path):
        w = make_world(commissions=[at(0, commission_doc("c1", ["d1"], [set_value("polling_rate", 10)]))])
        w.run(5)
        w.write_log(tmp_path / "events.jsonl")
        raw = (tmp_path / "events.jsonl").read_bytes()
        assert raw.endswith(b"\n") and b"\r" not in raw
        assert raw.decode().splitlines() == w.event_lines()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.sampled_from(["d1", "d2", "d3", "S1"]), st.integers(1, 120),
                          st.integers(1, 9)), max_size=6),
       st.sampled_from(["push", "pull", "seed"]), st.sampled_from(["static", "fifo"]))
def test_random_runs_keep_invariants(specs, strategy, policy):
    commissions = [at(t, commission_doc(f"c{i}", [target], [set_value("polling_rate", min(rate, 100))],
                                        importance=imp, earliest=t, latest=t + 60))
                   for i, (t, target, rate, imp) in enumerate(specs)]
    w = make_world(commissions=commissions, strategy=strategy, policy=policy)
    w.run(80)  # the audit raises on any scenario violation
    for record in w.intake.records.values():
        for prev, nxt in zip(record.log, record.log[1:]):
            assert nxt.tick >= prev.tick and nxt.seq > prev.seq
        if record.status == "completed":
            for d in record.devices:
                assert w.device_state(d).current_values[RATE] in {
                    p.value for r in w.intake.records.values() for p in r.commission.required}
