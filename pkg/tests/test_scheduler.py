from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from confab.commissioning import Commission, CommissionRecord, PostCondition
from confab.constraints import BusinessScenario, Constraint
from confab.errors import ConfigError
from confab.model import DeviceDescription, initial_state
from confab.registry import DeviceRegistry
from confab.scheduler import Participant, Policy, Scheduler

from helpers import lab_ofm, make_desc
from oracles import dispatch_order, renewal

RATE = "capabilities/sensing/polling_rate"


def make_registry(ids=("d1",), services=None, threshold=30):
    ofm = lab_ofm()
    reg = DeviceRegistry(ofm, threshold)
    for d in ids:
        desc = DeviceDescription.from_dict(make_desc(d))
        reg.register_device(desc, initial_state(desc, ofm, (services or {}).get(d)))
    return reg


def record(cid, importance=1, submitted_at=0, source="operator", devices=("d1",), earliest=0, latest=100,
           required=None):
    c = Commission(cid, source, importance, earliest, latest, tuple(devices),
                   tuple(required or [PostCondition.set_value(RATE, 10)]), submitted_at=submitted_at)
    return CommissionRecord(c, devices=tuple(devices))


def drain(s: Scheduler, device="d1", now=0):
    order = []
    while (cid := s.select_next(device, now)) is not None:
        s.dispatch(cid, device, now)
        order.append(cid)
    return order


class TestSelectNext:
    def test_static_argmax(self):
        s = Scheduler(Policy("static"), make_registry())
        s.enqueue(record("lo", 5))
        s.enqueue(record("hi", 9))
        assert s.select_next("d1", 0) == "hi"

    def test_market_winner_pays(self):
        s = Scheduler(Policy("market"), make_registry(), [Participant("A", 10), Participant("B", 5)])
        s.enqueue(record("a", 7, source="A"))
        s.enqueue(record("b", 5, source="B"))
        cid = s.select_next("d1", 0)
        assert cid == "a"
        assert s.dispatch(cid, "d1", 0) == 7
        assert s.balances() == {"A": 3, "B": 5}

    def test_fifo_minimum_submitted(self):
        s = Scheduler(Policy("fifo"), make_registry())
        for cid, t in [("t4", 4), ("t2", 2), ("t9", 9)]:
            s.enqueue(record(cid, submitted_at=t, importance=t))
        assert s.select_next("d1", 10) == "t2"

    def test_static_tie_break_on_submission(self):
        s = Scheduler(Policy("static"), make_registry())
        s.enqueue(record("late", 7, submitted_at=3))
        s.enqueue(record("early", 7, submitted_at=1))
        assert s.select_next("d1", 5) == "early"

    def test_window_eligibility(self):
        s = Scheduler(Policy("static"), make_registry())
        s.enqueue(record("future", 9, earliest=10, latest=20))
        assert s.select_next("d1", 5) is None
        assert s.select_next("d1", 10) == "future"
        assert s.select_next("d1", 21) is None

    def test_empty_queue(self):
        assert Scheduler(Policy("static"), make_registry()).select_next("d1", 0) is None

    def test_select_is_pure(self):
        s = Scheduler(Policy("market"), make_registry(), [Participant("A", 10)])
        s.enqueue(record("a", 4, source="A"))
        assert s.select_next("d1", 0) == s.select_next("d1", 0) == "a"
        assert s.balances() == {"A": 10}

    def test_bid_above_balance_ineligible(self):
        s = Scheduler(Policy("market"), make_registry(), [Participant("A", 3)])
        s.enqueue(record("a", 4, source="A"))
        assert s.select_next("d1", 0) is None

    def test_unknown_participant_has_nothing(self):
        s = Scheduler(Policy("market"), make_registry())
        s.enqueue(record("a", 1, source="stranger"))
        assert s.select_next("d1", 0) is None

    def test_system_source_exempt(self):
        s = Scheduler(Policy("market"), make_registry())
        s.enqueue(record("r", 9, source="system"))
        assert s.select_next("d1", 0) == "r"
        assert s.dispatch("r", "d1", 0) == 0

    def test_multi_device_commission_pays_once(self):
        reg = make_registry(("d1", "d2"))
        s = Scheduler(Policy("market"), reg, [Participant("A", 10)])
        s.enqueue(record("a", 4, source="A", devices=("d1", "d2")))
        assert s.dispatch("a", "d1", 0) == 4
        assert s.select_next("d2", 0) == "a"
        assert s.dispatch("a", "d2", 0) == 0
        assert s.balances() == {"A": 6}

    def test_one_entry_per_device(self):
        s = Scheduler(Policy("static"), make_registry(("d1", "d2")))
        r = record("a", devices=("d1", "d2"))
        s.enqueue(r)
        s.enqueue(r)
        assert [e.device_id for e in s.pending()] == ["d1", "d2"]

    def test_expire(self):
        s = Scheduler(Policy("static"), make_registry())
        s.enqueue(record("old", latest=5))
        s.enqueue(record("new", latest=50))
        assert [e.commission_id for e in s.expire(6)] == ["old"]
        assert [e.commission_id for e in s.pending("d1")] == ["new"]


class TestRenewal:
    def test_weighted_amount(self):
        s = Scheduler(Policy("market", 10, 10), make_registry(), [Participant("A", 0, Fraction(3, 2))])
        assert s.renew_currency(0) == {"A": 15}

    def test_two_renewals(self):
        s = Scheduler(Policy("market", 10, 10), make_registry(), [Participant("A", 0, Fraction(1))])
        s.renew_currency(10)
        s.renew_currency(20)
        assert s.balances() == {"A": 20}

    def test_off_period_noop(self):
        s = Scheduler(Policy("market", 10, 10), make_registry(), [Participant("A", 5)])
        assert s.renew_currency(7) == {}
        assert s.balances() == {"A": 5}

    @given(st.integers(0, 1000), st.fractions(min_value=Fraction(1, 100), max_value=10))
    def test_floor_of_exact_product(self, amount, weight):
        s = Scheduler(Policy("market", 1, amount), make_registry(), [Participant("A", 0, weight)])
        assert s.renew_currency(0)["A"] == renewal(amount, weight)

    def test_participant_validation(self):
        with pytest.raises(ConfigError):
            Participant("A", -1)
        with pytest.raises(ConfigError):
            Participant("A", 0, Fraction(0))


class TestSafetyGate:
    def gate_setup(self, removes_only_provider: bool):
        services = {"d1": {"temp-sensing": 2}, "d2": {} if removes_only_provider else {"temp-sensing": 1}}
        reg = make_registry(("d1", "d2", "d3"), services)
        reg.add_scenario(BusinessScenario("S1", frozenset({"d1", "d2"}),
                                          (Constraint("count(temp-sensing >= 1) >= 1", "S1/c0"),)))
        return Scheduler(Policy("static"), reg)

    def disable(self, device):
        # a provide-service cannot remove a service; use a raw state edit to model the projection instead
        return Commission("c", "op", 1, 0, 100, (device,), (PostCondition.set_value(RATE, 10),))

    def test_allow_when_constraint_kept(self):
        s = self.gate_setup(False)
        assert s.safety_gate(self.disable("d1"), "d1", 0)

    def test_deny_names_constraint(self):
        reg = make_registry(("d1", "d2"), {"d1": {"telemetry": 2}})
        reg.add_scenario(BusinessScenario("S1", frozenset({"d1", "d2"}),
                                          (Constraint("count(telemetry >= 1) >= 2", "S1/c0"),)))
        s = Scheduler(Policy("static"), reg)
        off = Commission("c", "op", 1, 0, 100, ("d1",),
                         (PostCondition.set_value("capabilities/communication/telemetry", False),))
        decision = s.safety_gate(off, "d1", 0)
        assert not decision and decision.reason == "constraint" and decision.detail == "S1/c0"

    def test_removing_only_provider_denied(self):
        reg = make_registry(("d1", "d2"))  # both provide telemetry@2 via the binding
        reg.add_scenario(BusinessScenario("S1", frozenset({"d1", "d2"}),
                                          (Constraint("count(telemetry) >= 1", "S1/c0"),)))
        s = Scheduler(Policy("static"), reg)
        off = Commission("c", "op", 1, 0, 100, ("d1", "d2"),
                         (PostCondition.set_value("capabilities/communication/telemetry", False),))
        assert s.safety_gate(off, "d1", 0)  # d2 still provides
        state = reg.get_state("d2", 0).state
        reg.update_state("d2", state.with_updates(
            current_values={**state.current_values, "capabilities/communication/telemetry": False},
            provided_services={}, last_updated=1))
        decision = s.safety_gate(off, "d1", 1)
        assert not decision and decision.detail == "S1/c0"

    def test_device_in_no_scenario(self):
        s = self.gate_setup(True)
        assert s.safety_gate(self.disable("d3"), "d3", 0)

    def test_stale_state(self):
        reg = make_registry(threshold=5)
        s = Scheduler(Policy("static"), reg)
        decision = s.safety_gate(self.disable("d1"), "d1", 6)
        assert decision.reason == "stale-state"

    def test_model_error(self):
        reg = make_registry(("d1",))
        reg.add_scenario(BusinessScenario("S1", frozenset({"d1"}), (Constraint("no_such_field > 1", "S1/c0"),)))
        decision = Scheduler(Policy("static"), reg).safety_gate(self.disable("d1"), "d1", 0)
        assert decision.reason == "model-error"

    def test_invariant_change_is_model_error(self):
        s = Scheduler(Policy("static"), make_registry())
        c = Commission("c", "op", 1, 0, 100, ("d1",), (PostCondition.set_value("capabilities/power/supply", "x"),))
        assert s.safety_gate(c, "d1", 0).reason == "model-error"


class TestLocks:
    def test_lock_covers_scenario_peers(self):
        reg = make_registry(("d1", "d2", "d3"))
        reg.add_scenario(BusinessScenario("S1", frozenset({"d1", "d2"})))
        s = Scheduler(Policy("static"), reg)
        s.lock("d1", "c")
        assert not s.can_dispatch("d1")
        assert not s.can_dispatch("d2")
        assert s.can_dispatch("d3")
        s.release("d1")
        assert s.can_dispatch("d2")


commission_sets = st.lists(st.tuples(st.integers(1, 5), st.integers(0, 3), st.integers(0, 2)), min_size=1,
                           max_size=5)


def instance(shape):
    return [{"id": f"c{i}", "importance": imp, "submitted_at": sub, "owner": f"p{own}"}
            for i, (imp, sub, own) in enumerate(shape)]


def run_scheduler(cs, policy, balances=None, scale=1):
    participants = [Participant(p, b) for p, b in sorted((balances or {}).items())]
    s = Scheduler(Policy(policy), make_registry(), participants)
    for c in cs:
        s.enqueue(record(c["id"], c["importance"] * scale, c["submitted_at"], c["owner"]))
    return drain(s, now=5)


@settings(max_examples=200, deadline=None)
@given(commission_sets, st.sampled_from(["static", "fifo", "market"]),
       st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(0, 12)))
def test_matches_rule_oracle(shape, policy, bal):
    cs = instance(shape)
    balances = {f"p{i}": b for i, b in enumerate(bal)}
    assert run_scheduler(cs, policy, balances) == dispatch_order(cs, policy, balances)


@settings(max_examples=100, deadline=None)
@given(commission_sets, st.integers(1, 50))
def test_static_scale_invariance(shape, k):
    cs = instance(shape)
    assert run_scheduler(cs, "static", scale=k) == run_scheduler(cs, "static")


@settings(max_examples=100, deadline=None)
@given(commission_sets, st.integers(1, 9))
def test_fifo_is_static_with_equal_importance(shape, imp):
    cs = [dict(c, importance=imp) for c in instance(shape)]
    assert run_scheduler(cs, "fifo") == run_scheduler(cs, "static")


@settings(max_examples=100, deadline=None)
@given(commission_sets, st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(0, 12)),
       st.lists(st.sampled_from(["renew", "dispatch"]), max_size=15))
def test_market_conservation_and_non_negative(shape, bal, actions):
    participants = [Participant(f"p{i}", b, Fraction(i + 1, 2)) for i, b in enumerate(bal)]
    s = Scheduler(Policy("market", 1, 3), make_registry(), participants)
    for c in instance(shape):
        s.enqueue(record(c["id"], c["importance"], c["submitted_at"], c["owner"]))
    for tick, action in enumerate(actions):
        if action == "renew":
            s.renew_currency(tick)
        elif (cid := s.select_next("d1", 5)) is not None:
            s.dispatch(cid, "d1", tick)
        assert s.conservation_holds()
        assert all(b >= 0 for b in s.balances().values())
