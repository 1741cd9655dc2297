"""Property tests for the escrow lifecycle against an independent model."""

import random

from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from smartson import escrow
from smartson.escrow import EscrowState
from smartson.ledger import ContractRevert, InsufficientFunds, Ledger
from smartson.money import Money
from tests.escrow_model import ROLES, FuzzStats, Model, expect, fuzz, run_sequence


class EscrowMachine(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.ledger = Ledger()
        self.accounts = {
            "authority": self.ledger.create_account(),
            "provider": self.ledger.create_account(Money.parse("0.05")),
            "consumer": self.ledger.create_account(Money.parse("1")),
            "stranger": self.ledger.create_account(Money.parse("1")),
        }
        self.contract = escrow.deploy(self.ledger, self.accounts["authority"],
                                      timeout_refund=True)
        self.accounts["contract"] = self.contract
        self.supply = self.ledger.total_balance()
        self.model = Model(timeout_ext=True)

    def _apply(self, op, role, *, fee_percent=2, deadline_gap=10, value=0):
        block = self.ledger.current_block + 1
        deadline = self.ledger.current_block + deadline_gap
        predicted, deltas = expect(self.model, op, role, block, fee_percent, deadline, value)
        before = self.ledger.accounts()
        fields = dict(vars(escrow.state_of(self.ledger, self.contract)))
        caller = self.accounts[role]
        try:
            if op == "initialize":
                escrow.initialize(self.ledger, caller, self.contract, self.accounts["provider"],
                                  self.accounts["consumer"], fee_percent, deadline)
            elif op == "deposit":
                escrow.deposit(self.ledger, caller, self.contract, Money(value))
            else:
                getattr(escrow, op)(self.ledger, caller, self.contract)
        except (ContractRevert, InsufficientFunds):
            assert predicted is None or value > before[caller].units
            assert self.ledger.accounts() == before
            assert dict(vars(escrow.state_of(self.ledger, self.contract))) == fields
            return
        assert predicted is not None, f"{op} by {role} from {self.model.status}"
        after = self.ledger.accounts()
        for name, addr in self.accounts.items():
            got = after[addr].units if addr in after else 0
            assert got == before[addr].units + deltas.get(name, 0)
        self.model = predicted

    @precondition(lambda self: not self.model.destroyed)
    @rule(role=st.sampled_from(ROLES), fee=st.integers(0, 100), gap=st.integers(1, 8))
    def initialize(self, role, fee, gap):
        self._apply("initialize", role, fee_percent=fee, deadline_gap=gap)

    @precondition(lambda self: not self.model.destroyed)
    @rule(role=st.sampled_from(ROLES), value=st.integers(0, 4 * 10**17))
    def deposit(self, role, value):
        self._apply("deposit", role, value=value)

    @precondition(lambda self: not self.model.destroyed)
    @rule(op=st.sampled_from(["approve", "cancel", "timeout_refund"]),
          role=st.sampled_from(ROLES))
    def act(self, op, role):
        self._apply(op, role)

    @precondition(lambda self: not self.model.destroyed)
    @rule(role=st.sampled_from(ROLES))
    def end(self, role):
        block = self.ledger.current_block + 1
        predicted, _ = expect(self.model, "end", role, block, 0, 0, 0)
        try:
            escrow.end(self.ledger, self.accounts[role], self.contract)
        except ContractRevert:
            assert predicted is None
        else:
            assert predicted is not None
            assert not self.ledger.exists(self.contract)
            self.model = predicted

    @rule()
    def tick(self):
        stranger = self.accounts["stranger"]
        self.ledger.transfer(stranger, stranger, Money(0))

    @invariant()
    def conserved(self):
        assert self.ledger.total_balance() == self.supply

    @invariant()
    def matches_model(self):
        if self.model.destroyed:
            return
        state = escrow.state_of(self.ledger, self.contract)
        assert state.status.name == self.model.status
        assert state.escrow_charge.units == self.model.charge
        assert self.ledger.balance_of(self.contract).units == self.model.balance
        escrow.check_invariants(state)


TestEscrowMachine = EscrowMachine.TestCase
TestEscrowMachine.settings = settings(max_examples=150, stateful_step_count=30, deadline=None)


class TestSeededFuzz:
    def test_small_fuzz_run(self):
        stats = fuzz(300, seed=7)
        assert stats.sequences == 300
        assert stats.completed > 0 and stats.cancelled > 0 and stats.reverts > 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_any_seed(self, seed):
        run_sequence(random.Random(seed), 20, FuzzStats())


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**24), st.integers(0, 100))
def test_payout_split_has_no_residue(units, fee_percent):
    ledger = Ledger()
    authority, provider = ledger.create_account(), ledger.create_account()
    consumer = ledger.create_account(Money(units))
    contract = escrow.deploy(ledger, authority)
    escrow.initialize(ledger, authority, contract, provider, consumer, fee_percent, 100)
    escrow.deposit(ledger, consumer, contract, Money(units))
    escrow.approve(ledger, provider, contract)
    escrow.approve(ledger, consumer, contract)
    state = escrow.state_of(ledger, contract)
    assert state.status == EscrowState.EscrowComplete
    assert state.fee_amount.units == units * fee_percent // 100
    assert ledger.balance_of(authority) + ledger.balance_of(provider) == Money(units)
