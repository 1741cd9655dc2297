import logging

import pytest

from smartson import escrow
from smartson.agents import (
    INTERFACE_DETAILS,
    NOT_AVAILABLE,
    PROVIDER_SERVICE,
    UNDERFUNDED,
    ConsumerAgent,
    ProviderAgent,
    RegistrarAgent,
)
from smartson.escrow import EscrowState
from smartson.ledger import Ledger
from smartson.matching import Catalogue
from smartson.money import ZERO
from smartson.platform import (
    ContractRequest,
    LeaseTerms,
    Message,
    Performative,
    Platform,
    check_protocol,
)
from smartson.scheduler import Scheduler
from tests.conftest import TABLE3_POOLS, M


class World:
    def __init__(self, by_title, pools=TABLE3_POOLS, consumer_balance="10", reply_timeout=None):
        self.by_title = by_title
        self.ledger = Ledger()
        self.platform = Platform()
        self.sched = Scheduler(self.platform)
        self.authority = self.ledger.create_account()
        self.registrar = RegistrarAgent("registrar", self.platform, self.ledger, self.authority)
        self.sched.add(self.registrar)
        self.providers = []
        for i, pool in enumerate(pools, start=1):
            wallet = self.ledger.create_account(M("0.05"))
            provider = ProviderAgent(f"provider-{i}", self.platform, self.ledger, wallet,
                                     Catalogue(by_title[t] for t in pool))
            self.sched.add(provider)
            self.providers.append(provider)
        self.consumer = ConsumerAgent("consumer", self.platform, self.ledger,
                                      self.ledger.create_account(M(consumer_balance)),
                                      reply_timeout=reply_timeout)

    def run(self, body):
        return self.sched.run_process(self.consumer, body)

    def provider(self, i):
        return self.providers[i - 1]

    def contract_for(self, provider, title, lease_time=1):
        """Registrar round trip plus deposit; returns the contract address."""
        _, address = self.run(self.consumer.contract(self.by_title[title], provider.wallet, 100,
                                                     lease_time))
        return address

    def ask(self, agent, performative, payload, sender="consumer", conversation="t/1"):
        message = Message(sender, (agent.name,), performative, payload, conversation)
        return agent.handle(message)


@pytest.fixture
def world(by_title):
    return World(by_title)


class TestRegistrar:
    def serve(self, world, provider, consumer):
        return world.ask(world.registrar, Performative.REQUEST,
                         ContractRequest(provider, consumer, 100))

    def test_confirm_with_initialized_escrow(self, world):
        reply = self.serve(world, world.provider(1).wallet, world.consumer.wallet)
        assert reply.performative == Performative.CONFIRM
        state = escrow.state_of(world.ledger, reply.payload)
        assert state.status == EscrowState.Initialized
        assert state.authority == world.authority
        assert state.fee_percent == 2
        assert state.deadline_block == world.ledger.current_block + 100 - 1

    def test_registrar_as_party_is_cancelled(self, world):
        reply = self.serve(world, world.provider(1).wallet, world.authority)
        assert reply.performative == Performative.CANCEL
        assert reply.payload is None

    def test_distinct_contracts(self, world):
        a = self.serve(world, world.provider(1).wallet, world.consumer.wallet).payload
        b = self.serve(world, world.provider(1).wallet, world.consumer.wallet).payload
        assert a != b
        assert world.registrar.contracts == [a, b]


class TestRequestResource:
    def test_table3_proposals(self, world, by_title):
        best = world.run(world.consumer.request_resource(by_title["t3a.small"]))
        offers = [(p.provider, p.resource.title) for p in world.consumer.last_proposals]
        assert offers == [("provider-1", "t3a.small"), ("provider-2", "m5.large"),
                          ("provider-3", "t2.micro"), ("provider-4", "t3.small"),
                          ("provider-5", "t3.small")]
        assert world.consumer.last_proposals[1].score == pytest.approx(0.999995336207502,
                                                                      rel=1e-12)
        assert (best.provider, best.resource.title, best.score) == \
            ("provider-1", "t3a.small", 1.0)

    def test_no_providers(self, by_title):
        world = World(by_title, pools=[])
        assert world.run(world.consumer.request_resource(by_title["t3a.small"])) is None
        assert world.platform.message_log == []

    def test_all_refuse(self, by_title):
        world = World(by_title, pools=[[], []])
        assert world.run(world.consumer.request_resource(by_title["t3a.small"])) is None
        refusals = [e.message for e in world.platform.message_log
                    if e.message.performative == Performative.REFUSE]
        assert [m.payload for m in refusals] == [NOT_AVAILABLE, NOT_AVAILABLE]

    def test_silent_provider_counts_as_refusal(self, by_title):
        world = World(by_title, reply_timeout=5)
        world.sched.agents.remove(world.provider(1))      # registered but never runs
        best = world.run(world.consumer.request_resource(by_title["t3a.small"]))
        # without provider 1's exact match, the tie between 4 and 5 goes to 4
        assert (best.provider, best.resource.title) == ("provider-4", "t3.small")
        assert len(world.consumer.last_proposals) == 4

    def test_late_replies_are_dropped(self, by_title):
        world = World(by_title, reply_timeout=5)
        silent = world.provider(1)
        world.sched.agents.remove(silent)
        world.run(world.consumer.request_resource(by_title["t3a.small"]))
        silent.step()
        assert world.platform.pending("consumer") == []
        assert world.platform.dropped


class TestContract:
    def test_deposit_is_price_times_lease(self, world, by_title):
        receipt, address = world.run(world.consumer.contract(
            by_title["m5.xlarge"], world.provider(2).wallet, 100, 1))
        assert world.ledger.balance_of(address) == M("0.192")
        assert receipt.method == "deposit"
        assert world.ledger.balance_of(world.consumer.wallet) == M("9.808")

    def test_two_hour_lease(self, world, by_title):
        _, address = world.run(world.consumer.contract(
            by_title["t3a.small"], world.provider(1).wallet, 100, 2))
        assert world.ledger.balance_of(address) == M("0.0376")

    def test_cancel_reply(self, world, by_title):
        # naming the registrar's wallet as provider makes initialize revert
        result = world.run(world.consumer.contract(by_title["m5.xlarge"], world.authority, 100, 1))
        assert result is None
        assert world.ledger.balance_of(world.consumer.wallet) == M("10")

    def test_cannot_afford(self, by_title):
        world = World(by_title, consumer_balance="0.1")
        result = world.run(world.consumer.contract(by_title["m5.xlarge"],
                                                   world.provider(2).wallet, 100, 1))
        assert result is None
        assert world.platform.message_log == []


class TestAcquire:
    def test_happy_path(self, world, by_title):
        p2 = world.provider(2)
        address = world.contract_for(p2, "m5.xlarge")
        details = world.run(world.consumer.acquire(by_title["m5.xlarge"], p2.name, address, 1))
        assert details == INTERFACE_DETAILS
        assert address in world.consumer.active_leases
        state = escrow.state_of(world.ledger, address)
        assert state.provider_approval and not state.consumer_approval
        assert p2.consumer_resource_map == {"consumer": [by_title["m5.xlarge"]]}
        assert "m5.xlarge" not in p2.catalogue.titles()

    def test_resource_gone_recovers_deposit(self, world, by_title):
        p1 = world.provider(1)
        p1.catalogue.remove(by_title["t3a.small"])
        address = world.contract_for(p1, "t3a.small")
        assert world.run(world.consumer.acquire(by_title["t3a.small"], p1.name, address, 1)) is None
        assert escrow.state_of(world.ledger, address).status == EscrowState.EscrowCancelled
        assert world.ledger.balance_of(world.consumer.wallet) == M("10")
        performatives = [e.message.performative for e in world.platform.message_log]
        assert performatives[-4:] == [Performative.ACCEPT_PROPOSAL, Performative.FAILURE,
                                      Performative.CANCEL, Performative.CONFIRM]


class TestProvider:
    def test_handle_request(self, world, by_title):
        reply = world.ask(world.provider(2), Performative.CFP, by_title["t3a.small"])
        assert reply.performative == Performative.PROPOSE
        assert reply.payload.resource.title == "m5.large"
        assert reply.payload.score == pytest.approx(0.999995336207502, rel=1e-12)

    def test_empty_catalogue_refuses(self, by_title):
        world = World(by_title, pools=[[]])
        reply = world.ask(world.provider(1), Performative.CFP, by_title["t3a.small"])
        assert (reply.performative, reply.payload) == (Performative.REFUSE, NOT_AVAILABLE)

    def test_other_performatives_ignored(self, world):
        provider = world.provider(1)
        assert provider.handle_request(Message("consumer", (provider.name,),
                                               Performative.INFORM, "x")) is None
        assert world.ask(provider, Performative.INFORM, "x") is None

    def test_underfunded_lease(self, world, by_title):
        p2 = world.provider(2)
        reply = world.ask(world.registrar, Performative.REQUEST,
                          ContractRequest(p2.wallet, world.consumer.wallet, 100))
        address = reply.payload
        escrow.deposit(world.ledger, world.consumer.wallet, address, M("0.1"))
        before = p2.catalogue.titles()
        answer = world.ask(p2, Performative.ACCEPT_PROPOSAL,
                           LeaseTerms(by_title["m5.xlarge"], address, 1))
        assert (answer.performative, answer.payload) == (Performative.FAILURE, UNDERFUNDED)
        assert p2.catalogue.titles() == before
        assert not escrow.state_of(world.ledger, address).provider_approval

    def test_absent_resource(self, world, by_title):
        answer = world.ask(world.provider(1), Performative.ACCEPT_PROPOSAL,
                           LeaseTerms(by_title["m5.xlarge"], world.authority, 1))
        assert (answer.performative, answer.payload) == (Performative.FAILURE, NOT_AVAILABLE)

    def test_release_of_unknown_resource(self, world, by_title):
        answer = world.ask(world.provider(1), Performative.DISCONFIRM, by_title["t3a.small"])
        assert (answer.performative, answer.payload) == (Performative.FAILURE, NOT_AVAILABLE)

    def test_cancel_without_declined_lease(self, world):
        answer = world.ask(world.provider(1), Performative.CANCEL, None)
        assert answer.performative == Performative.FAILURE


class TestTrade:
    def test_full_cycle_pays_out(self, world, by_title):
        result = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        assert result.status == "complete"
        assert (result.winner, result.offered.title) == ("provider-2", "m5.xlarge")
        assert world.ledger.balance_of(world.provider(2).wallet) == M("0.05") + M("0.18816")
        assert world.ledger.balance_of(world.authority) == M("0.00384")
        assert world.ledger.balance_of(world.consumer.wallet) == M("10") - M("0.192")
        assert escrow.state_of(world.ledger, result.contract).status == EscrowState.EscrowComplete
        assert world.provider(2).catalogue.titles() == \
            ["m5d.xlarge", "m5.large", "m5a.large", "m5dn.large", "m5.xlarge"]
        assert world.provider(2).consumer_resource_map == {}
        assert world.sched.epoch == 1
        assert check_protocol(world.platform.message_log).ok

    def test_provider_approves_first(self, world, by_title):
        result = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        approvals = [r.sender for r in world.ledger.history
                     if r.target == result.contract and r.method == "approve"]
        assert approvals == [world.provider(2).wallet, world.consumer.wallet]

    def test_resource_accounting_is_constant(self, world, by_title):
        sizes = [len(p.catalogue) + len(p.leased()) for p in world.providers]
        for title in ("m5.xlarge", "t3.micro", "a1.large"):
            world.run(world.consumer.trade(by_title[title]))
            assert [len(p.catalogue) + len(p.leased()) for p in world.providers] == sizes

    def test_restored_resource_matches_again(self, world, by_title):
        first = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        second = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        assert (first.winner, first.offered) == (second.winner, second.offered)

    def test_release_twice_is_logged(self, world, by_title, caplog):
        result = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        with caplog.at_level(logging.WARNING, logger="smartson.agents"):
            reply = world.run(world.consumer.release(by_title["m5.xlarge"], "provider-2",
                                                     result.contract))
        assert "WrongState" in caplog.text or "approve" in caplog.text
        assert reply.performative == Performative.FAILURE

    def test_conservation_per_trade(self, world, by_title):
        supply = world.ledger.total_balance()
        world.run(world.consumer.trade(by_title["t3.micro"]))
        assert world.ledger.total_balance() == supply

    def test_provider_gone(self, world, by_title):
        world.platform.df_deregister("provider-1", PROVIDER_SERVICE)
        world.platform.df_register("provider-1", PROVIDER_SERVICE, None)
        result = world.run(world.consumer.trade(by_title["t3a.small"]))
        assert result.status == "provider-gone"
        assert world.ledger.balance_of(world.consumer.wallet) == M("10")

    def test_unaffordable_trade(self, by_title):
        world = World(by_title, consumer_balance="0.01")
        result = world.run(world.consumer.trade(by_title["m5.xlarge"]))
        assert result.status == "contract-failed"
        assert result.deposit == ZERO
