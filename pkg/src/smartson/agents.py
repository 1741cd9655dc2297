"""The three agent roles: contract registrar, resource consumer, resource provider.

Registrar and provider behaviours are message handlers that return the reply
they send. The consumer's behaviours are generators driven by a scheduler
(see :mod:`smartson.scheduler`); they yield waits and return results.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Generator

from smartson import escrow
from smartson.escrow import EscrowState
from smartson.ledger import AccountId, Ledger, LedgerError, Receipt
from smartson.matching import (
    Catalogue,
    Match,
    Proposal,
    ResourceSpec,
    best_match,
    score_catalogue,
    select_best_proposal,
)
from smartson.money import ZERO, Money
from smartson.platform import (
    ContractRequest,
    LeaseTerms,
    Message,
    Offer,
    Performative,
    Platform,
)
from smartson.scheduler import Hold, Receive

log = logging.getLogger(__name__)

PROVIDER_SERVICE = "resource-provider"
REGISTRAR_SERVICE = "contract-registrar"
NOT_AVAILABLE = "not-available"
UNDERFUNDED = "insufficient-deposit"
INTERFACE_DETAILS = "Resource Interaction Details"


class Agent:
    service_type: str | None = None

    def __init__(self, name: str, platform: Platform, ledger: Ledger, wallet: AccountId):
        self.name = platform.register_agent(name)
        self.platform = platform
        self.ledger = ledger
        self.wallet = wallet
        self.running = True
        self.clock: Callable[[], int] = lambda: 0
        self.handlers: dict[Performative, Callable[[Message], Message | None]] = {}
        self._conversations = itertools.count(1)
        if self.service_type:
            platform.df_register(self.name, self.service_type, wallet)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"

    def new_conversation(self) -> str:
        return f"{self.name}/{next(self._conversations)}"

    def send(self, message: Message) -> None:
        self.platform.send(message)

    def handle(self, message: Message) -> Message | None:
        handler = self.handlers.get(message.performative)
        if handler is None:
            log.debug("%s ignores %s", self.name, message.performative.value)
            return None
        reply = handler(message)
        if reply is not None:
            self.send(reply)
        return reply

    def step(self) -> bool:
        """Handle everything queued for this agent's behaviours."""
        if not self.running or not self.handlers:
            return False
        handled = False
        while (message := self.platform.try_receive(self.name, list(self.handlers))) is not None:
            self.handle(message)
            handled = True
        return handled

    def destroy(self) -> None:
        self.platform.deregister_agent(self.name)


class RegistrarAgent(Agent):
    """Deploys and initializes one escrow per consumer request."""

    service_type = REGISTRAR_SERVICE

    def __init__(self, name: str, platform: Platform, ledger: Ledger, wallet: AccountId,
                 contract_fee_percent: int = 2, timeout_refund: bool = False):
        super().__init__(name, platform, ledger, wallet)
        self.contract_fee_percent = contract_fee_percent
        self.timeout_refund = timeout_refund
        self.contracts: list[AccountId] = []
        self.receipts: dict[AccountId, tuple[Receipt, Receipt]] = {}
        self.handlers = {Performative.REQUEST: self.serve}

    def serve(self, message: Message) -> Message | None:
        if message.performative != Performative.REQUEST:
            return None
        provider, consumer, deadline = message.payload
        try:
            address, deployed = escrow.deploy_with_receipt(
                self.ledger, self.wallet, timeout_refund=self.timeout_refund)
        except LedgerError as exc:
            log.warning("%s: deployment failed: %s", self.name, exc)
            return message.reply(self.name, Performative.CANCEL)
        self.contracts.append(address)
        try:
            initialized = escrow.initialize(
                self.ledger, self.wallet, address, provider, consumer,
                self.contract_fee_percent, self.ledger.current_block + deadline)
        except LedgerError as exc:
            log.warning("%s: initialize of %s failed: %s", self.name, address, exc)
            return message.reply(self.name, Performative.CANCEL)
        self.receipts[address] = (deployed, initialized)
        return message.reply(self.name, Performative.CONFIRM, address)


class ProviderAgent(Agent):
    service_type = PROVIDER_SERVICE

    def __init__(self, name: str, platform: Platform, ledger: Ledger, wallet: AccountId,
                 catalogue: Catalogue):
        super().__init__(name, platform, ledger, wallet)
        self.catalogue = catalogue
        self.consumer_resource_map: dict[str, list[ResourceSpec]] = {}
        self.score_log: list[tuple[str, str, list[Match]]] = []
        # conversation -> contract of a lease we turned down after the deposit
        self._declined: dict[str, AccountId] = {}
        self.handlers = {
            Performative.CFP: self.handle_request,
            Performative.ACCEPT_PROPOSAL: self.lease,
            Performative.DISCONFIRM: self.release,
            Performative.CANCEL: self.cancel,
        }

    def leased(self) -> list[ResourceSpec]:
        return [r for held in self.consumer_resource_map.values() for r in held]

    def handle_request(self, message: Message) -> Message | None:
        if message.performative != Performative.CFP:
            return None
        scores = score_catalogue(message.payload, self.catalogue)
        self.score_log.append((message.conversation_id, message.sender, scores))
        best = best_match(message.payload, self.catalogue)
        if best is None:
            return message.reply(self.name, Performative.REFUSE, NOT_AVAILABLE)
        return message.reply(self.name, Performative.PROPOSE, Offer(best.score, best.resource))

    def lease(self, message: Message) -> Message | None:
        if message.performative != Performative.ACCEPT_PROPOSAL:
            return None
        terms: LeaseTerms = message.payload
        if terms.resource not in self.catalogue:
            self._declined[message.conversation_id] = terms.contract_address
            return message.reply(self.name, Performative.FAILURE, NOT_AVAILABLE)
        required = terms.resource.price * terms.lease_time
        try:
            funded = self.ledger.balance_of(terms.contract_address) >= required
        except LedgerError:
            funded = False
        if not funded:
            self._declined[message.conversation_id] = terms.contract_address
            return message.reply(self.name, Performative.FAILURE, UNDERFUNDED)
        try:
            escrow.approve(self.ledger, self.wallet, terms.contract_address)
        except LedgerError as exc:
            log.warning("%s: approve on %s failed: %s", self.name, terms.contract_address, exc)
            self._declined[message.conversation_id] = terms.contract_address
            return message.reply(self.name, Performative.FAILURE, NOT_AVAILABLE)
        resource = self.catalogue.remove(terms.resource)
        self.consumer_resource_map.setdefault(message.sender, []).append(resource)
        return message.reply(self.name, Performative.INFORM, INTERFACE_DETAILS)

    def release(self, message: Message) -> Message | None:
        if message.performative != Performative.DISCONFIRM:
            return None
        held = self.consumer_resource_map.get(message.sender, [])
        if message.payload not in held:
            return message.reply(self.name, Performative.FAILURE, NOT_AVAILABLE)
        held.remove(message.payload)
        if not held:
            del self.consumer_resource_map[message.sender]
        self.catalogue.put(message.payload)
        return message.reply(self.name, Performative.DISCONFIRM, message.payload)

    def cancel(self, message: Message) -> Message | None:
        """Join the consumer in cancelling an escrow whose lease we declined."""
        if message.performative != Performative.CANCEL:
            return None
        contract = self._declined.pop(message.conversation_id, None)
        if contract is None:
            return message.reply(self.name, Performative.FAILURE, NOT_AVAILABLE)
        try:
            escrow.cancel(self.ledger, self.wallet, contract)
        except LedgerError as exc:
            log.warning("%s: cancel on %s failed: %s", self.name, contract, exc)
            return message.reply(self.name, Performative.FAILURE, str(exc) or type(exc).__name__)
        return message.reply(self.name, Performative.CONFIRM, contract)


@dataclass
class Lease:
    provider: str
    resource: ResourceSpec
    lease_time: int
    expires_epoch: int
    conversation_id: str


@dataclass
class TradeResult:
    requested: ResourceSpec
    status: str = "no-match"
    proposals: list[Proposal] = field(default_factory=list)
    winner: str | None = None
    offered: ResourceSpec | None = None
    score: float | None = None
    contract: AccountId | None = None
    deposit: Money = ZERO
    fee: Money = ZERO
    provider_amount: Money = ZERO
    receipts: dict[str, Receipt] = field(default_factory=dict)


Behaviour = Generator[object, object, object]


class ConsumerAgent(Agent):
    def __init__(self, name: str, platform: Platform, ledger: Ledger, wallet: AccountId, *,
                 registrar: str = "registrar", lease_time: int = 1, deadline_offset: int = 100,
                 reply_timeout: int | None = None):
        super().__init__(name, platform, ledger, wallet)
        self.registrar = registrar
        self.lease_time = lease_time
        self.deadline_offset = deadline_offset
        self.reply_timeout = reply_timeout
        self.active_leases: dict[AccountId, Lease] = {}
        self.last_receipt: Receipt | None = None
        self.last_proposals: list[Proposal] = []

    def _receive(self, performatives, conversation_id: str):
        return Receive(performatives, conversation_id, self.reply_timeout)

    def request_resource(self, target: ResourceSpec) -> Behaviour:
        """Broadcast a CFP and pick the best proposal.

        Returns a :class:`Proposal` or None. A reply that never comes counts
        as a refusal.
        """
        providers = self.platform.df_find_all(PROVIDER_SERVICE)
        self.last_proposals = []
        if not providers:
            return None
        conversation = self.new_conversation()
        self.send(Message(self.name, providers, Performative.CFP, target, conversation))
        for _ in providers:
            reply = yield self._receive([Performative.PROPOSE, Performative.REFUSE], conversation)
            if reply is None:
                break
            if reply.performative == Performative.PROPOSE:
                offer: Offer = reply.payload
                self.last_proposals.append(Proposal(reply.sender, offer.score, offer.resource))
        self.platform.expire_conversation(self.name, conversation)
        return select_best_proposal(self.last_proposals)

    def contract(self, best: ResourceSpec, provider_address: AccountId, deadline: int,
                 lease_time: int) -> Behaviour:
        """Ask the registrar for an escrow and fund it.

        Returns ``(receipt, contract_address)`` of the deposit, or None.
        """
        amount = best.price * lease_time
        if self.ledger.balance_of(self.wallet) < amount:
            log.info("%s: cannot afford %s for %s", self.name, amount.short(), best.title)
            return None
        conversation = self.new_conversation()
        self.send(Message(self.name, (self.registrar,), Performative.REQUEST,
                          ContractRequest(provider_address, self.wallet, deadline), conversation))
        reply = yield self._receive([Performative.CONFIRM, Performative.CANCEL], conversation)
        if reply is None or reply.performative != Performative.CONFIRM or not reply.payload:
            return None
        address = reply.payload
        try:
            receipt = escrow.deposit(self.ledger, self.wallet, address, amount)
        except LedgerError as exc:
            log.warning("%s: deposit into %s failed: %s", self.name, address, exc)
            return None
        self.last_receipt = receipt
        return receipt, address

    def acquire(self, best: ResourceSpec, provider: str, contract_address: AccountId,
                lease_time: int) -> Behaviour:
        conversation = self.new_conversation()
        self.send(Message(self.name, (provider,), Performative.ACCEPT_PROPOSAL,
                          LeaseTerms(best, contract_address, lease_time), conversation))
        reply = yield self._receive([Performative.INFORM, Performative.FAILURE], conversation)
        if reply is None or reply.performative != Performative.INFORM:
            yield from self._recover(provider, contract_address, conversation)
            return None
        self.active_leases[contract_address] = Lease(
            provider, best, lease_time, self.clock() + lease_time, conversation)
        return reply.payload

    def _recover(self, provider: str, contract_address: AccountId, conversation: str) -> Behaviour:
        """Cancel an escrow the provider would not serve, to get the deposit back."""
        try:
            escrow.cancel(self.ledger, self.wallet, contract_address)
        except LedgerError as exc:
            log.warning("%s: cancel on %s failed: %s", self.name, contract_address, exc)
            return False
        self.send(Message(self.name, (provider,), Performative.CANCEL, None, conversation))
        reply = yield self._receive([Performative.CONFIRM, Performative.FAILURE], conversation)
        return reply is not None and reply.performative == Performative.CONFIRM

    def release(self, resource: ResourceSpec, provider: str,
                contract_address: AccountId) -> Behaviour:
        lease = self.active_leases.pop(contract_address, None)
        conversation = lease.conversation_id if lease else self.new_conversation()
        try:
            self.last_receipt = escrow.approve(self.ledger, self.wallet, contract_address)
        except LedgerError as exc:
            log.warning("%s: approve on %s failed: %s", self.name, contract_address, exc)
        self.send(Message(self.name, (provider,), Performative.DISCONFIRM, resource, conversation))
        reply = yield self._receive([Performative.DISCONFIRM, Performative.FAILURE], conversation)
        return reply

    def trade(self, target: ResourceSpec) -> Behaviour:
        """One full cycle: find, contract, acquire, hold, release."""
        result = TradeResult(requested=target)
        best = yield from self.request_resource(target)
        result.proposals = list(self.last_proposals)
        if best is None:
            return result
        result.winner, result.score, result.offered = best.provider, best.score, best.resource
        record = self.platform.df_lookup(best.provider, PROVIDER_SERVICE)
        if record is None or record.wallet is None:
            result.status = "provider-gone"
            return result
        contracted = yield from self.contract(best.resource, record.wallet, self.deadline_offset,
                                              self.lease_time)
        if contracted is None:
            result.status = "contract-failed"
            return result
        result.receipts["deposit"], result.contract = contracted
        result.deposit = best.resource.price * self.lease_time
        details = yield from self.acquire(best.resource, best.provider, result.contract,
                                          self.lease_time)
        if details is None:
            result.status = "lease-failed"
            return result
        yield Hold(self.lease_time)
        yield from self.release(best.resource, best.provider, result.contract)
        if self.last_receipt is not None and self.last_receipt.target == result.contract:
            result.receipts["approve"] = self.last_receipt
        state = escrow.state_of(self.ledger, result.contract)
        result.fee, result.provider_amount = state.fee_amount, state.provider_amount
        result.status = "complete" if state.status == EscrowState.EscrowComplete else "unsettled"
        return result
