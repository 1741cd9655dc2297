"""Escrow contract hosted on the simulated ledger.

The authority deploys one contract per trade and initializes it for a
provider/consumer pair. The consumer deposits, both parties approve, and the
second approval pays the authority its fee and the provider the remainder.
Alternatively both parties cancel and the consumer is refunded in full.

State moves only forward::

    UnInitialized -> Initialized -> ConsumerDeposited -+-> ServiceApproved -> EscrowComplete
                                                       +-> EscrowCancelled
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from smartson.ledger import AccountId, CallContext, ContractRevert, Ledger, Receipt
from smartson.money import ZERO, Money, total


class EscrowState(enum.IntEnum):
    UnInitialized = 0
    Initialized = 1
    ConsumerDeposited = 2
    ServiceApproved = 3
    EscrowComplete = 4
    EscrowCancelled = 5


class NotAuthority(ContractRevert):
    pass


class NotConsumer(ContractRevert):
    pass


class NotParty(ContractRevert):
    pass


class PartyIsAuthority(ContractRevert):
    pass


class WrongState(ContractRevert):
    pass


class DeadlinePassed(ContractRevert):
    pass


class DeadlineNotReached(ContractRevert):
    pass


class ExtensionDisabled(ContractRevert):
    pass


class NotPayable(ContractRevert):
    pass


@dataclass
class EscrowContract:
    authority: AccountId
    provider: AccountId | None = None
    consumer: AccountId | None = None
    fee_percent: int = 0
    deadline_block: int = 0
    status: EscrowState = EscrowState.UnInitialized
    deposits: list[Money] = field(default_factory=list)
    escrow_charge: Money = ZERO
    provider_approval: bool = False
    consumer_approval: bool = False
    provider_cancel: bool = False
    consumer_cancel: bool = False
    fee_amount: Money = ZERO
    provider_amount: Money = ZERO
    internal_ledger: dict[AccountId, Money] = field(default_factory=dict)
    allow_timeout_refund: bool = False

    PAYABLE = frozenset({"deposit"})
    METHODS = frozenset({"initialize", "deposit", "approve", "cancel", "end", "timeout_refund"})

    def __deepcopy__(self, memo) -> EscrowContract:
        # every field is immutable apart from the two containers
        clone = EscrowContract(**self.__dict__)
        clone.deposits = list(self.deposits)
        clone.internal_ledger = dict(self.internal_ledger)
        return clone

    def execute(self, ctx: CallContext, method: str | None, args: tuple) -> None:
        if method not in self.METHODS:
            raise ContractRevert(f"no such method: {method!r}")
        if ctx.value and method not in self.PAYABLE:
            raise NotPayable(f"{method} does not accept value")
        getattr(self, "_" + method)(ctx, *args)

    # -- guards ---------------------------------------------------------------

    def _only_authority(self, ctx: CallContext) -> None:
        if ctx.sender != self.authority:
            raise NotAuthority(ctx.sender)

    def _only_party(self, ctx: CallContext) -> None:
        if ctx.sender not in (self.provider, self.consumer):
            raise NotParty(ctx.sender)

    def _before_deadline(self, ctx: CallContext) -> None:
        if not self.deadline_block > ctx.block_number:
            raise DeadlinePassed(f"block {ctx.block_number} >= deadline {self.deadline_block}")

    def _require_status(self, *allowed: EscrowState) -> None:
        if self.status not in allowed:
            raise WrongState(self.status.name)

    # -- contract methods -----------------------------------------------------

    def _initialize(self, ctx: CallContext, provider: AccountId, consumer: AccountId,
                    fee_percent: int, deadline_block: int) -> None:
        self._only_authority(ctx)
        if provider == ctx.sender or consumer == ctx.sender:
            raise PartyIsAuthority(ctx.sender)
        self._require_status(EscrowState.UnInitialized)
        if not 0 <= fee_percent <= 100:
            raise ContractRevert(f"fee percent out of range: {fee_percent}")
        self.provider = provider
        self.consumer = consumer
        self.fee_percent = fee_percent
        self.deadline_block = deadline_block
        self.status = EscrowState.Initialized
        self.internal_ledger[provider] = ZERO
        self.internal_ledger[consumer] = ZERO

    def _deposit(self, ctx: CallContext) -> None:
        if self.consumer is None or ctx.sender != self.consumer:
            raise NotConsumer(ctx.sender)
        self._before_deadline(ctx)
        self._require_status(EscrowState.Initialized, EscrowState.ConsumerDeposited)
        self.internal_ledger[self.consumer] += ctx.value
        self.deposits.append(ctx.value)
        self.escrow_charge += ctx.value
        self.status = EscrowState.ConsumerDeposited
        ctx.emit("Deposit", depositor=ctx.sender, amount=ctx.value)

    def _approve(self, ctx: CallContext) -> None:
        self._only_party(ctx)
        self._require_status(EscrowState.ConsumerDeposited)
        if ctx.sender == self.provider:
            self.provider_approval = True
        else:
            self.consumer_approval = True
        if self.provider_approval and self.consumer_approval:
            self.status = EscrowState.ServiceApproved
            self._pay_fee(ctx)
            self._payout(ctx)
            ctx.emit("ServicePayment", block_no=ctx.block_number, contract_balance=ctx.balance)

    def _pay_fee(self, ctx: CallContext) -> None:
        self.fee_amount = ctx.balance.percent(self.fee_percent)
        ctx.transfer(self.authority, self.fee_amount)

    def _payout(self, ctx: CallContext) -> None:
        remaining = ctx.balance
        self.internal_ledger[self.consumer] -= remaining
        self.internal_ledger[self.provider] += remaining
        self.status = EscrowState.EscrowComplete
        self.provider_amount = remaining
        ctx.transfer(self.provider, remaining)

    def _cancel(self, ctx: CallContext) -> None:
        self._only_party(ctx)
        self._before_deadline(ctx)
        self._require_status(EscrowState.ConsumerDeposited)
        if ctx.sender == self.provider:
            self.provider_cancel = True
        else:
            self.consumer_cancel = True
        if self.provider_cancel and self.consumer_cancel:
            self.status = EscrowState.EscrowCancelled
            ctx.transfer(self.consumer, ctx.balance)

    def _end(self, ctx: CallContext) -> None:
        self._only_authority(ctx)
        self._require_status(EscrowState.ServiceApproved, EscrowState.EscrowComplete,
                             EscrowState.EscrowCancelled)
        ctx.selfdestruct(self.authority)

    def _timeout_refund(self, ctx: CallContext) -> None:
        if not self.allow_timeout_refund:
            raise ExtensionDisabled("timeout refund is not enabled for this contract")
        if self.consumer is None or ctx.sender != self.consumer:
            raise NotConsumer(ctx.sender)
        self._require_status(EscrowState.ConsumerDeposited)
        if ctx.block_number < self.deadline_block:
            raise DeadlineNotReached(f"block {ctx.block_number} < deadline {self.deadline_block}")
        self.fee_amount = ctx.balance.percent(self.fee_percent)
        ctx.transfer(self.authority, self.fee_amount)
        self.internal_ledger[self.consumer] -= ctx.balance
        self.status = EscrowState.EscrowCancelled
        ctx.transfer(self.consumer, ctx.balance)


# Client-side helpers: one ledger transaction each.

def deploy(ledger: Ledger, authority: AccountId, *, timeout_refund: bool = False) -> AccountId:
    address, _ = deploy_with_receipt(ledger, authority, timeout_refund=timeout_refund)
    return address


def deploy_with_receipt(ledger: Ledger, authority: AccountId, *,
                        timeout_refund: bool = False) -> tuple[AccountId, Receipt]:
    def construct(ctx: CallContext) -> EscrowContract:
        return EscrowContract(authority=ctx.sender, allow_timeout_refund=timeout_refund)

    return ledger.deploy(authority, construct, kind="escrow")


def initialize(ledger: Ledger, caller: AccountId, contract: AccountId, provider: AccountId,
               consumer: AccountId, fee_percent: int, deadline_block: int) -> Receipt:
    return ledger.call(caller, contract, "initialize", provider, consumer, fee_percent,
                       deadline_block)


def deposit(ledger: Ledger, caller: AccountId, contract: AccountId, value: Money) -> Receipt:
    return ledger.call(caller, contract, "deposit", value=value)


def approve(ledger: Ledger, caller: AccountId, contract: AccountId) -> Receipt:
    return ledger.call(caller, contract, "approve")


def cancel(ledger: Ledger, caller: AccountId, contract: AccountId) -> Receipt:
    return ledger.call(caller, contract, "cancel")


def end(ledger: Ledger, caller: AccountId, contract: AccountId) -> Receipt:
    return ledger.call(caller, contract, "end")


def timeout_refund(ledger: Ledger, caller: AccountId, contract: AccountId) -> Receipt:
    return ledger.call(caller, contract, "timeout_refund")


def state_of(ledger: Ledger, contract: AccountId) -> EscrowContract:
    escrow = ledger.contract(contract)
    if not isinstance(escrow, EscrowContract):
        raise TypeError(f"{contract} is not an escrow contract")
    return escrow


def check_invariants(escrow: EscrowContract) -> None:
    """Assert the structural invariants that hold in every reachable state."""
    assert escrow.escrow_charge == total(escrow.deposits)
    if escrow.status != EscrowState.UnInitialized:
        assert escrow.authority not in (escrow.provider, escrow.consumer)
    if escrow.status == EscrowState.EscrowComplete:
        assert escrow.fee_amount + escrow.provider_amount == escrow.escrow_charge
        assert escrow.provider_approval and escrow.consumer_approval
