"""A simulated single-chain ledger.

Every mined transaction occupies its own block, so the block number doubles as
the simulation's transaction clock. Contracts live at ordinary account
addresses and are driven through :meth:`Ledger.call`; a contract that raises
:class:`ContractRevert` has its effects rolled back but the transaction is
still mined. Transactions failing a precondition (unknown account, balance
too low) are rejected outright and leave the block counter alone.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, NewType, Protocol

from smartson.money import ZERO, Money, total

log = logging.getLogger(__name__)

AccountId = NewType("AccountId", str)

ADDRESS_BYTES = 20
_NO_TARGET = b"\x00" * ADDRESS_BYTES


class LedgerError(Exception):
    pass


class UnknownAccount(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


class ContractRevert(LedgerError):
    """Raised by contract code; the ledger attaches the mined receipt."""

    receipt: Receipt | None = None


@dataclass(frozen=True)
class Event:
    name: str
    fields: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"event": self.name, **{k: _jsonable(v) for k, v in self.fields.items()}}


@dataclass(frozen=True)
class Transaction:
    sender: AccountId
    target: AccountId | None
    value: Money = ZERO
    method: str | None = None
    args: tuple = ()

    def calldata(self) -> bytes:
        if self.method is None:
            return b""
        payload = [self.method, [_jsonable(a) for a in self.args]]
        return json.dumps(payload, separators=(",", ":")).encode()

    def encode(self, block_no: int) -> bytes:
        """Canonical byte layout hashed into the receipt's tx_hash."""
        target = bytes.fromhex(self.target[2:]) if self.target else _NO_TARGET
        return (
            block_no.to_bytes(8, "big")
            + bytes.fromhex(self.sender[2:])
            + target
            + self.value.units.to_bytes(32, "big")
            + self.calldata()
        )


@dataclass(frozen=True)
class Receipt:
    block_no: int
    tx_hash: str
    sender: AccountId
    target: AccountId | None
    method: str | None
    value: Money
    events: tuple[Event, ...] = ()
    reverted: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_no": self.block_no,
            "tx_hash": self.tx_hash,
            "sender": self.sender,
            "target": self.target,
            "method": self.method,
            "value": str(self.value),
            "reverted": self.reverted,
            "events": [e.to_dict() for e in self.events],
        }


class Contract(Protocol):
    def execute(self, ctx: CallContext, method: str, args: tuple) -> Any: ...


class CallContext:
    """What a contract sees while one of its methods runs."""

    def __init__(self, ledger: Ledger, address: AccountId, sender: AccountId,
                 value: Money, block_number: int):
        self._ledger = ledger
        self.address = address
        self.sender = sender
        self.value = value
        self.block_number = block_number
        self.events: list[Event] = []
        self.destroyed_to: AccountId | None = None

    @property
    def balance(self) -> Money:
        return self._ledger._balances[self.address]

    def transfer(self, to: AccountId, amount: Money) -> None:
        self._ledger._move(self.address, to, amount)

    def emit(self, name: str, **fields: Any) -> None:
        self.events.append(Event(name, fields))

    def selfdestruct(self, beneficiary: AccountId) -> None:
        self.transfer(beneficiary, self.balance)
        self.destroyed_to = beneficiary


class Ledger:
    def __init__(self) -> None:
        self._balances: dict[AccountId, Money] = {}
        self._contracts: dict[AccountId, Contract] = {}
        self._block = 0
        self._nonce = 0
        self._lock = threading.RLock()
        self._listeners: list[Callable[[Receipt], None]] = []
        self.history: list[Receipt] = []

    # -- accounts -------------------------------------------------------------

    def _new_address(self) -> AccountId:
        while True:
            self._nonce += 1
            digest = hashlib.sha256(b"smartson/account/" + self._nonce.to_bytes(8, "big"))
            address = AccountId("0x" + digest.hexdigest()[: 2 * ADDRESS_BYTES])
            if address not in self._balances:
                return address

    def create_account(self, initial_balance: Money = ZERO) -> AccountId:
        """Open an account endowed with ``initial_balance``. Not a transaction."""
        with self._lock:
            address = self._new_address()
            self._balances[address] = Money(initial_balance.units)
            return address

    def exists(self, account: AccountId) -> bool:
        return account in self._balances

    def balance_of(self, account: AccountId) -> Money:
        with self._lock:
            try:
                return self._balances[account]
            except KeyError:
                raise UnknownAccount(account) from None

    @property
    def current_block(self) -> int:
        return self._block

    def accounts(self) -> dict[AccountId, Money]:
        with self._lock:
            return dict(self._balances)

    def total_balance(self) -> Money:
        with self._lock:
            return total(self._balances.values())

    def contract(self, address: AccountId) -> Contract:
        try:
            return self._contracts[address]
        except KeyError:
            raise UnknownAccount(address) from None

    def is_contract(self, address: AccountId) -> bool:
        return address in self._contracts

    def subscribe(self, listener: Callable[[Receipt], None]) -> None:
        self._listeners.append(listener)

    # -- transactions ---------------------------------------------------------

    def transfer(self, sender: AccountId, target: AccountId, value: Money) -> Receipt:
        return self.submit(Transaction(sender, target, value))

    def call(self, sender: AccountId, contract: AccountId, method: str, *args: Any,
             value: Money = ZERO) -> Receipt:
        return self.submit(Transaction(sender, contract, value, method, args))

    def deploy(self, sender: AccountId, factory: Callable[[CallContext], Contract],
               kind: str = "contract") -> tuple[AccountId, Receipt]:
        """Create a contract; ``factory`` plays the role of its constructor."""
        tx = Transaction(sender, None, ZERO, "deploy", (kind,))
        with self._lock:
            receipt = self._mine(tx, factory)
        return receipt.target, receipt

    def submit(self, tx: Transaction) -> Receipt:
        if tx.target is None:
            raise LedgerError("contract creation goes through deploy()")
        with self._lock:
            return self._mine(tx, None)

    def _mine(self, tx: Transaction, factory) -> Receipt:
        if tx.sender not in self._balances:
            raise UnknownAccount(tx.sender)
        if tx.target is not None and tx.target not in self._balances:
            raise UnknownAccount(tx.target)
        if self._balances[tx.sender] < tx.value:
            raise InsufficientFunds(
                f"{tx.sender} holds {self._balances[tx.sender]}, needs {tx.value}")

        self._block += 1
        block_no = self._block
        tx_hash = "0x" + hashlib.sha256(tx.encode(block_no)).hexdigest()

        balances_before = dict(self._balances)
        contracts_before = dict(self._contracts)
        nonce_before = self._nonce
        target = tx.target
        saved = None
        try:
            if factory is not None:
                target = self._new_address()
                self._balances[target] = ZERO
                ctx = CallContext(self, target, tx.sender, tx.value, block_no)
                self._contracts[target] = factory(ctx)
            else:
                contract = self._contracts.get(target)
                if contract is not None:
                    saved = copy.deepcopy(contract)
                self._move(tx.sender, target, tx.value)
                ctx = CallContext(self, target, tx.sender, tx.value, block_no)
                if contract is not None:
                    contract.execute(ctx, tx.method, tx.args)
                elif tx.method is not None:
                    raise ContractRevert(f"no contract at {target}")
            if ctx.destroyed_to is not None:
                del self._contracts[target]
                del self._balances[target]
        except Exception as exc:
            self._balances = balances_before
            self._contracts = contracts_before
            self._nonce = nonce_before
            if saved is not None:
                self._contracts[target] = saved
            if not isinstance(exc, ContractRevert):
                # a bug in contract code, not a revert: nothing was mined
                self._block -= 1
                raise
            receipt = Receipt(block_no, tx_hash, tx.sender, tx.target, tx.method,
                              tx.value, (), reverted=True)
            exc.receipt = receipt
            self._record(receipt)
            log.debug("block %d: %s reverted: %s", block_no, tx.method, exc)
            raise

        receipt = Receipt(block_no, tx_hash, tx.sender, target, tx.method, tx.value,
                          tuple(ctx.events))
        self._record(receipt)
        return receipt

    def _move(self, source: AccountId, target: AccountId, amount: Money) -> None:
        if not amount:
            return
        if target not in self._balances:
            raise UnknownAccount(target)
        self._balances[source] = self._balances[source] - amount
        self._balances[target] = self._balances[target] + amount

    def _record(self, receipt: Receipt) -> None:
        self.history.append(receipt)
        for listener in self._listeners:
            listener(receipt)

    # -- snapshots ------------------------------------------------------------

    def state(self) -> dict[str, Any]:
        with self._lock:
            return {
                "current_block": self._block,
                "accounts": {a: str(b) for a, b in sorted(self._balances.items())},
            }

    def dump(self) -> str:
        return json.dumps(self.state(), indent=2, sort_keys=True) + "\n"


def _jsonable(value: Any) -> Any:
    if isinstance(value, Money):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value
