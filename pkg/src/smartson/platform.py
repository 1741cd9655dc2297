"""Agent messaging substrate.

Agents register by name, get a mailbox, and exchange performative-tagged
messages. A directory maps service types to agents. Every successful send is
appended to a central message log that serializes to JSON lines.
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

from smartson.ledger import AccountId
from smartson.matching import ResourceSpec

log = logging.getLogger(__name__)


class Performative(str, enum.Enum):
    REQUEST = "REQUEST"
    CONFIRM = "CONFIRM"
    CANCEL = "CANCEL"
    CFP = "CFP"
    PROPOSE = "PROPOSE"
    REFUSE = "REFUSE"
    ACCEPT_PROPOSAL = "ACCEPT_PROPOSAL"
    INFORM = "INFORM"
    FAILURE = "FAILURE"
    DISCONFIRM = "DISCONFIRM"


class ContractRequest(NamedTuple):
    provider_address: AccountId
    consumer_address: AccountId
    deadline: int


class Offer(NamedTuple):
    score: float
    resource: ResourceSpec


class LeaseTerms(NamedTuple):
    resource: ResourceSpec
    contract_address: AccountId
    lease_time: int


# performative -> (payload type, wire kind)
PAYLOAD_KINDS: dict[Performative, tuple[type | None, str]] = {
    Performative.REQUEST: (ContractRequest, "contract-request"),
    Performative.CONFIRM: (str, "contract-address"),
    Performative.CANCEL: (None, "empty"),
    Performative.CFP: (ResourceSpec, "resource"),
    Performative.PROPOSE: (Offer, "offer"),
    Performative.REFUSE: (str, "reason"),
    Performative.ACCEPT_PROPOSAL: (LeaseTerms, "lease-terms"),
    Performative.INFORM: (str, "interface-details"),
    Performative.FAILURE: (str, "reason"),
    Performative.DISCONFIRM: (ResourceSpec, "resource"),
}


class PlatformError(Exception):
    pass


class DuplicateName(PlatformError):
    pass


class UnknownAgent(PlatformError):
    pass


class ReceiveTimeout(PlatformError):
    pass


class PayloadError(PlatformError, TypeError):
    pass


@dataclass(frozen=True)
class Message:
    sender: str
    receivers: tuple[str, ...]
    performative: Performative
    payload: Any = None
    conversation_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "performative", Performative(self.performative))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        expected, kind = PAYLOAD_KINDS[self.performative]
        ok = self.payload is None if expected is None else isinstance(self.payload, expected)
        if not ok:
            raise PayloadError(
                f"{self.performative.value} carries {kind}, got {type(self.payload).__name__}")

    def reply(self, replier: str, performative: Performative, payload: Any = None) -> Message:
        """A message from ``replier`` back to the sender in the same conversation."""
        if replier not in self.receivers:
            raise PlatformError(f"{replier} did not receive this {self.performative.value}")
        return Message(replier, (self.sender,), performative, payload, self.conversation_id)


@dataclass(frozen=True)
class ServiceRecord:
    agent: str
    service_type: str
    wallet: AccountId | None = None


@dataclass
class LogEntry:
    seq: int
    message: Message

    def to_dict(self) -> dict[str, Any]:
        m = self.message
        return {
            "seq": self.seq,
            "conversation_id": m.conversation_id,
            "performative": m.performative.value,
            "sender": m.sender,
            "receivers": list(m.receivers),
            "payload": encode_payload(m.performative, m.payload),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


class Platform:
    """Agent registry, directory and mailboxes.

    Safe to share between threads. In single-threaded use ``receive`` never
    blocks: pass ``timeout=0`` (the default) or use :meth:`try_receive`.
    """

    def __init__(self) -> None:
        self._mailboxes: dict[str, deque[Message]] = {}
        self._directory: list[ServiceRecord] = []
        self._expired: dict[str, set[str]] = {}
        self._cond = threading.Condition()
        self._seq = itertools.count(1)
        self.message_log: list[LogEntry] = []
        self.dropped: list[Message] = []
        self._listeners: list = []

    # -- lifecycle ------------------------------------------------------------

    def register_agent(self, name: str) -> str:
        with self._cond:
            if name in self._mailboxes:
                raise DuplicateName(name)
            self._mailboxes[name] = deque()
            self._expired[name] = set()
            return name

    def deregister_agent(self, name: str) -> None:
        with self._cond:
            self._require(name)
            del self._mailboxes[name]
            del self._expired[name]
            self._directory = [r for r in self._directory if r.agent != name]

    def agents(self) -> list[str]:
        return list(self._mailboxes)

    def is_registered(self, name: str) -> bool:
        return name in self._mailboxes

    def _require(self, name: str) -> None:
        if name not in self._mailboxes:
            raise UnknownAgent(name)

    # -- directory ------------------------------------------------------------

    def df_register(self, agent: str, service_type: str, wallet: AccountId | None = None) -> None:
        with self._cond:
            self._require(agent)
            self._directory.append(ServiceRecord(agent, service_type, wallet))

    def df_deregister(self, agent: str, service_type: str | None = None) -> None:
        with self._cond:
            self._directory = [
                r for r in self._directory
                if not (r.agent == agent and service_type in (None, r.service_type))
            ]

    def df_find_all(self, service_type: str) -> list[str]:
        with self._cond:
            return [r.agent for r in self._directory if r.service_type == service_type]

    def df_lookup(self, agent: str, service_type: str) -> ServiceRecord | None:
        with self._cond:
            for record in self._directory:
                if record.agent == agent and record.service_type == service_type:
                    return record
            return None

    # -- messaging ------------------------------------------------------------

    def subscribe(self, listener) -> None:
        """Call ``listener(entry)`` after every logged send."""
        self._listeners.append(listener)

    def send(self, message: Message) -> int:
        """Deliver one copy per receiver. All receivers must be registered.

        Returns the number of copies enqueued.
        """
        with self._cond:
            for name in message.receivers:
                self._require(name)
            if not message.receivers:
                return 0
            entry = LogEntry(next(self._seq), message)
            self.message_log.append(entry)
            delivered = 0
            for name in message.receivers:
                if message.conversation_id in self._expired[name]:
                    self.dropped.append(message)
                    log.info("dropped late %s from %s in expired conversation %s",
                             message.performative.value, message.sender,
                             message.conversation_id)
                    continue
                self._mailboxes[name].append(message)
                delivered += 1
            self._cond.notify_all()
            for listener in self._listeners:
                listener(entry)
        return delivered

    @staticmethod
    def _matches(message: Message, performatives, conversation_id) -> bool:
        if performatives is not None and message.performative not in performatives:
            return False
        return conversation_id is None or message.conversation_id == conversation_id

    def try_receive(self, agent: str, performative=None,
                    conversation_id: str | None = None) -> Message | None:
        """Remove and return the oldest matching message, or None.

        ``performative`` may be a single performative or a collection.
        Non-matching messages stay queued in their original order.
        """
        performatives = _as_set(performative)
        with self._cond:
            self._require(agent)
            box = self._mailboxes[agent]
            for i, message in enumerate(box):
                if self._matches(message, performatives, conversation_id):
                    del box[i]
                    return message
            return None

    def receive(self, agent: str, performative=None, conversation_id: str | None = None,
                timeout: float | None = 0) -> Message:
        """Like :meth:`try_receive` but waits up to ``timeout`` seconds.

        ``timeout=None`` waits indefinitely. Raises ReceiveTimeout.
        """
        performatives = _as_set(performative)
        with self._cond:
            found: list[Message] = []

            def ready() -> bool:
                self._require(agent)
                message = self.try_receive(agent, performatives, conversation_id)
                if message is not None:
                    found.append(message)
                return bool(found)

            if not self._cond.wait_for(ready, timeout=timeout):
                raise ReceiveTimeout(agent)
            return found[0]

    def pending(self, agent: str) -> list[Message]:
        with self._cond:
            self._require(agent)
            return list(self._mailboxes[agent])

    def expire_conversation(self, agent: str, conversation_id: str) -> None:
        """Stop delivering ``conversation_id`` to ``agent``; purge what is queued."""
        with self._cond:
            self._require(agent)
            self._expired[agent].add(conversation_id)
            box = self._mailboxes[agent]
            for message in [m for m in box if m.conversation_id == conversation_id]:
                box.remove(message)
                self.dropped.append(message)
                log.info("dropped late %s from %s in expired conversation %s",
                         message.performative.value, message.sender, conversation_id)

    def dump_log(self) -> str:
        return "".join(entry.to_json() + "\n" for entry in self.message_log)


def _as_set(performative) -> frozenset[Performative] | None:
    if performative is None:
        return None
    if isinstance(performative, (Performative, str)):
        return frozenset({Performative(performative)})
    return frozenset(Performative(p) for p in performative)


# -- wire format ----------------------------------------------------------------

def encode_payload(performative: Performative, payload: Any) -> Any:
    if payload is None:
        return None
    if isinstance(payload, ResourceSpec):
        return payload.to_dict()
    if isinstance(payload, Offer):
        return {"score": payload.score, "resource": payload.resource.to_dict()}
    if isinstance(payload, LeaseTerms):
        return {"resource": payload.resource.to_dict(),
                "contract_address": payload.contract_address,
                "lease_time": payload.lease_time}
    if isinstance(payload, ContractRequest):
        return {"provider_address": payload.provider_address,
                "consumer_address": payload.consumer_address,
                "deadline": payload.deadline}
    return payload


def decode_payload(performative: Performative, data: Any) -> Any:
    expected, _ = PAYLOAD_KINDS[performative]
    if data is None or expected is str:
        return data
    if expected is ResourceSpec:
        return ResourceSpec.from_dict(data)
    if expected is Offer:
        return Offer(data["score"], ResourceSpec.from_dict(data["resource"]))
    if expected is LeaseTerms:
        return LeaseTerms(ResourceSpec.from_dict(data["resource"]),
                          AccountId(data["contract_address"]), data["lease_time"])
    if expected is ContractRequest:
        return ContractRequest(AccountId(data["provider_address"]),
                               AccountId(data["consumer_address"]), data["deadline"])
    raise PayloadError(f"cannot decode {performative.value}")


_RESOURCE_SCHEMA = {
    "type": "object",
    "required": ["title", "price", "mips", "storage_price", "ram_gb", "bandwidth_mbps",
                 "cpu_cores"],
    "properties": {
        "title": {"type": "string"},
        "price": {"type": "string", "pattern": r"^\d+(\.\d+)?$"},
        **{k: {"type": "number", "minimum": 0}
           for k in ("mips", "storage_price", "ram_gb", "bandwidth_mbps", "cpu_cores")},
    },
    "additionalProperties": False,
}
_ADDRESS_SCHEMA = {"type": "string", "pattern": "^0x[0-9a-f]{40}$"}

_PAYLOAD_SCHEMAS = {
    "REQUEST": {"type": "object", "required": ["provider_address", "consumer_address", "deadline"],
                "properties": {"provider_address": _ADDRESS_SCHEMA,
                               "consumer_address": _ADDRESS_SCHEMA,
                               "deadline": {"type": "integer", "minimum": 0}},
                "additionalProperties": False},
    "CONFIRM": _ADDRESS_SCHEMA,
    "CANCEL": {"type": "null"},
    "CFP": _RESOURCE_SCHEMA,
    "PROPOSE": {"type": "object", "required": ["score", "resource"],
                "properties": {"score": {"type": "number", "minimum": 0, "maximum": 1},
                               "resource": _RESOURCE_SCHEMA},
                "additionalProperties": False},
    "REFUSE": {"type": "string"},
    "ACCEPT_PROPOSAL": {"type": "object", "required": ["resource", "contract_address", "lease_time"],
                        "properties": {"resource": _RESOURCE_SCHEMA,
                                       "contract_address": _ADDRESS_SCHEMA,
                                       "lease_time": {"type": "integer", "minimum": 1}},
                        "additionalProperties": False},
    "INFORM": {"type": "string"},
    "FAILURE": {"type": "string"},
    "DISCONFIRM": _RESOURCE_SCHEMA,
}

MESSAGE_LOG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["seq", "conversation_id", "performative", "sender", "receivers", "payload"],
    "properties": {
        "seq": {"type": "integer", "minimum": 1},
        "conversation_id": {"type": "string"},
        "performative": {"enum": [p.value for p in Performative]},
        "sender": {"type": "string"},
        "receivers": {"type": "array", "items": {"type": "string"}},
        "payload": {},
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"performative": {"const": name}}},
         "then": {"properties": {"payload": schema}}}
        for name, schema in _PAYLOAD_SCHEMAS.items()
    ],
}


def parse_log(lines: Iterable[str]) -> list[LogEntry]:
    """Parse JSON-lines back into log entries, validating each line."""
    from jsonschema import Draft202012Validator

    validator = Draft202012Validator(MESSAGE_LOG_SCHEMA)
    entries = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(line_no, f"invalid JSON: {exc}") from exc
        errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
        if errors:
            raise LogFormatError(line_no, errors[0].message)
        performative = Performative(data["performative"])
        message = Message(data["sender"], tuple(data["receivers"]), performative,
                          decode_payload(performative, data["payload"]),
                          data["conversation_id"])
        entries.append(LogEntry(data["seq"], message))
    return entries


class LogFormatError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass
class ReplayReport:
    messages: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


# request performative -> the replies that close it, one per receiver
_EXPECTED_REPLIES = {
    Performative.CFP: {Performative.PROPOSE, Performative.REFUSE},
    Performative.REQUEST: {Performative.CONFIRM, Performative.CANCEL},
    Performative.ACCEPT_PROPOSAL: {Performative.INFORM, Performative.FAILURE},
    Performative.DISCONFIRM: {Performative.DISCONFIRM, Performative.FAILURE},
    Performative.CANCEL: {Performative.CONFIRM, Performative.FAILURE},
}


def check_protocol(entries: list[LogEntry]) -> ReplayReport:
    """Re-validate a message log.

    Checks strictly increasing sequence numbers and that every CFP, REQUEST,
    ACCEPT_PROPOSAL, consumer DISCONFIRM and consumer CANCEL received one reply
    from each receiver, in the same conversation, after it was sent.
    """
    report = ReplayReport(messages=len(entries))
    last_seq = 0
    # (conversation, initiator, responder) -> initiating performative
    open_requests: dict[tuple[str, str, str], Performative] = {}
    for entry in entries:
        m = entry.message
        if entry.seq <= last_seq:
            report.problems.append(f"seq {entry.seq}: not after {last_seq}")
        last_seq = entry.seq
        if len(m.receivers) == 1:
            key = (m.conversation_id, m.receivers[0], m.sender)
            opened = open_requests.get(key)
            if opened is not None and m.performative in _EXPECTED_REPLIES[opened]:
                del open_requests[key]
                continue
        if m.performative in _EXPECTED_REPLIES:
            for receiver in m.receivers:
                key = (m.conversation_id, m.sender, receiver)
                if key in open_requests:
                    report.problems.append(
                        f"seq {entry.seq}: {m.performative.value} reopens conversation "
                        f"{m.conversation_id} with {receiver}")
                open_requests[key] = m.performative
    for (conv, initiator, responder), performative in open_requests.items():
        report.problems.append(
            f"{performative.value} from {initiator} to {responder} in {conv} never answered")
    return report
