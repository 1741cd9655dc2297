from __future__ import annotations

from dataclasses import dataclass

import pytest

from smartson import escrow
from smartson.ledger import AccountId, Ledger
from smartson.matching import Catalogue, load_trace, trace_index
from smartson.money import Money
from smartson.platform import Platform

TABLE3_POOLS = [
    ["t3a.micro", "m5.large", "t3.nano", "m5a.large", "t3a.small"],
    ["m5.xlarge", "m5d.xlarge", "m5.large", "m5a.large", "m5dn.large"],
    ["m4.large", "a1.medium", "t2.micro", "t3.nano", "m5d.xlarge"],
    ["t2.micro", "t3.small", "t3a.medium", "a1.large", "m5a.large"],
    ["m5ad.large", "m5d.xlarge", "a1.2xlarge", "t3a.xlarge", "t3.small"],
]


def M(text: str) -> Money:
    return Money.parse(text)


@pytest.fixture(scope="session")
def trace():
    return load_trace()


@pytest.fixture(scope="session")
def by_title(trace):
    return trace_index(trace)


@pytest.fixture
def pools(by_title):
    return [Catalogue(by_title[t] for t in pool) for pool in TABLE3_POOLS]


@pytest.fixture
def ledger() -> Ledger:
    return Ledger()


@pytest.fixture
def platform() -> Platform:
    return Platform()


@dataclass
class Parties:
    ledger: Ledger
    authority: AccountId
    provider: AccountId
    consumer: AccountId
    contract: AccountId


@pytest.fixture
def parties(ledger) -> Parties:
    """An initialized escrow: fee 2%, deadline 100 blocks out."""
    authority = ledger.create_account(M("0"))
    provider = ledger.create_account(M("0.05"))
    consumer = ledger.create_account(M("1"))
    contract = escrow.deploy(ledger, authority)
    escrow.initialize(ledger, authority, contract, provider, consumer, 2,
                      ledger.current_block + 100)
    return Parties(ledger, authority, provider, consumer, contract)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, passed, detail = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{verdict}] {name}: {detail}")
