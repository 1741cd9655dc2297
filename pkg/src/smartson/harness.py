"""Headless scenario runner.

Builds a platform with one registrar, N providers and one or more consumers,
then plays epochs: in each epoch every consumer requests a resource, trades
for it, holds it for the lease and releases it before the next epoch starts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple

from smartson.agents import ConsumerAgent, ProviderAgent, RegistrarAgent, TradeResult
from smartson.ledger import AccountId, Ledger, Receipt
from smartson.matching import Catalogue, ResourceSpec, load_trace, trace_index
from smartson.money import ZERO, Money, MoneyError, total
from smartson.platform import LogEntry, Platform
from smartson.scheduler import Scheduler, ThreadedRunner

CSV_HEADER = ("epoch", "requested", "winner", "offered", "wei", "contract_fee")
FIXTURES = ("table3", "table4")
DEFAULT_BALANCES = {"consumer": "10", "provider": "0.05", "authority": "0"}
_NON_CONFIG_KEYS = {"description", "expected"}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    num_providers: int = 5
    num_consumers: int = 1
    catalogue_mode: str = "random"
    catalogue_size: int = 5
    catalogues: list[list[str]] | None = None
    requests: list[str] | str = "random"
    epochs: int = 1
    fee_percent: int = 2
    lease_time_hours: int = 1
    deadline_offset: int = 100
    initial_balances: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_BALANCES))
    deterministic: bool = True
    reply_timeout: int | None = None
    trace: str | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - _NON_CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in data.items() if k in known})
        cfg.initial_balances = {**DEFAULT_BALANCES, **cfg.initial_balances}
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def balance(self, role: str) -> Money:
        try:
            return Money.parse(self.initial_balances[role])
        except (KeyError, MoneyError) as exc:
            raise ConfigError(f"bad initial balance for {role}: {exc}") from exc

    def validate(self, titles: set[str]) -> None:
        def need(condition: bool, message: str) -> None:
            if not condition:
                raise ConfigError(message)

        for name in ("seed", "num_providers", "num_consumers", "catalogue_size", "epochs",
                     "fee_percent", "lease_time_hours", "deadline_offset"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool),
                 f"{name} must be an integer")
        need(self.epochs >= 1, "epochs must be at least 1")
        need(self.num_providers >= 0, "num_providers must be >= 0")
        need(self.num_consumers >= 1, "num_consumers must be >= 1")
        need(0 <= self.fee_percent <= 100, "fee_percent must lie in 0..100")
        need(self.lease_time_hours >= 1, "lease_time_hours must be >= 1")
        need(self.deadline_offset >= 1, "deadline_offset must be >= 1")
        need(self.reply_timeout is None or self.reply_timeout >= 1,
             "reply_timeout must be >= 1 or null")
        for role in DEFAULT_BALANCES:
            self.balance(role)
        if self.catalogue_mode == "explicit":
            need(self.catalogues is not None and len(self.catalogues) == self.num_providers,
                 "explicit mode needs one title list per provider")
            for pool in self.catalogues:
                for title in pool:
                    need(title in titles, f"unknown resource title in catalogue: {title}")
        elif self.catalogue_mode == "random":
            need(0 <= self.catalogue_size <= len(titles), "catalogue_size exceeds the trace")
        else:
            raise ConfigError(f"catalogue_mode must be 'random' or 'explicit', "
                              f"got {self.catalogue_mode!r}")
        if isinstance(self.requests, str):
            need(self.requests == "random", "requests must be a title list or 'random'")
        else:
            need(len(self.requests) == self.epochs, "need exactly one request title per epoch")
            for title in self.requests:
                need(title in titles, f"unknown resource title in requests: {title}")


def load_config(source: str | Path) -> tuple[ScenarioConfig, dict[str, Any]]:
    """Read a JSON config; a bare fixture name selects a bundled one.

    Returns the config and the raw document (bundled fixtures carry an
    ``expected`` block with reference figures).
    """
    source = str(source)
    if source in FIXTURES:
        text = resources.files("smartson").joinpath(f"data/{source}.json").read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: expected a JSON object")
    try:
        return ScenarioConfig.from_dict(raw), raw
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def draw_without_replacement(rng: random.Random, population: list, k: int) -> list:
    """Selection sampling: walk the population in order, keep each item with
    probability (still needed) / (still available). Output keeps input order."""
    chosen = []
    remaining = len(population)
    for item in population:
        if len(chosen) == k:
            break
        if rng.random() * remaining < k - len(chosen):
            chosen.append(item)
        remaining -= 1
    return chosen


def draw_one(rng: random.Random, population: list):
    return population[int(rng.random() * len(population))]


@dataclass
class EpochRecord:
    epoch: int
    consumer: str
    requested: str
    winner: str | None
    offered: str | None
    score: float | None
    amount: Money
    contract_fee: Money
    provider_amount: Money
    contract: AccountId | None
    status: str
    receipts: list[Receipt] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "consumer": self.consumer,
            "requested": self.requested,
            "winner": self.winner,
            "offered": self.offered,
            "score": self.score,
            "wei": self.amount.short(),
            "contract_fee": self.contract_fee.short(),
            "provider_amount": self.provider_amount.short(),
            "contract": self.contract,
            "status": self.status,
            "receipts": [r.to_dict() for r in self.receipts],
        }


@dataclass
class ScoreRow:
    epoch: int
    consumer: str
    provider: str
    scores: list[tuple[str, float]]


@dataclass
class SimulationReport:
    config: ScenarioConfig
    records: list[EpochRecord]
    scores: list[ScoreRow]
    accounts: dict[str, AccountId]
    initial_balances: dict[str, Money]
    final_balances: dict[str, Money]
    ledger_state: dict[str, Any]
    message_log: list[LogEntry]
    trace: list[TraceEvent]
    catalogues: dict[str, list[str]]

    @property
    def providers(self) -> list[str]:
        return sorted((n for n in self.accounts if n.startswith("provider-")),
                      key=lambda n: int(n.split("-")[1]))

    @property
    def total_amount(self) -> Money:
        return total(r.amount for r in self.completed())

    @property
    def total_fee(self) -> Money:
        return total(r.contract_fee for r in self.completed())

    def completed(self) -> list[EpochRecord]:
        return [r for r in self.records if r.status == "complete"]

    def score_matrix(self, epoch: int = 1, consumer: str = "consumer-1") -> dict[str, list[tuple[str, float]]]:
        return {row.provider: row.scores for row in self.scores
                if row.epoch == epoch and row.consumer == consumer}

    def message_log_text(self) -> str:
        return "".join(entry.to_json() + "\n" for entry in self.message_log)


def _build_catalogues(cfg: ScenarioConfig, trace: list[ResourceSpec],
                      rng: random.Random) -> list[list[ResourceSpec]]:
    by_title = trace_index(trace)
    if cfg.catalogue_mode == "explicit":
        return [[by_title[t] for t in pool] for pool in cfg.catalogues]
    return [draw_without_replacement(rng, trace, cfg.catalogue_size)
            for _ in range(cfg.num_providers)]


class TraceEvent(NamedTuple):
    """One step of a run: a delivered message copy, a mined transaction, or an
    epoch boundary. ``actor`` is ``sender->receiver`` for messages and the
    sending account's name for transactions."""

    kind: str
    label: str
    actor: str


def _record_events(events: list[TraceEvent], platform: Platform, ledger: Ledger,
                   accounts: dict[str, AccountId]) -> None:
    def on_message(entry: LogEntry) -> None:
        m = entry.message
        for receiver in m.receivers:
            events.append(TraceEvent("message", m.performative.value, f"{m.sender}->{receiver}"))

    def on_receipt(receipt: Receipt) -> None:
        names = {address: name for name, address in accounts.items()}
        label = receipt.method or "transfer"
        if receipt.reverted:
            label += "!reverted"
        events.append(TraceEvent("tx", label, names.get(receipt.sender, receipt.sender)))

    platform.subscribe(on_message)
    ledger.subscribe(on_receipt)


def run_scenario(cfg: ScenarioConfig) -> SimulationReport:
    trace = load_trace(cfg.trace)
    by_title = trace_index(trace)
    cfg.validate(set(by_title))
    rng = random.Random(cfg.seed)

    ledger = Ledger()
    platform = Platform()
    accounts: dict[str, AccountId] = {}
    events: list[TraceEvent] = []
    _record_events(events, platform, ledger, accounts)

    authority = accounts["registrar"] = ledger.create_account(cfg.balance("authority"))
    registrar = RegistrarAgent("registrar", platform, ledger, authority, cfg.fee_percent)

    providers: list[ProviderAgent] = []
    for i, pool in enumerate(_build_catalogues(cfg, trace, rng), start=1):
        name = f"provider-{i}"
        wallet = accounts[name] = ledger.create_account(cfg.balance("provider"))
        providers.append(ProviderAgent(name, platform, ledger, wallet, Catalogue(pool)))
    catalogues = {p.name: p.catalogue.titles() for p in providers}

    consumers: list[ConsumerAgent] = []
    for i in range(1, cfg.num_consumers + 1):
        name = f"consumer-{i}"
        wallet = accounts[name] = ledger.create_account(cfg.balance("consumer"))
        consumers.append(ConsumerAgent(
            name, platform, ledger, wallet, registrar=registrar.name,
            lease_time=cfg.lease_time_hours, deadline_offset=cfg.deadline_offset,
            reply_timeout=cfg.reply_timeout))

    initial = {name: ledger.balance_of(a) for name, a in accounts.items()}
    supply = ledger.total_balance()

    if cfg.deterministic:
        runner = Scheduler(platform)
    else:
        runner = ThreadedRunner(platform)
    runner.on_epoch(lambda epoch: events.append(TraceEvent("epoch", str(epoch), "")))
    runner.add(registrar)
    for provider in providers:
        runner.add(provider)

    records: list[EpochRecord] = []
    score_rows: list[ScoreRow] = []
    seen_scores = {p.name: 0 for p in providers}
    for epoch in range(1, cfg.epochs + 1):
        jobs = []
        for consumer in consumers:
            if isinstance(cfg.requests, str):
                target = draw_one(rng, trace)
            else:
                target = by_title[cfg.requests[epoch - 1]]
            jobs.append((consumer, consumer.trade(target)))
        if cfg.deterministic:
            processes = [runner.spawn(c, body) for c, body in jobs]
            runner.run()
            results: list[TradeResult] = [p.result for p in processes]
        else:
            results = runner.run(jobs)

        for provider in providers:
            for _, requester, matches in provider.score_log[seen_scores[provider.name]:]:
                score_rows.append(ScoreRow(epoch, requester, provider.name,
                                           [(m.resource.title, m.score) for m in matches]))
            seen_scores[provider.name] = len(provider.score_log)
        for consumer, result in zip(consumers, results):
            receipts = [r for r in ledger.history
                        if result.contract and r.target == result.contract]
            records.append(EpochRecord(
                epoch=epoch,
                consumer=consumer.name,
                requested=result.requested.title,
                winner=result.winner,
                offered=result.offered.title if result.offered else None,
                score=result.score,
                amount=result.deposit if result.status == "complete" else ZERO,
                contract_fee=result.fee,
                provider_amount=result.provider_amount,
                contract=result.contract,
                status=result.status,
                receipts=receipts,
            ))

    if ledger.total_balance() != supply:
        raise RuntimeError("conservation violated: total balance changed during the run")
    final = {name: ledger.balance_of(a) for name, a in accounts.items()}
    return SimulationReport(
        config=cfg,
        records=records,
        scores=score_rows,
        accounts=accounts,
        initial_balances=initial,
        final_balances=final,
        ledger_state=ledger.state(),
        message_log=list(platform.message_log),
        trace=events,
        catalogues=catalogues,
    )


def balance_series(report: SimulationReport) -> dict[str, list[Money]]:
    """Provider wallet balance after each epoch; index 0 is the starting balance."""
    series = {}
    for provider in report.providers:
        balance = report.initial_balances[provider]
        points = [balance]
        for epoch in range(1, report.config.epochs + 1):
            for record in report.completed():
                if record.epoch == epoch and record.winner == provider:
                    balance = balance + (record.amount - record.contract_fee)
            points.append(balance)
        series[provider] = points
    return series


def check_report(report: SimulationReport) -> list[str]:
    """Self-consistency problems in a report (empty when sound)."""
    problems = []
    fee_percent = report.config.fee_percent
    for record in report.completed():
        if record.contract_fee != record.amount.percent(fee_percent):
            problems.append(f"epoch {record.epoch}: fee {record.contract_fee} is not "
                            f"{fee_percent}% of {record.amount}")
        if record.contract_fee + record.provider_amount != record.amount:
            problems.append(f"epoch {record.epoch}: payout does not add up")
    if total(report.initial_balances.values()) != total(report.final_balances.values()):
        problems.append("sum of balances changed")
    gains = total(report.final_balances[p] for p in report.providers) - \
        total(report.initial_balances[p] for p in report.providers)
    if gains != report.total_amount - report.total_fee:
        problems.append("provider gains differ from amounts minus fees")
    return problems


def report_to_dict(report: SimulationReport) -> dict[str, Any]:
    log_text = report.message_log_text()
    series = balance_series(report)
    return {
        "config": report.config.to_dict(),
        "accounts": dict(report.accounts),
        "catalogues": report.catalogues,
        "epochs": [r.to_dict() for r in report.records],
        "scores": [
            {"epoch": row.epoch, "consumer": row.consumer, "provider": row.provider,
             "scores": [{"title": t, "score": s} for t, s in row.scores]}
            for row in report.scores
        ],
        "totals": {
            "wei": report.total_amount.short(),
            "contract_fee": report.total_fee.short(),
            "provider_gain": (report.total_amount - report.total_fee).short(),
        },
        "balances": {
            "initial": {n: str(b) for n, b in report.initial_balances.items()},
            "final": {n: str(b) for n, b in report.final_balances.items()},
        },
        "balance_series": {p: [str(b) for b in points] for p, points in series.items()},
        "ledger": report.ledger_state,
        "trace": [list(event) for event in report.trace],
        "message_log": {
            "file": "messages.jsonl",
            "entries": len(report.message_log),
            "sha256": hashlib.sha256(log_text.encode()).hexdigest(),
        },
    }


def report_to_json(report: SimulationReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def report_to_csv(report: SimulationReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report.records:
        writer.writerow([r.epoch, r.requested, r.winner or "", r.offered or "",
                         r.amount.short(), r.contract_fee.short()])
    return buffer.getvalue()


def series_to_csv(report: SimulationReport) -> str:
    series = balance_series(report)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", *series])
    for epoch in range(report.config.epochs + 1):
        writer.writerow([epoch, *(points[epoch].short() for points in series.values())])
    return buffer.getvalue()


def emit_report(report: SimulationReport, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write the report plus the message log; returns the written paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported format: {fmt}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        written.append(_write(out / "report.csv", report_to_csv(report)))
        written.append(_write(out / "balances.csv", series_to_csv(report)))
    else:
        written.append(_write(out / "report.json", report_to_json(report)))
    written.append(_write(out / "messages.jsonl", report.message_log_text()))
    return written


def _write(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path

