"""Running agents.

Reactive agents (providers, the registrar) expose ``step()``, which handles
whatever is in their mailbox. Initiating work (a consumer's trade) is a
generator that yields wait conditions:

* :class:`Receive` - resume with the next matching message, or None once
  ``timeout`` ticks pass without one;
* :class:`Hold` - resume after the epoch clock has advanced by ``epochs``.

:class:`Scheduler` interleaves both round-robin on one thread, which makes a
run fully deterministic. :class:`ThreadedRunner` gives every agent its own
thread and is meant for stress runs only.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Generator

from smartson.platform import Platform, ReceiveTimeout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Receive:
    performative: Any = None
    conversation_id: str | None = None
    timeout: int | None = None


@dataclass(frozen=True)
class Hold:
    epochs: int


class ProtocolDeadlock(RuntimeError):
    """No agent can make progress; the message log is attached."""

    def __init__(self, message: str, message_log: str):
        super().__init__(message)
        self.message_log = message_log


class Process:
    def __init__(self, agent, body: Generator, name: str):
        self.agent = agent
        self.body = body
        self.name = name
        self.started = False
        self.done = False
        self.result: Any = None
        self.waiting: Receive | Hold | None = None
        self.deadline: int | None = None
        self.wake_epoch: int | None = None

    def __repr__(self) -> str:
        return f"<Process {self.name} waiting={self.waiting}>"


class Scheduler:
    def __init__(self, platform: Platform):
        self.platform = platform
        self.agents: list = []
        self.processes: list[Process] = []
        self.epoch = 0
        self.tick = 0
        self._epoch_listeners: list = []

    def on_epoch(self, listener) -> None:
        """Call ``listener(epoch)`` whenever the epoch clock moves."""
        self._epoch_listeners.append(listener)

    def add(self, agent) -> None:
        self.agents.append(agent)
        agent.clock = lambda: self.epoch

    def spawn(self, agent, body: Generator, name: str | None = None) -> Process:
        agent.clock = lambda: self.epoch
        process = Process(agent, body, name or f"{agent.name}#{len(self.processes)}")
        self.processes.append(process)
        return process

    def run_process(self, agent, body: Generator) -> Any:
        process = self.spawn(agent, body)
        self.run()
        return process.result

    def run(self, max_rounds: int = 1_000_000) -> None:
        """Run until every spawned process has finished."""
        for _ in range(max_rounds):
            live = [p for p in self.processes if not p.done]
            if not live:
                self.processes.clear()
                return
            progress = False
            for agent in self.agents:
                if agent.step():
                    progress = True
            for process in live:
                if self._advance(process):
                    progress = True
            self.tick += 1
            if progress:
                continue
            if not self._fast_forward(live):
                waits = ", ".join(repr(p) for p in live)
                raise ProtocolDeadlock(f"no progress possible: {waits}", self.platform.dump_log())
        raise ProtocolDeadlock(f"gave up after {max_rounds} rounds", self.platform.dump_log())

    def _fast_forward(self, live: list[Process]) -> bool:
        deadlines = [p.deadline for p in live if p.deadline is not None]
        if deadlines:
            self.tick = max(self.tick, min(deadlines))
            return True
        wakes = [p.wake_epoch for p in live if p.wake_epoch is not None]
        if wakes:
            self._set_epoch(max(self.epoch, min(wakes)))
            return True
        return False

    def _set_epoch(self, epoch: int) -> None:
        if epoch != self.epoch:
            self.epoch = epoch
            for listener in self._epoch_listeners:
                listener(epoch)

    def _advance(self, process: Process) -> bool:
        progressed = False
        while True:
            if not process.started:
                process.started = True
                value = None
            else:
                value = self._ready(process)
                if value is _BLOCKED:
                    return progressed
            progressed = True
            try:
                wait = process.body.send(value)
            except StopIteration as stop:
                process.done = True
                process.result = stop.value
                process.waiting = None
                return True
            self._park(process, wait)

    def _park(self, process: Process, wait) -> None:
        process.waiting = wait
        process.deadline = None
        process.wake_epoch = None
        if isinstance(wait, Receive):
            if wait.timeout is not None:
                process.deadline = self.tick + wait.timeout
        elif isinstance(wait, Hold):
            process.wake_epoch = self.epoch + wait.epochs
        else:
            raise TypeError(f"{process.name} yielded {wait!r}")

    def _ready(self, process: Process):
        wait = process.waiting
        if isinstance(wait, Receive):
            message = self.platform.try_receive(process.agent.name, wait.performative,
                                                wait.conversation_id)
            if message is not None:
                return message
            if process.deadline is not None and self.tick >= process.deadline:
                log.info("%s: receive timed out at tick %d", process.name, self.tick)
                return None
            return _BLOCKED
        if self.epoch >= process.wake_epoch:
            return None
        return _BLOCKED


_BLOCKED = object()


class ThreadedRunner:
    """One thread per agent and per process; for stress runs only.

    ``Receive.timeout`` is interpreted as a count of ``tick_seconds``. A
    ``Hold`` ends immediately, the epoch counter being advanced by the
    longest hold seen.
    """

    def __init__(self, platform: Platform, tick_seconds: float = 0.05,
                 default_timeout: float = 10.0):
        self.platform = platform
        self.tick_seconds = tick_seconds
        self.default_timeout = default_timeout
        self.agents: list = []
        self.epoch = 0
        self._epoch_lock = threading.Lock()
        self._stop = threading.Event()
        self._epoch_listeners: list = []
        self.errors: list[BaseException] = []

    def on_epoch(self, listener) -> None:
        self._epoch_listeners.append(listener)

    def add(self, agent) -> None:
        self.agents.append(agent)
        agent.clock = lambda: self.epoch

    def _serve(self, agent) -> None:
        handled = list(agent.handlers)
        while not self._stop.is_set():
            try:
                message = self.platform.receive(agent.name, handled, timeout=self.tick_seconds)
            except ReceiveTimeout:
                continue
            try:
                agent.handle(message)
            except BaseException as exc:  # surfaced by run()
                self.errors.append(exc)
                return

    def _drive(self, agent, body: Generator, results: list, index: int) -> None:
        agent.clock = lambda: self.epoch
        value = None
        try:
            while True:
                wait = body.send(value)
                if isinstance(wait, Receive):
                    timeout = (self.default_timeout if wait.timeout is None
                               else wait.timeout * self.tick_seconds)
                    try:
                        value = self.platform.receive(agent.name, wait.performative,
                                                      wait.conversation_id, timeout=timeout)
                    except ReceiveTimeout:
                        value = None
                elif isinstance(wait, Hold):
                    with self._epoch_lock:
                        self.epoch += wait.epochs
                        for listener in self._epoch_listeners:
                            listener(self.epoch)
                    value = None
                else:
                    raise TypeError(f"yielded {wait!r}")
        except StopIteration as stop:
            results[index] = stop.value
        except BaseException as exc:
            self.errors.append(exc)

    def run(self, jobs: list[tuple[Any, Generator]], timeout: float = 120.0) -> list:
        """Run ``(agent, generator)`` jobs concurrently; return their results."""
        self._stop.clear()
        servers = [threading.Thread(target=self._serve, args=(a,), daemon=True)
                   for a in self.agents]
        for thread in servers:
            thread.start()
        results: list = [None] * len(jobs)
        workers = [threading.Thread(target=self._drive, args=(agent, body, results, i),
                                    daemon=True)
                   for i, (agent, body) in enumerate(jobs)]
        started = time.monotonic()
        for thread in workers:
            thread.start()
        for thread in workers:
            thread.join(max(0.0, timeout - (time.monotonic() - started)))
        self._stop.set()
        for thread in servers:
            thread.join()
        if any(t.is_alive() for t in workers):
            raise ProtocolDeadlock("threaded run did not finish", self.platform.dump_log())
        if self.errors:
            raise self.errors[0]
        return results
