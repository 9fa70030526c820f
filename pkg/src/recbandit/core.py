"""Domain types shared across the toolkit, plus event-log serialization.

An interaction log interleaves two kinds of per-user events on a single
per-user timeline: *organic* item views and *bandit* recommendation events
(shown item, logged propensity, click outcome). Logs are serialized as
JSON-lines with a header record, one event per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterator, Sequence, Union

import numpy as np

LOG_FORMAT_VERSION = 1


class LogFormatError(ValueError):
    """A log file line that cannot be parsed or fails field validation."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based RNG stream for (seed, *key).

    Streams are derived via Philox keyed by a SeedSequence spawn key, so any
    (seed, purpose, index) tuple yields the same stream regardless of how
    many other streams were created first. This is what makes user-level
    simulation order-independent and safe to parallelize.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Context:
    """Per-user organic view counts at a point in time, one entry per item."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError(f"context counts must be non-negative, got {self.counts}")

    @property
    def n_items(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)


@dataclass(frozen=True)
class Action:
    """A recommended item, identified by its index in [0, n_items)."""

    id: int
    n_items: int

    def __post_init__(self):
        if not 0 <= self.id < self.n_items:
            raise ValueError(f"action id {self.id} outside [0, {self.n_items})")

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(self.n_items, dtype=np.float64)
        vec[self.id] = 1.0
        return vec


@dataclass(frozen=True)
class OrganicEvent:
    """A user viewing an item on their own, independent of recommendations."""

    user_id: int
    t: int
    item: int

    def __post_init__(self):
        if self.item < 0:
            raise ValueError(f"item must be non-negative, got {self.item}")


@dataclass(frozen=True)
class BanditEvent:
    """One logged recommendation: context, shown item, propensity, click."""

    user_id: int
    t: int
    context: Context
    action: Action
    propensity: float
    click: int

    def __post_init__(self):
        if not 0.0 < self.propensity <= 1.0:
            raise ValueError(f"propensity must lie in (0, 1], got {self.propensity}")
        if self.click not in (0, 1):
            raise ValueError(f"click must be 0 or 1, got {self.click}")
        if self.context.n_items != self.action.n_items:
            raise ValueError("context length and action item count disagree")


Event = Union[OrganicEvent, BanditEvent]


@dataclass(frozen=True)
class InteractionLog:
    """Time-ordered events grouped by user, over a fixed item catalogue.

    Within each user the event index ``t`` strictly increases; a user's
    events are contiguous in ``events``. Bandit events carry their context
    explicitly, so training never needs to replay organic history, but the
    stored context stays reconstructible via :func:`context_from_history`.
    """

    n_items: int
    events: tuple[Event, ...]

    def __post_init__(self):
        last_t: dict[int, int] = {}
        finished: set[int] = set()
        prev_user: int | None = None
        for ev in self.events:
            if ev.user_id != prev_user:
                if ev.user_id in finished:
                    raise ValueError(f"events of user {ev.user_id} are not contiguous")
                if prev_user is not None:
                    finished.add(prev_user)
                prev_user = ev.user_id
            if ev.user_id in last_t and ev.t <= last_t[ev.user_id]:
                raise ValueError(
                    f"event index must strictly increase within user {ev.user_id}"
                )
            last_t[ev.user_id] = ev.t
            if isinstance(ev, OrganicEvent):
                if ev.item >= self.n_items:
                    raise ValueError(f"item {ev.item} outside catalogue of {self.n_items}")
            else:
                if ev.action.n_items != self.n_items:
                    raise ValueError("bandit event action sized for a different catalogue")

    def user_ids(self) -> list[int]:
        seen: list[int] = []
        prev = None
        for ev in self.events:
            if ev.user_id != prev:
                seen.append(ev.user_id)
                prev = ev.user_id
        return seen

    def events_for(self, user_id: int) -> list[Event]:
        out = [ev for ev in self.events if ev.user_id == user_id]
        if not out:
            raise KeyError(f"unknown user_id {user_id}")
        return out

    def bandit_events(self) -> Iterator[BanditEvent]:
        return (ev for ev in self.events if isinstance(ev, BanditEvent))

    def organic_events(self) -> Iterator[OrganicEvent]:
        return (ev for ev in self.events if isinstance(ev, OrganicEvent))

    def restricted_to_users(self, user_ids: Sequence[int]) -> "InteractionLog":
        wanted = set(user_ids)
        return InteractionLog(
            self.n_items, tuple(ev for ev in self.events if ev.user_id in wanted)
        )


def context_from_history(log: InteractionLog, user_id: int, t: int) -> Context:
    """Organic view counts of `user_id` over events strictly before index `t`.

    Raises KeyError for an unknown user and IndexError when `t` is not one of
    that user's event indices.
    """
    user_events = log.events_for(user_id)
    if t not in {ev.t for ev in user_events}:
        raise IndexError(f"user {user_id} has no event with index {t}")
    counts = [0] * log.n_items
    for ev in user_events:
        if ev.t >= t:
            break
        if isinstance(ev, OrganicEvent):
            counts[ev.item] += 1
    return Context(tuple(counts))


def _event_record(ev: Event) -> dict:
    if isinstance(ev, OrganicEvent):
        return {"type": "organic", "user_id": ev.user_id, "t": ev.t, "item": ev.item}
    return {
        "type": "bandit",
        "user_id": ev.user_id,
        "t": ev.t,
        "context": list(ev.context.counts),
        "action": ev.action.id,
        "propensity": ev.propensity,
        "click": ev.click,
    }


def write_log(log: InteractionLog, destination: Union[str, IO[str]]) -> None:
    """Write a log as JSON-lines: a header record, then one event per line.

    Propensities are emitted via Python's shortest round-trip float repr,
    which reconstructs the identical double on read.
    """
    if isinstance(destination, str):
        with open(destination, "w") as fh:
            write_log(log, fh)
        return
    header = {"n_items": log.n_items, "format_version": LOG_FORMAT_VERSION}
    destination.write(json.dumps(header) + "\n")
    for ev in log.events:
        destination.write(json.dumps(_event_record(ev)) + "\n")


def _require(record: dict, field: str, line_no: int):
    if field not in record:
        raise LogFormatError(f"missing field '{field}'", line_no)
    return record[field]


def read_log(source: Union[str, IO[str]]) -> InteractionLog:
    """Parse a JSON-lines log; errors name the offending line and field."""
    if isinstance(source, str):
        with open(source) as fh:
            return read_log(fh)

    lines = iter(enumerate(source, start=1))
    try:
        line_no, raw = next(lines)
    except StopIteration:
        raise LogFormatError("empty file, expected a header record", 1) from None
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"invalid JSON: {exc}", line_no) from exc
    n_items = _require(header, "n_items", line_no)
    version = _require(header, "format_version", line_no)
    if version != LOG_FORMAT_VERSION:
        raise LogFormatError(
            f"field 'format_version': unsupported version {version}", line_no
        )

    events: list[Event] = []
    for line_no, raw in lines:
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"invalid JSON: {exc}", line_no) from exc
        kind = _require(rec, "type", line_no)
        try:
            if kind == "organic":
                events.append(
                    OrganicEvent(
                        user_id=int(_require(rec, "user_id", line_no)),
                        t=int(_require(rec, "t", line_no)),
                        item=int(_require(rec, "item", line_no)),
                    )
                )
            elif kind == "bandit":
                events.append(
                    BanditEvent(
                        user_id=int(_require(rec, "user_id", line_no)),
                        t=int(_require(rec, "t", line_no)),
                        context=Context(tuple(int(c) for c in _require(rec, "context", line_no))),
                        action=Action(int(_require(rec, "action", line_no)), n_items),
                        propensity=float(_require(rec, "propensity", line_no)),
                        click=int(_require(rec, "click", line_no)),
                    )
                )
            else:
                raise LogFormatError(f"field 'type': unknown event type {kind!r}", line_no)
        except LogFormatError:
            raise
        except ValueError as exc:
            raise LogFormatError(str(exc), line_no) from exc
    try:
        return InteractionLog(n_items=n_items, events=tuple(events))
    except ValueError as exc:
        raise LogFormatError(str(exc)) from exc
