"""Event log ingestion (XES subset, CSV) and trace-to-token encoding."""
from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Sequence

CSV_COLUMNS = ("case_id", "activity", "lifecycle", "resource", "group", "timestamp")
RESOURCE_MODES = ("none", "predictor_only", "predictor_and_predictand")
MISSING_LIFECYCLE = "NONE"


class LogParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class LogSchemaError(ValueError):
    """Input is well-formed but lacks required fields."""


class EncodingError(ValueError):
    """A log cannot be encoded under the requested token schema."""


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 instant to an aware UTC datetime truncated to milliseconds.

    Naive timestamps are taken as UTC.
    """
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=ts.microsecond // 1000 * 1000)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class Event:
    activity: str
    lifecycle: str | None = None
    resource: str | None = None
    group: str | None = None
    timestamp: datetime | None = None

    def __post_init__(self):
        if not self.activity:
            raise LogSchemaError("event activity must be non-empty")
        if self.timestamp is not None and self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise LogSchemaError(f"trace {self.case_id!r} has no events")

    def __len__(self) -> int:
        return len(self.events)

    def activities(self) -> list[str]:
        return [e.activity for e in self.events]


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    source_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        seen = set()
        for tr in self.traces:
            if tr.case_id in seen:
                raise LogSchemaError(f"duplicate case id {tr.case_id!r}")
            seen.add(tr.case_id)

    def __len__(self) -> int:
        return len(self.traces)

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.traces)

    def subset(self, indices: Iterable[int], source_name: str | None = None) -> "EventLog":
        return EventLog(tuple(self.traces[i] for i in indices), source_name or self.source_name)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[str]], source_name: str = "") -> "EventLog":
        """Build a log of activity-only events, one trace per sequence."""
        return cls(
            tuple(Trace(f"case{k}", tuple(Event(a) for a in seq)) for k, seq in enumerate(sequences)),
            source_name,
        )


@dataclass(frozen=True)
class TokenSchema:
    use_lifecycle: bool = False
    resource_mode: str = "none"
    resource_field: str = "resource"
    separator: str = "---"
    eoc_token: str = "[EOC]"
    duration_quantized: bool = False
    quantum: timedelta = field(default=timedelta(minutes=1))

    def __post_init__(self):
        if self.resource_mode not in RESOURCE_MODES:
            raise ValueError(f"resource_mode must be one of {RESOURCE_MODES}")
        if self.resource_field not in ("resource", "group"):
            raise ValueError("resource_field must be 'resource' or 'group'")
        if not self.separator:
            raise ValueError("separator must be non-empty")
        if self.quantum <= timedelta(0):
            raise ValueError("quantum must be positive")


# -- XES -------------------------------------------------------------------

_XES_KEYS = {
    "concept:name": "activity",
    "lifecycle:transition": "lifecycle",
    "org:resource": "resource",
    "org:group": "group",
    "time:timestamp": "timestamp",
}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_xes(stream: IO[bytes], source_name: str = "") -> EventLog:
    """Read traces and events from an XES document.

    Only ``string`` and ``date`` attributes directly under ``trace``/``event``
    are looked at; anything else is ignored.
    """
    try:
        root = ET.parse(stream).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise LogParseError(f"malformed XES: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from exc
    if _local(root.tag) != "log":
        raise LogSchemaError(f"root element is <{_local(root.tag)}>, expected <log>")
    traces = []
    for k, tnode in enumerate(el for el in root if _local(el.tag) == "trace"):
        case_id = None
        events = []
        for child in tnode:
            tag = _local(child.tag)
            if tag == "string" and child.get("key") == "concept:name":
                case_id = child.get("value")
            elif tag == "event":
                attrs = {}
                for a in child:
                    key = _XES_KEYS.get(a.get("key", ""))
                    if key is None or _local(a.tag) not in ("string", "date"):
                        continue
                    attrs[key] = a.get("value")
                label = case_id if case_id is not None else f"#{k}"
                if not attrs.get("activity"):
                    raise LogSchemaError(f"trace {label}: event {len(events)} has no concept:name")
                if attrs.get("timestamp") is not None:
                    try:
                        attrs["timestamp"] = parse_timestamp(attrs["timestamp"])
                    except ValueError as exc:
                        raise LogSchemaError(f"trace {label}: bad timestamp {attrs['timestamp']!r}") from exc
                events.append(Event(**attrs))
        case_id = case_id if case_id is not None else str(k)
        if not events:
            raise LogSchemaError(f"trace {case_id} has no events")
        traces.append(Trace(case_id, tuple(events)))
    return EventLog(tuple(traces), source_name)


# -- CSV -------------------------------------------------------------------


def parse_csv(stream: IO[bytes], source_name: str = "") -> EventLog:
    """Read a CSV event log; rows are grouped by case id in first-seen order."""
    text = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise LogSchemaError("empty CSV file (no header)") from None
    header = [h.strip() for h in header]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise LogSchemaError(f"CSV header lacks column(s): {', '.join(missing)}")
    col = {c: header.index(c) for c in CSV_COLUMNS}
    cases: dict[str, list[Event]] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not cell for cell in row):
            continue
        if len(row) < len(header):
            raise LogParseError(f"row {rowno}: expected {len(header)} fields, got {len(row)}", rowno, 1)
        get = lambda c: row[col[c]] or None  # noqa: E731
        ts = get("timestamp")
        if ts is not None:
            try:
                ts = parse_timestamp(ts)
            except ValueError:
                raise LogParseError(f"row {rowno}: unparseable timestamp {ts!r}", rowno, col["timestamp"] + 1) from None
        case_id = row[col["case_id"]]
        if not get("activity"):
            raise LogSchemaError(f"row {rowno}: empty activity")
        cases.setdefault(case_id, []).append(
            Event(get("activity"), get("lifecycle"), get("resource"), get("group"), ts)
        )
    return EventLog(tuple(Trace(cid, tuple(evs)) for cid, evs in cases.items()), source_name)


def write_csv(log: EventLog, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for tr in log.traces:
        for e in tr.events:
            writer.writerow(
                [
                    tr.case_id,
                    e.activity,
                    e.lifecycle or "",
                    e.resource or "",
                    e.group or "",
                    format_timestamp(e.timestamp) if e.timestamp else "",
                ]
            )


def read_log(path) -> EventLog:
    """Dispatch on file extension (.xes or .csv)."""
    from pathlib import Path

    p = Path(path)
    with open(p, "rb") as fh:
        if p.suffix.lower() == ".xes":
            return parse_xes(fh, p.name)
        if p.suffix.lower() == ".csv":
            return parse_csv(fh, p.name)
    raise LogSchemaError(f"unsupported log format {p.suffix!r} (use .xes or .csv)")


# -- encoding --------------------------------------------------------------


def _event_parts(e: Event, schema: TokenSchema, trace: Trace) -> tuple[list[str], str | None]:
    parts = [e.activity]
    if schema.use_lifecycle:
        parts.append(e.lifecycle if e.lifecycle else MISSING_LIFECYCLE)
    res = None
    if schema.resource_mode != "none":
        res = getattr(e, schema.resource_field)
        if not res:
            raise EncodingError(f"trace {trace.case_id}: event {e.activity!r} has no {schema.resource_field}")
    for value in parts + ([res] if res else []):
        if schema.separator in value:
            raise EncodingError(f"trace {trace.case_id}: value {value!r} contains separator {schema.separator!r}")
    return parts, res


def encode_aligned(log: EventLog, schema: TokenSchema) -> tuple[list[list[str]], list[list[str]]]:
    """Per-trace input tokens and the position-aligned predictand tokens.

    Both lists end with the end-of-case token. The predictand drops the
    resource component when ``resource_mode == 'predictor_only'``; otherwise
    the two are identical.
    """
    if schema.duration_quantized:
        toks = encode_durations(log, schema.quantum, schema.eoc_token)
        return toks, [list(t) for t in toks]
    inputs, preds = [], []
    sep = schema.separator
    for tr in log.traces:
        tin, tout = [], []
        for e in tr.events:
            parts, res = _event_parts(e, schema, tr)
            base = sep.join(parts)
            tin.append(base + sep + res if res else base)
            tout.append(base if schema.resource_mode == "predictor_only" else tin[-1])
        tin.append(schema.eoc_token)
        tout.append(schema.eoc_token)
        inputs.append(tin)
        preds.append(tout)
    return inputs, preds


def shift_targets(predictands: list[list[str]]) -> list[list[str]]:
    """Targets per trace: the predictand of the following stream position.

    The last trace's list is one shorter, since nothing follows the stream end.
    """
    flat = [tok for tr in predictands for tok in tr]
    out, pos = [], 0
    for tr in predictands:
        out.append(flat[pos + 1 : pos + len(tr) + 1])
        pos += len(tr)
    return out


def encode(log: EventLog, schema: TokenSchema) -> tuple[list[list[str]], list[list[str]]]:
    """Input tokens per trace and targets shifted by one along the concatenated stream."""
    inputs, preds = encode_aligned(log, schema)
    return inputs, shift_targets(preds)


def _is_start(lc: str | None) -> bool:
    return lc is not None and lc.lower() == "start"


def _is_complete(lc: str | None) -> bool:
    return lc is not None and lc.lower() == "complete"


def activity_intervals(trace: Trace) -> list[tuple[datetime, datetime, str]]:
    """Pair Start/Complete events per activity into (start, end, activity) intervals."""
    open_: dict[str, list[datetime]] = {}
    out = []
    for e in trace.events:
        if _is_start(e.lifecycle) or _is_complete(e.lifecycle):
            if e.timestamp is None:
                raise EncodingError(f"trace {trace.case_id}: {e.activity!r} {e.lifecycle} has no timestamp")
        if _is_start(e.lifecycle):
            open_.setdefault(e.activity, []).append(e.timestamp)
        elif _is_complete(e.lifecycle):
            pending = open_.get(e.activity)
            if not pending:
                raise EncodingError(f"trace {trace.case_id}: complete of {e.activity!r} without start")
            out.append((pending.pop(0), e.timestamp, e.activity))
    dangling = [a for a, ts in open_.items() if ts]
    if dangling:
        raise EncodingError(f"trace {trace.case_id}: start without complete for {', '.join(dangling)}")
    out.sort(key=lambda iv: (iv[0], iv[1]))
    return out


def encode_durations(log: EventLog, quantum: timedelta = timedelta(minutes=1), eoc_token: str = "[EOC]") -> list[list[str]]:
    """One activity token per started quantum of its duration (at least one).

    Idle time between activities is not encoded.
    """
    if quantum <= timedelta(0):
        raise ValueError("quantum must be positive")
    out = []
    for tr in log.traces:
        toks = []
        prev_end = None
        for start, end, act in activity_intervals(tr):
            if prev_end is not None and start < prev_end:
                raise EncodingError(f"trace {tr.case_id}: activity {act!r} overlaps the previous activity")
            n = max(1, -((start - end) // quantum))
            toks.extend([act] * n)
            prev_end = end
        toks.append(eoc_token)
        out.append(toks)
    return out
