import io
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nextevent.eventlog import (
    EncodingError,
    Event,
    EventLog,
    LogParseError,
    LogSchemaError,
    TokenSchema,
    Trace,
    encode,
    encode_aligned,
    encode_durations,
    parse_csv,
    parse_xes,
    write_csv,
)

XES = b"""<?xml version="1.0" encoding="UTF-8"?>
<log xes.version="1.0" xmlns="http://www.xes-standard.org/">
  <extension name="Concept" prefix="concept" uri="http://www.xes-standard.org/concept.xesext"/>
  <trace>
    <string key="concept:name" value="case-1"/>
    <event>
      <string key="concept:name" value="A"/>
      <string key="lifecycle:transition" value="COMPLETE"/>
      <string key="org:resource" value="Jane"/>
      <date key="time:timestamp" value="2012-01-01T10:00:00.000+01:00"/>
      <int key="ignored" value="3"/>
    </event>
    <event>
      <string key="concept:name" value="B"/>
      <string key="org:group" value="Team 1"/>
    </event>
  </trace>
</log>
"""

CSV_HEADER = "case_id,activity,lifecycle,resource,group,timestamp\n"
UTC = timezone.utc


def csv_bytes(rows):
    return io.BytesIO((CSV_HEADER + "".join(r + "\n" for r in rows)).encode())


def test_parse_xes_minimal():
    log = parse_xes(io.BytesIO(XES))
    assert len(log) == 1
    tr = log.traces[0]
    assert tr.case_id == "case-1"
    assert tr.activities() == ["A", "B"]
    assert tr.events[0].lifecycle == "COMPLETE"
    assert tr.events[0].resource == "Jane"
    assert tr.events[0].timestamp == datetime(2012, 1, 1, 9, 0, tzinfo=UTC)
    assert tr.events[1].group == "Team 1"
    assert tr.events[1].lifecycle is None


def test_parse_xes_malformed_reports_position():
    with pytest.raises(LogParseError) as exc:
        parse_xes(io.BytesIO(b"<log>\n<trace>\n</log>"))
    assert exc.value.line == 3


def test_parse_xes_missing_activity():
    doc = b'<log><trace><string key="concept:name" value="c7"/><event><string key="org:resource" value="x"/></event></trace></log>'
    with pytest.raises(LogSchemaError, match="c7"):
        parse_xes(io.BytesIO(doc))


def test_parse_csv_groups_interleaved_cases():
    log = parse_csv(csv_bytes(["c1,A,,,,", "c2,X,,,,", "c1,B,,,,", "c2,Y,,,,", "c1,C,,,,"]))
    assert [t.case_id for t in log.traces] == ["c1", "c2"]
    assert log.traces[0].activities() == ["A", "B", "C"]
    assert log.traces[1].activities() == ["X", "Y"]


def test_parse_csv_simple_and_empty():
    log = parse_csv(csv_bytes(["c1,A,start,Jane,G,2020-01-01T00:00:00Z", "c1,B,,,,"]))
    assert log.traces[0].activities() == ["A", "B"]
    assert log.traces[0].events[0].timestamp == datetime(2020, 1, 1, tzinfo=UTC)
    assert len(parse_csv(csv_bytes([]))) == 0


def test_parse_csv_errors():
    with pytest.raises(LogSchemaError, match="group"):
        parse_csv(io.BytesIO(b"case_id,activity,lifecycle,resource,timestamp\n"))
    with pytest.raises(LogParseError) as exc:
        parse_csv(csv_bytes(["c1,A,,,,2020-01-01", "c1,B,,,,not-a-date"]))
    assert exc.value.line == 3


def test_trace_and_log_invariants():
    with pytest.raises(LogSchemaError):
        Trace("x", ())
    with pytest.raises(LogSchemaError):
        Event("")
    with pytest.raises(LogSchemaError):
        EventLog((Trace("a", (Event("A"),)), Trace("a", (Event("B"),))))


names = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=8).filter(
    lambda s: "---" not in s
)
opt = st.one_of(st.none(), names)
stamps = st.one_of(
    st.none(),
    st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2100, 1, 1)).map(
        lambda d: d.replace(microsecond=d.microsecond // 1000 * 1000, tzinfo=UTC)
    ),
)
events = st.builds(Event, names, opt, opt, opt, stamps)


@given(st.lists(st.lists(events, min_size=1, max_size=4), max_size=4))
def test_csv_round_trip(traces):
    log = EventLog(tuple(Trace(f"c{k}", tuple(evs)) for k, evs in enumerate(traces)))
    buf = io.StringIO()
    write_csv(log, buf)
    back = parse_csv(io.BytesIO(buf.getvalue().encode("utf-8")))
    assert back == log


def repair_log():
    return EventLog(
        (
            Trace("c1", (Event("A", "Start", "Jane"), Event("B", "Complete", "Joe"))),
            Trace("c2", (Event("C", "Start", "Jane"),)),
        )
    )


def test_encode_full_schema_single_event():
    log = EventLog((Trace("c", (Event("A", "Start", "Jane"),)),))
    inputs, _ = encode(log, TokenSchema(use_lifecycle=True, resource_mode="predictor_and_predictand"))
    assert inputs == [["A---Start---Jane", "[EOC]"]]


def test_encode_predictor_only_drops_resource_from_targets():
    log = EventLog((Trace("c", (Event("A", "Start", "Jane"),)),))
    inputs, preds = encode_aligned(log, TokenSchema(use_lifecycle=True, resource_mode="predictor_only"))
    assert inputs[0][0] == "A---Start---Jane"
    assert preds[0][0] == "A---Start"


def test_encode_shifted_targets_across_traces():
    log = EventLog.from_sequences([["A", "B"], ["C"]])
    inputs, targets = encode(log, TokenSchema())
    assert inputs == [["A", "B", "[EOC]"], ["C", "[EOC]"]]
    assert targets[0] == ["B", "[EOC]", "C"]
    assert targets[1] == ["[EOC]"]


@given(st.lists(st.lists(st.sampled_from("ABCD"), min_size=1, max_size=6), min_size=1, max_size=6))
def test_encode_counts_and_shift_property(seqs):
    log = EventLog.from_sequences(seqs)
    inputs, targets = encode(log, TokenSchema())
    flat_in = [t for tr in inputs for t in tr]
    flat_tg = [t for tr in targets for t in tr]
    assert len(flat_in) == log.n_events + len(log)
    assert len(flat_tg) == len(flat_in) - 1
    assert all(flat_tg[p] == flat_in[p + 1] for p in range(len(flat_tg)))


def test_encode_missing_lifecycle_and_resource():
    log = EventLog.from_sequences([["A"]])
    assert encode(log, TokenSchema(use_lifecycle=True))[0] == [["A---NONE", "[EOC]"]]
    with pytest.raises(EncodingError):
        encode(log, TokenSchema(resource_mode="predictor_and_predictand"))


def test_encode_separator_collision():
    log = EventLog((Trace("c", (Event("A---x", "Start"),)),))
    with pytest.raises(EncodingError, match="A---x"):
        encode(log, TokenSchema())


def test_encode_group_field():
    log = EventLog((Trace("c", (Event("A", "complete", "Jane", "G1"),)),))
    inputs, _ = encode(log, TokenSchema(resource_mode="predictor_and_predictand", resource_field="group"))
    assert inputs[0][0] == "A---G1"


def _timed(*items):
    t0 = datetime(2020, 1, 1, tzinfo=UTC)
    return Trace("c", tuple(Event(a, lc, timestamp=t0 + timedelta(seconds=s)) for a, lc, s in items))


def test_encode_durations():
    log = EventLog((_timed(("A", "Start", 0), ("A", "Complete", 180)),))
    assert encode_durations(log) == [["A", "A", "A", "[EOC]"]]
    log = EventLog((_timed(("A", "Start", 0), ("A", "Complete", 30)),))
    assert encode_durations(log) == [["A", "[EOC]"]]
    # idle time between activities emits nothing; 61 s rounds up to 2 quanta
    log = EventLog((_timed(("A", "Start", 0), ("A", "Complete", 61), ("B", "Start", 600), ("B", "Complete", 600)),))
    assert encode_durations(log) == [["A", "A", "B", "[EOC]"]]
    schema = TokenSchema(duration_quantized=True, quantum=timedelta(seconds=30))
    assert encode_aligned(log, schema)[0] == [["A", "A", "A", "B", "[EOC]"]]


def test_encode_durations_errors():
    overlap = EventLog((_timed(("A", "Start", 0), ("B", "Start", 30), ("A", "Complete", 60), ("B", "Complete", 90)),))
    with pytest.raises(EncodingError, match="overlap"):
        encode_durations(overlap)
    with pytest.raises(EncodingError, match="without complete"):
        encode_durations(EventLog((_timed(("A", "Start", 0)),)))


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=5))
def test_duration_token_count(durations):
    items, t = [], 0
    for k, d in enumerate(durations):
        items += [(f"X{k}", "Start", t), (f"X{k}", "Complete", t + d)]
        t += d + 5
    toks = encode_durations(EventLog((_timed(*items),)))[0]
    for k, d in enumerate(durations):
        assert toks.count(f"X{k}") == max(1, -(-d // 60))
