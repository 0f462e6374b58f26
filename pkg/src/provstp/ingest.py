"""JSONL audit-event parsing and event-time windowing."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional

from .model import ALL_OPS, FILE, IP, KINDS, PROCESS, FileAttrs, IpAttrs, ProcessAttrs

DEFAULT_WINDOW_SECONDS = 10.0


class ParseError(ValueError):
    """Malformed line: bad JSON, missing field, or out-of-range value."""

    def __init__(self, message: str, lineno: int = 0):
        super().__init__(message)
        self.lineno = lineno


class RejectedEvent(ValueError):
    """Structurally valid event whose op is not a recognized operation."""


@dataclass(slots=True)
class RawEvent:
    ts: int  # epoch milliseconds
    host: str
    op: str
    src_kind: str
    src: object
    dst_kind: str
    dst: object


@dataclass(slots=True)
class WindowBatch:
    window_index: int
    events: List[RawEvent]


def _parse_entity(obj: dict, host: str, lineno: int):
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ParseError("line %d: unknown entity kind %r" % (lineno, kind), lineno)
    try:
        if kind == PROCESS:
            pid = int(obj["pid"])
            tid = obj.get("tid")
            attrs = ProcessAttrs(
                pid=pid,
                tid=pid if tid is None else int(tid),
                uid=int(obj["uid"]),
                name=obj["name"],
                cmdline=obj["cmdline"],
                host=host,
            )
        elif kind == FILE:
            path = obj["path"]
            if not path:
                raise ParseError("line %d: empty file path" % lineno, lineno)
            attrs = FileAttrs(path=path, host=host)
        else:
            attrs = IpAttrs(
                src_ip=obj["src_ip"],
                src_port=int(obj["src_port"]),
                dst_ip=obj["dst_ip"],
                dst_port=int(obj["dst_port"]),
            )
            for port in (attrs.src_port, attrs.dst_port):
                if not 0 <= port <= 65535:
                    raise ParseError("line %d: port %d out of range" % (lineno, port), lineno)
    except KeyError as exc:
        raise ParseError("line %d: missing field %s" % (lineno, exc), lineno) from None
    return kind, attrs


def parse_event(line: str, lineno: int = 0) -> RawEvent:
    """Parse one JSONL line into a RawEvent.

    Raises ParseError for malformed input and RejectedEvent for an op
    outside the recognized set.  Extra fields are ignored.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError("line %d: invalid JSON: %s" % (lineno, exc), lineno) from None
    try:
        op = obj["op"]
        ts = int(obj["ts"])
        host = obj["host"]
        src_obj = obj["src"]
        dst_obj = obj["dst"]
    except (KeyError, TypeError) as exc:
        raise ParseError("line %d: missing field %s" % (lineno, exc), lineno) from None
    if op not in ALL_OPS:
        raise RejectedEvent("line %d: unrecognized op %r" % (lineno, op))
    if ts < 0:
        raise ParseError("line %d: negative ts" % lineno, lineno)
    src_kind, src = _parse_entity(src_obj, host, lineno)
    dst_kind, dst = _parse_entity(dst_obj, host, lineno)
    return RawEvent(ts=ts, host=host, op=op, src_kind=src_kind, src=src, dst_kind=dst_kind, dst=dst)


def read_events(path: str, counters: Optional[Dict[str, int]] = None) -> Iterator[RawEvent]:
    """Yield RawEvents from a JSONL file ('-' for stdin).

    Lines with an unrecognized op are skipped and counted under
    'rejected_ops'; malformed lines raise ParseError.
    """
    fh = sys.stdin if path == "-" else open(path, "r", encoding="utf-8")
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield parse_event(line, lineno)
            except RejectedEvent:
                if counters is not None:
                    counters["rejected_ops"] = counters.get("rejected_ops", 0) + 1
    finally:
        if fh is not sys.stdin:
            fh.close()


def window_stream(
    events: Iterable[RawEvent],
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
    counters: Optional[Dict[str, int]] = None,
) -> Iterator[WindowBatch]:
    """Batch a ts-ordered event stream into half-open [k*delta, (k+1)*delta) windows.

    Window indexes are relative to the first event's timestamp.  Events
    up to one window late still land in their own batch, so a window is
    sealed only once events two windows ahead show up; events later than
    that are dropped and counted under 'dropped_late'.  Empty windows
    are skipped.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    delta_ms = int(round(window_seconds * 1000.0))
    start_ts: Optional[int] = None
    cur_index = 0
    prev_buf: List[RawEvent] = []  # window cur_index - 1, still open for late events
    cur_buf: List[RawEvent] = []

    def seal(index: int, buf: List[RawEvent]) -> WindowBatch:
        buf.sort(key=lambda e: e.ts)
        return WindowBatch(index, buf)

    for ev in events:
        if start_ts is None:
            start_ts = ev.ts
        idx = (ev.ts - start_ts) // delta_ms
        if idx == cur_index:
            cur_buf.append(ev)
        elif idx == cur_index - 1:
            prev_buf.append(ev)
        elif idx < cur_index - 1:
            if counters is not None:
                counters["dropped_late"] = counters.get("dropped_late", 0) + 1
        elif idx == cur_index + 1:
            if prev_buf:
                yield seal(cur_index - 1, prev_buf)
            prev_buf, cur_buf = cur_buf, [ev]
            cur_index = idx
        else:  # jumped two or more windows ahead
            if prev_buf:
                yield seal(cur_index - 1, prev_buf)
            if cur_buf:
                yield seal(cur_index, cur_buf)
            prev_buf, cur_buf = [], [ev]
            cur_index = idx
    if prev_buf:
        yield seal(cur_index - 1, prev_buf)
    if cur_buf:
        yield seal(cur_index, cur_buf)
