"""Streaming parser, validator and writer for the NDJSON event-record format.

File layout: UTF-8, LF line endings.  The first line is a header object
carrying ``format_version`` (plus optional ``source`` and ``class_names``);
every following line is one event:

    {"id": "...", "objects": [{"kind": "muon", "pt": 30.0, "eta": 0.5,
     "phi": 0.1, "mass": 0.10566, "btag": 0.2}], "met": {"pt": 40.0,
     "phi": 1.0}, "class": 2}

``mass``, ``btag`` and ``class`` are optional; unknown extra keys are
ignored with a counted warning.  Parsing is streaming: memory stays
bounded by the largest single event, not the file size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

from .kinematics import Event, ObjectKind, PhysicsObject

FORMAT_VERSION = "1"

_KIND_NAMES = {k.value: k for k in ObjectKind}


class IngestError(Exception):
    """Malformed input that stops strict parsing.

    Carries the byte offset of the offending line, its 1-based line
    number, and the 0-based event index (-1 for header problems).
    """

    def __init__(self, reason: str, *, byte_offset: int, line_number: int,
                 event_index: int):
        super().__init__(
            f"line {line_number} (byte {byte_offset}, event {event_index}): "
            f"{reason}")
        self.reason = reason
        self.byte_offset = byte_offset
        self.line_number = line_number
        self.event_index = event_index


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which field, which rule."""

    field: str
    rule: str

    def __str__(self):
        return f"{self.field}: {self.rule}"


@dataclass(frozen=True)
class EventFileHeader:
    format_version: str = FORMAT_VERSION
    source: str = ""
    class_names: tuple[str, ...] = ()


@dataclass
class IngestReport:
    """Machine-readable summary of a file scan."""

    parsed: int = 0
    rejected: int = 0
    unknown_fields: int = 0
    first_violations: list[dict] = field(default_factory=list)
    header: Optional[EventFileHeader] = None

    MAX_RECORDED = 10

    def record_rejection(self, line_number: int, byte_offset: int,
                         reason: str) -> None:
        self.rejected += 1
        if len(self.first_violations) < self.MAX_RECORDED:
            self.first_violations.append({
                "line": line_number,
                "byte_offset": byte_offset,
                "reason": reason,
            })

    def to_dict(self) -> dict:
        return {
            "parsed": self.parsed,
            "rejected": self.rejected,
            "unknown_fields": self.unknown_fields,
            "first_violations": self.first_violations,
        }


def _reject_constant(name: str):
    # json.loads maps bare NaN/Infinity tokens here; we refuse them
    raise ValueError(f"non-finite number {name!r}")


def _require_finite_number(value, field_name: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{field_name} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{field_name} must be finite")
    return value


def _object_from_dict(d: dict, where: str, counters: dict) -> PhysicsObject:
    if not isinstance(d, dict):
        raise ValueError(f"{where} must be an object")
    kind_name = d.get("kind")
    if kind_name not in _KIND_NAMES:
        raise ValueError(f"{where}.kind: unknown object kind {kind_name!r}")
    pt = _require_finite_number(d.get("pt"), f"{where}.pt")
    eta = _require_finite_number(d.get("eta", 0.0), f"{where}.eta")
    phi = _require_finite_number(d.get("phi"), f"{where}.phi")
    mass = _require_finite_number(d.get("mass", 0.0), f"{where}.mass")
    btag = d.get("btag")
    if btag is not None:
        btag = _require_finite_number(btag, f"{where}.btag")
    known = {"kind", "pt", "eta", "phi", "mass", "btag"}
    counters["unknown_fields"] += sum(1 for k in d if k not in known)
    return PhysicsObject(kind=_KIND_NAMES[kind_name], pt=pt, eta=eta, phi=phi,
                         mass=mass, btag=btag)


def event_from_dict(d: dict, counters: Optional[dict] = None) -> Event:
    """Build an Event from a parsed JSON record (no invariant checking)."""
    if counters is None:
        counters = {"unknown_fields": 0}
    if not isinstance(d, dict):
        raise ValueError("event record must be a JSON object")
    if "id" not in d:
        raise ValueError("missing 'id'")
    event_id = d["id"]
    if isinstance(event_id, int):
        event_id = str(event_id)
    if not isinstance(event_id, str) or not event_id:
        raise ValueError("'id' must be a non-empty string or integer")
    raw_objects = d.get("objects", [])
    if not isinstance(raw_objects, list):
        raise ValueError("'objects' must be an array")
    objects = [_object_from_dict(o, f"objects[{i}]", counters)
               for i, o in enumerate(raw_objects)]
    met = None
    if d.get("met") is not None:
        met_dict = dict(d["met"])
        met_dict.setdefault("kind", ObjectKind.MET.value)
        met = _object_from_dict(met_dict, "met", counters)
    truth_class = d.get("class")
    if truth_class is not None and not isinstance(truth_class, int):
        raise ValueError("'class' must be an integer")
    known = {"id", "objects", "met", "class"}
    counters["unknown_fields"] += sum(1 for k in d if k not in known)
    return Event(id=event_id, objects=objects, met=met, truth_class=truth_class)


def event_to_dict(event: Event) -> dict:
    objs = []
    for o in event.objects:
        entry = {"kind": o.kind.value, "pt": o.pt, "eta": o.eta, "phi": o.phi}
        if o.mass != 0.0:
            entry["mass"] = o.mass
        if o.btag is not None:
            entry["btag"] = o.btag
        objs.append(entry)
    record = {"id": event.id, "objects": objs}
    if event.met is not None:
        record["met"] = {"pt": event.met.pt, "phi": event.met.phi}
    if event.truth_class is not None:
        record["class"] = event.truth_class
    return record


def validate_event(event: Event) -> list[Violation]:
    """Check type invariants; violations are data, not errors."""
    violations = []
    all_objects = list(event.objects)
    if event.met is not None:
        all_objects.append(event.met)
    met_count = 0
    for i, obj in enumerate(all_objects):
        name = "met" if (event.met is not None and i == len(all_objects) - 1) \
            else f"objects[{i}]"
        if obj.pt < 0:
            violations.append(Violation(f"{name}.pt", "pt >= 0"))
        if not -math.pi <= obj.phi <= math.pi:
            violations.append(Violation(f"{name}.phi", "phi in [-pi, pi]"))
        if obj.mass < 0:
            violations.append(Violation(f"{name}.mass", "mass >= 0"))
        if obj.btag is not None:
            if not obj.kind.is_jet:
                violations.append(
                    Violation(f"{name}.btag", "btag only on jet kinds"))
            elif not 0.0 <= obj.btag <= 1.0:
                violations.append(Violation(f"{name}.btag", "btag in [0, 1]"))
        if obj.kind is ObjectKind.MET:
            met_count += 1
    if met_count > 1:
        violations.append(Violation("met", "duplicate MET"))
    if event.met is not None and event.met.kind is not ObjectKind.MET:
        violations.append(Violation("met.kind", "met entry must have kind met"))
    if event.truth_class is not None and event.truth_class < 0:
        violations.append(Violation("class", "class >= 0"))
    return violations


def parse_header_line(line: bytes) -> EventFileHeader:
    d = json.loads(line.decode("utf-8"), parse_constant=_reject_constant)
    if not isinstance(d, dict) or "format_version" not in d:
        raise ValueError("first line must be a header with 'format_version'")
    version = str(d["format_version"])
    if version != FORMAT_VERSION:
        raise ValueError(f"unrecognized format_version {version!r}")
    class_names = d.get("class_names", [])
    if not isinstance(class_names, list):
        raise ValueError("'class_names' must be an array")
    return EventFileHeader(format_version=version,
                           source=str(d.get("source", "")),
                           class_names=tuple(str(c) for c in class_names))


class EventReader:
    """Single-consumer streaming reader over a binary NDJSON stream."""

    def __init__(self, stream: IO[bytes]):
        self._stream = stream
        self.header: Optional[EventFileHeader] = None
        self.unknown_fields = 0
        self._offset = 0
        self._line_offset = 0
        self._line_number = 0
        self._event_index = -1

    def _next_line(self) -> Optional[bytes]:
        line = self._stream.readline()
        if not line:
            return None
        self._line_offset = self._offset
        self._offset += len(line)
        self._line_number += 1
        return line

    def _error(self, reason: str) -> IngestError:
        return IngestError(reason, byte_offset=self._line_offset,
                           line_number=self._line_number,
                           event_index=self._event_index)

    def read_header(self) -> EventFileHeader:
        if self.header is not None:
            return self.header
        line = self._next_line()
        if line is None:
            raise IngestError("empty file, expected header line",
                              byte_offset=0, line_number=1, event_index=-1)
        try:
            self.header = parse_header_line(line)
        except ValueError as exc:
            self._event_index = -1
            raise self._error(str(exc)) from exc
        return self.header

    def read_next(self) -> Optional[Event]:
        """Next event, or None at end of stream.

        Raises IngestError on a bad line but leaves the reader usable, so
        lenient callers can keep going.
        """
        self.read_header()
        while True:
            line = self._next_line()
            if line is None:
                return None
            if not line.strip():
                continue
            self._event_index += 1
            return self._parse_line(line)

    def __iter__(self) -> Iterator[Event]:
        while True:
            event = self.read_next()
            if event is None:
                return
            yield event

    def _parse_line(self, line: bytes) -> Event:
        counters = {"unknown_fields": 0}
        try:
            record = json.loads(line.decode("utf-8"),
                                parse_constant=_reject_constant)
            event = event_from_dict(record, counters)
        except (ValueError, UnicodeDecodeError) as exc:
            raise self._error(f"malformed record: {exc}") from exc
        self.unknown_fields += counters["unknown_fields"]
        violations = validate_event(event)
        if violations:
            raise self._error(
                "invalid event: " + "; ".join(str(v) for v in violations))
        return event


def parse_events(stream: IO[bytes]) -> Iterator[Event]:
    """Lazily parse events from a binary NDJSON stream (strict)."""
    return iter(EventReader(stream))


def scan_stream(stream: IO[bytes], *, check_duplicate_ids: bool = True
                ) -> IngestReport:
    """Lenient full-file scan: count parsed/rejected, keep first violations.

    Duplicate-id checking holds the id set in memory; disable it to keep
    the scan strictly streaming on very large files.
    """
    report = IngestReport()
    reader = EventReader(stream)
    try:
        report.header = reader.read_header()
    except IngestError as exc:
        report.record_rejection(exc.line_number, exc.byte_offset, exc.reason)
        return report
    seen_ids: set[str] = set()
    while True:
        try:
            event = reader.read_next()
        except IngestError as exc:
            report.record_rejection(exc.line_number, exc.byte_offset,
                                    exc.reason)
            continue
        if event is None:
            break
        if check_duplicate_ids:
            if event.id in seen_ids:
                report.record_rejection(reader._line_number,
                                        reader._line_offset,
                                        f"duplicate id {event.id!r}")
                continue
            seen_ids.add(event.id)
        report.parsed += 1
    report.unknown_fields = reader.unknown_fields
    return report


def serialize_events(events: Iterable[Event], stream: IO[bytes],
                     header: Optional[EventFileHeader] = None) -> int:
    """Write header + events as NDJSON; returns the number of events written."""
    if header is None:
        header = EventFileHeader()
    head = {"format_version": header.format_version}
    if header.source:
        head["source"] = header.source
    if header.class_names:
        head["class_names"] = list(header.class_names)
    stream.write(json.dumps(head, separators=(",", ":")).encode() + b"\n")
    count = 0
    for event in events:
        line = json.dumps(event_to_dict(event), separators=(",", ":"))
        stream.write(line.encode() + b"\n")
        count += 1
    return count
