"""Center-level data model and delimited-file ingestion.

A center file is UTF-8 CSV with a header. The fixed columns are::

    code,state,county,township,channel,consular,hamlet,signatures,
    rep_apr,rep_jul,in20,sel192,aud26,coldaud

followed by one ``<EVENT>_fav,<EVENT>_unf,<EVENT>_null`` block per electoral
event. An optional ``address`` column may be present; when it is, a blank
``hamlet`` cell is filled by searching the address for ``CASERIO``.

A blank event block means the center has no tally for that event. Zeros are
data and are kept as zeros.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .errors import DataValidationError, UndefinedStatistic

logger = logging.getLogger(__name__)

EVENTS = ("E1998", "E2000", "RR2004", "EXITPOLL2004", "GOV2004")
RR = "RR2004"

BASE_COLUMNS = (
    "code", "state", "county", "township", "channel", "consular", "hamlet",
    "signatures", "rep_apr", "rep_jul", "in20", "sel192", "aud26", "coldaud",
)
OPTIONAL_COLUMNS = ("address",)
TALLY_SUFFIXES = ("fav", "unf", "null")

COMPUTERIZED = "C"
MANUAL = "M"
CHANNELS = (COMPUTERIZED, MANUAL)

HAMLET_MARKER = "CASERIO"
_INT_RE = re.compile(r"^[0-9]+$")


@dataclass(frozen=True, order=True)
class GeoPath:
    state: str
    county: str
    township: str

    def __post_init__(self):
        if not (self.state and self.county and self.township):
            raise DataValidationError("state, county and township must be non-empty")

    def at(self, level: str) -> tuple[str, ...]:
        """Key of the unit containing this path at ``level``."""
        if level == "state":
            return (self.state,)
        if level == "county":
            return (self.state, self.county)
        if level == "township":
            return (self.state, self.county, self.township)
        raise ValueError(f"unknown geographic level {level!r}")


@dataclass(frozen=True)
class EventTally:
    event_id: str
    favorable: int
    unfavorable: int
    null_votes: int = 0

    @property
    def total(self) -> int:
        return self.favorable + self.unfavorable + self.null_votes

    @property
    def pct_favorable(self) -> float:
        total = self.total
        if total == 0:
            raise UndefinedStatistic(f"{self.event_id}: zero total votes")
        return 100.0 * self.favorable / total


@dataclass(frozen=True)
class CenterRecord:
    code: str
    geo: GeoPath
    channel: str
    signatures: int
    tallies: Mapping[str, EventTally]
    consular: bool = False
    hamlet: bool = False
    rep_april2004: int = 0
    rep_july2004: int = 0
    in_20_counties: bool = False
    selected_192: bool = False
    audited_26: bool = False
    cold_audited: bool = False
    address: str | None = None

    @property
    def computerized(self) -> bool:
        return self.channel == COMPUTERIZED

    def tally(self, event_id: str = RR) -> EventTally | None:
        return self.tallies.get(event_id)

    def with_tally(self, tally: EventTally) -> CenterRecord:
        tallies = dict(self.tallies)
        tallies[tally.event_id] = tally
        return replace(self, tallies=tallies)


@dataclass(frozen=True)
class Dataset:
    """Centers sorted by code, plus a free-text provenance note.

    ``origin`` points at the dataset this one was stratified from. Predicates
    that depend on the whole population (mixed townships) are evaluated
    against the origin, so repeated stratification composes.
    """

    centers: tuple[CenterRecord, ...]
    provenance: str = field(default="", compare=False)
    origin: Dataset | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        centers = tuple(sorted(self.centers, key=lambda c: c.code))
        seen = Counter(c.code for c in centers)
        dupes = sorted(code for code, n in seen.items() if n > 1)
        if dupes:
            raise DataValidationError(f"duplicate center code {dupes[0]!r}", code=dupes[0])
        if any(not c.code for c in centers):
            raise DataValidationError("empty center code")
        object.__setattr__(self, "centers", centers)

    def __len__(self):
        return len(self.centers)

    def __iter__(self):
        return iter(self.centers)

    @property
    def root(self) -> Dataset:
        return self.origin.root if self.origin is not None else self

    def codes(self) -> list[str]:
        return [c.code for c in self.centers]

    def by_code(self) -> dict[str, CenterRecord]:
        return {c.code: c for c in self.centers}

    def events(self) -> list[str]:
        present = {e for c in self.centers for e in c.tallies}
        return [e for e in EVENTS if e in present]

    def subset(self, centers: Iterable[CenterRecord]) -> Dataset:
        return Dataset(tuple(centers), provenance=self.provenance, origin=self.root)


# -- parsing -----------------------------------------------------------------

def _fold(text: str) -> str:
    """Upper-case with accents stripped, so 'Caserío' matches the marker."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch)).upper()


def _parse_count(value: str, column: str, row: int) -> int:
    value = value.strip()
    if not _INT_RE.match(value):
        if value.startswith("-") and _INT_RE.match(value[1:]):
            raise DataValidationError(f"negative count {value} in column {column!r}", row=row)
        raise DataValidationError(f"malformed count {value!r} in column {column!r}", row=row)
    return int(value)


def _parse_flag(value: str, column: str, row: int) -> bool:
    value = value.strip()
    if value not in ("0", "1"):
        raise DataValidationError(f"flag {column!r} must be 0 or 1, got {value!r}", row=row)
    return value == "1"


def _check_header(header: Sequence[str]) -> list[str]:
    """Validate the header and return the event ids it carries, in file order."""
    dup = [name for name, n in Counter(header).items() if n > 1]
    if dup:
        raise DataValidationError(f"duplicate column {dup[0]!r} in header", row=1)
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise DataValidationError(f"missing column(s) {', '.join(missing)}", row=1)
    events: list[str] = []
    for name in header:
        if name in BASE_COLUMNS or name in OPTIONAL_COLUMNS:
            continue
        event, _, suffix = name.rpartition("_")
        if event not in EVENTS or suffix not in TALLY_SUFFIXES:
            raise DataValidationError(f"unknown column {name!r}", row=1)
        if event not in events:
            events.append(event)
    for event in events:
        for suffix in TALLY_SUFFIXES:
            if f"{event}_{suffix}" not in header:
                raise DataValidationError(f"incomplete event block: missing {event}_{suffix}", row=1)
    return events


def _parse_row(raw: Mapping[str, str], events: Sequence[str], row: int,
               has_address: bool) -> CenterRecord:
    code = raw["code"].strip()
    if not code:
        raise DataValidationError("empty center code", row=row)
    geo_parts = [raw[k].strip() for k in ("state", "county", "township")]
    if not all(geo_parts):
        raise DataValidationError("state, county and township must be non-empty", row=row, code=code)
    channel = raw["channel"].strip()
    if channel not in CHANNELS:
        raise DataValidationError(f"channel must be C or M, got {channel!r}", row=row, code=code)

    address = raw.get("address") if has_address else None
    hamlet_cell = raw["hamlet"].strip()
    if hamlet_cell == "" and address is not None:
        hamlet = HAMLET_MARKER in _fold(address)
    else:
        hamlet = _parse_flag(hamlet_cell, "hamlet", row)

    tallies = {}
    for event in events:
        cells = [raw[f"{event}_{s}"].strip() for s in TALLY_SUFFIXES]
        if all(c == "" for c in cells):
            continue
        if any(c == "" for c in cells):
            raise DataValidationError(f"partially blank {event} block", row=row, code=code)
        fav, unf, nul = (_parse_count(c, f"{event}_{s}", row) for c, s in zip(cells, TALLY_SUFFIXES))
        tallies[event] = EventTally(event, fav, unf, nul)

    center = CenterRecord(
        code=code,
        geo=GeoPath(*geo_parts),
        channel=channel,
        signatures=_parse_count(raw["signatures"], "signatures", row),
        tallies=tallies,
        consular=_parse_flag(raw["consular"], "consular", row),
        hamlet=hamlet,
        rep_april2004=_parse_count(raw["rep_apr"], "rep_apr", row),
        rep_july2004=_parse_count(raw["rep_jul"], "rep_jul", row),
        in_20_counties=_parse_flag(raw["in20"], "in20", row),
        selected_192=_parse_flag(raw["sel192"], "sel192", row),
        audited_26=_parse_flag(raw["aud26"], "aud26", row),
        cold_audited=_parse_flag(raw["coldaud"], "coldaud", row),
        address=address,
    )
    check_center(center, row=row)
    return center


def check_center(center: CenterRecord, row: int | None = None) -> None:
    """Raise DataValidationError if the center violates a record invariant."""
    if center.audited_26 and not center.selected_192:
        raise DataValidationError("aud26 set without sel192", row=row, code=center.code)
    if center.selected_192 and not (center.in_20_counties and center.computerized):
        raise DataValidationError("sel192 requires in20 and a computerized center",
                                  row=row, code=center.code)
    rr = center.tally(RR)
    if rr is not None and center.computerized and rr.null_votes != 0:
        raise DataValidationError("computerized RR2004 tally has null votes", row=row, code=center.code)


def read_centers(fh: IO[str], schema: Iterable[str] | None = None,
                 required: Iterable[str] = (RR,), source: str = "<stream>") -> Dataset:
    """Parse an open text stream in the center schema.

    ``schema``, when given, is the exact set of event ids the header must
    carry. ``required`` events must have a tally on every row.
    """
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataValidationError("empty file: header row required", row=1) from None
    events = _check_header(header)
    if schema is not None and set(schema) != set(events):
        raise DataValidationError(
            f"header events {sorted(events)} do not match expected {sorted(set(schema))}", row=1)
    required = tuple(required)
    for event in required:
        if event not in events:
            raise DataValidationError(f"required event {event} has no columns", row=1)
    has_address = "address" in header

    centers = []
    first_row = {}
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise DataValidationError(f"expected {len(header)} fields, found {len(cells)}", row=lineno)
        center = _parse_row(dict(zip(header, cells)), events, lineno, has_address)
        for event in required:
            if event not in center.tallies:
                raise DataValidationError(f"missing required {event} tally", row=lineno, code=center.code)
        if center.code in first_row:
            raise DataValidationError(
                f"duplicate center code {center.code!r} (first seen on row {first_row[center.code]})",
                row=lineno, code=center.code)
        first_row[center.code] = lineno
        centers.append(center)
    return Dataset(tuple(centers), provenance=source)


def parse_centers(path: str | Path, schema: Iterable[str] | None = None,
                  required: Iterable[str] = (RR,)) -> Dataset:
    path = Path(path)
    data = path.read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    text = data.decode("utf-8-sig")
    return read_centers(io.StringIO(text, newline=""), schema=schema, required=required,
                        source=f"{path} sha256:{digest}")


def _flag(value: bool) -> str:
    return "1" if value else "0"


def header_for(ds: Dataset) -> list[str]:
    header = list(BASE_COLUMNS)
    if any(c.address is not None for c in ds):
        header.append("address")
    for event in ds.events():
        header.extend(f"{event}_{s}" for s in TALLY_SUFFIXES)
    return header


def write_centers(ds: Dataset, fh: IO[str]) -> None:
    """Emit ``ds`` in canonical form: fixed column order, sorted by code."""
    header = header_for(ds)
    events = ds.events()
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    with_address = "address" in header
    for c in ds:
        row = [
            c.code, c.geo.state, c.geo.county, c.geo.township, c.channel,
            _flag(c.consular), _flag(c.hamlet), c.signatures, c.rep_april2004,
            c.rep_july2004, _flag(c.in_20_counties), _flag(c.selected_192),
            _flag(c.audited_26), _flag(c.cold_audited),
        ]
        if with_address:
            row.append(c.address or "")
        for event in events:
            t = c.tallies.get(event)
            row.extend(["", "", ""] if t is None else [t.favorable, t.unfavorable, t.null_votes])
        writer.writerow(row)


def dumps_centers(ds: Dataset) -> str:
    buf = io.StringIO()
    write_centers(ds, buf)
    return buf.getvalue()


def save_centers(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps_centers(ds), encoding="utf-8", newline="")


# -- joins -------------------------------------------------------------------

@dataclass(frozen=True)
class JoinReport:
    event_id: str
    matched: int
    base_only: int
    other_only: int
    attached: int
    geo_mismatches: tuple[str, ...] = ()


def join_events(base: Dataset, other: Dataset, event_id: str,
                source_event: str | None = None) -> tuple[Dataset, JoinReport]:
    """Attach ``other``'s ``source_event`` tallies to ``base`` under ``event_id``.

    Centers are matched on code alone. Geography disagreements between the
    two files are logged and listed in the report, not rejected.
    """
    if event_id not in EVENTS:
        raise ValueError(f"unknown event {event_id!r}")
    source_event = source_event or event_id
    clash = [c.code for c in base if event_id in c.tallies]
    if clash:
        raise DataValidationError(f"{event_id} already populated in base (e.g. center {clash[0]!r})",
                                  code=clash[0])
    lookup = other.by_code()
    base_codes = set(base.codes())
    matched = attached = 0
    mismatches = []
    centers = []
    for c in base:
        o = lookup.get(c.code)
        if o is None:
            centers.append(c)
            continue
        matched += 1
        if o.geo != c.geo:
            mismatches.append(c.code)
        t = o.tally(source_event)
        if t is None:
            centers.append(c)
            continue
        attached += 1
        centers.append(c.with_tally(EventTally(event_id, t.favorable, t.unfavorable, t.null_votes)))
    if mismatches:
        logger.warning("%d matched centers differ in geography (first: %s)", len(mismatches), mismatches[0])
    report = JoinReport(
        event_id=event_id,
        matched=matched,
        base_only=len(base) - matched,
        other_only=len(set(lookup) - base_codes),
        attached=attached,
        geo_mismatches=tuple(mismatches),
    )
    joined = Dataset(tuple(centers), provenance=f"{base.provenance} + {event_id} from {other.provenance}")
    return joined, report


# -- signature matching ------------------------------------------------------

@dataclass(frozen=True)
class SignatureMatch:
    counts: dict[str, int]
    unmatched: tuple[str, ...]
    duplicates: tuple[str, ...]

    @property
    def matched(self) -> int:
        return sum(self.counts.values())


def read_person_file(path: str | Path) -> list[tuple[str, str]]:
    """Read a ``person_id,center_code`` file. ``center_code`` may be blank."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "person_id" not in reader.fieldnames:
            raise DataValidationError("person file needs a person_id column", row=1)
        unknown = set(reader.fieldnames) - {"person_id", "center_code"}
        if unknown:
            raise DataValidationError(f"unknown column {sorted(unknown)[0]!r}", row=1)
        out = []
        for lineno, rec in enumerate(reader, start=2):
            pid = (rec.get("person_id") or "").strip()
            if not pid:
                raise DataValidationError("empty person_id", row=lineno)
            out.append((pid, (rec.get("center_code") or "").strip()))
        return out


def match_signatures(signers, registry) -> SignatureMatch:
    """Count signatures per center by looking each signer up in the registry.

    ``signers`` is a path or an iterable of person ids (or ``(id, key)``
    pairs); ``registry`` is a path, a mapping person id -> center code, or an
    iterable of pairs. Repeated signers count once and are reported.
    """
    if isinstance(signers, (str, Path)):
        signers = read_person_file(signers)
    if isinstance(registry, (str, Path)):
        registry = read_person_file(registry)
    if isinstance(registry, Mapping):
        lookup = dict(registry)
    else:
        lookup = {}
        for pid, code in registry:
            if pid in lookup:
                raise DataValidationError(f"duplicate person_id {pid!r} in registry")
            lookup[pid] = code

    counts: dict[str, int] = defaultdict(int)
    seen = set()
    unmatched, duplicates = [], []
    for item in signers:
        pid = item if isinstance(item, str) else item[0]
        if pid in seen:
            duplicates.append(pid)
            continue
        seen.add(pid)
        code = lookup.get(pid)
        if code is None:
            unmatched.append(pid)
        else:
            counts[code] += 1
    return SignatureMatch(dict(sorted(counts.items())), tuple(unmatched), tuple(duplicates))


# -- stratification ----------------------------------------------------------

def mixed_townships(ds: Dataset) -> frozenset[GeoPath]:
    channels = defaultdict(set)
    for c in ds:
        channels[c.geo].add(c.channel)
    return frozenset(g for g, chans in channels.items() if len(chans) == len(CHANNELS))


_FLAG_ATTRS = {
    "consular": "consular",
    "hamlet": "hamlet",
    "in20": "in_20_counties",
    "sel192": "selected_192",
    "aud26": "audited_26",
    "coldaud": "cold_audited",
}


@dataclass(frozen=True)
class Filter:
    """Declarative center predicate; unset fields do not constrain.

    ``s_above`` is a strict lower bound and ``s_at_most`` an inclusive upper
    bound on s, so ``Filter(s_at_most=0.5)`` and ``Filter(s_above=0.5)``
    partition the centers with defined s. Centers with undefined s fail
    any s bound.
    """

    channel: str | None = None
    consular: bool | None = None
    hamlet: bool | None = None
    in20: bool | None = None
    sel192: bool | None = None
    aud26: bool | None = None
    coldaud: bool | None = None
    state: str | None = None
    county: str | None = None
    township: str | None = None
    mixed_township: bool | None = None
    s_above: float | None = None
    s_at_most: float | None = None

    def matches(self, c: CenterRecord, mixed: frozenset[GeoPath] = frozenset()) -> bool:
        if self.channel is not None and c.channel != self.channel:
            return False
        for name, attr in _FLAG_ATTRS.items():
            want = getattr(self, name)
            if want is not None and getattr(c, attr) != want:
                return False
        for level in ("state", "county", "township"):
            want = getattr(self, level)
            if want is not None and getattr(c.geo, level) != want:
                return False
        if self.mixed_township is not None and (c.geo in mixed) != self.mixed_township:
            return False
        if self.s_above is not None or self.s_at_most is not None:
            rr = c.tally(RR)
            if rr is None or rr.total == 0:
                return False
            s = c.signatures / rr.total
            if self.s_above is not None and not s > self.s_above:
                return False
            if self.s_at_most is not None and not s <= self.s_at_most:
                return False
        return True

    @property
    def needs_mixed(self) -> bool:
        return self.mixed_township is not None

    def __and__(self, other):
        return AllOf((self, other))


@dataclass(frozen=True)
class AllOf:
    parts: tuple

    def matches(self, c: CenterRecord, mixed: frozenset[GeoPath] = frozenset()) -> bool:
        return all(p.matches(c, mixed) for p in self.parts)

    @property
    def needs_mixed(self) -> bool:
        return any(p.needs_mixed for p in self.parts)

    def __and__(self, other):
        return AllOf((self, other))


def stratify(ds: Dataset, predicate: Filter | AllOf | None = None, **criteria) -> Dataset:
    """Subset of ``ds`` matching ``predicate`` (or keyword criteria), order kept.

    Mixed townships are determined on ``ds.root``, the unstratified
    population, so a township stays "mixed" after its manual centers have
    been filtered away.
    """
    if predicate is None:
        predicate = Filter(**criteria)
    elif criteria:
        predicate = predicate & Filter(**criteria)
    mixed = mixed_townships(ds.root) if predicate.needs_mixed else frozenset()
    return ds.subset(c for c in ds if predicate.matches(c, mixed))

