"""Trace records, CSV ingest, vocabularies, feature encoding and fixtures.

The canonical CSV layout is::

    timestamp,src_ip,dst_ip,src_port,dst_port,protocol,
    bytes_in,bytes_out,packets_in,packets_out,duration[,tcp_flags]

``tcp_flags`` is optional and only written when the dataset carries it.
Lines starting with ``#`` are comments (used for provenance headers).
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    EmptyDataset,
    IndexOutOfRange,
    InvalidSpec,
    MissingColumn,
    TooManyMalformedRows,
    UnparseableTimestamp,
)

EPS_TAU = 1e-6
RARE = "RARE"

CANONICAL_COLUMNS = (
    "timestamp", "src_ip", "dst_ip", "src_port", "dst_port", "protocol",
    "bytes_in", "bytes_out", "packets_in", "packets_out", "duration",
)
OPTIONAL_COLUMNS = ("tcp_flags",)
CATEGORICAL_FIELDS = ("src_ip", "dst_ip", "protocol", "src_port", "dst_port")
PORT_FIELDS = ("src_port", "dst_port")
INT_COLUMNS = ("src_port", "dst_port", "bytes_in", "bytes_out", "packets_in", "packets_out")

# 1970-01-01 was a Thursday; weekday() below follows Python's Monday=0.
_EPOCH_WEEKDAY = 3


def day_and_seconds(t, utc_offset_hours=0.0):
    """Split epoch timestamp(s) into (day number, seconds into the day).

    Uses an exact remainder so timestamps a whole number of days apart give
    bit-identical second-of-day values.
    """
    t = np.asarray(t, dtype=float)
    if utc_offset_hours:
        t = t + utc_offset_hours * 3600.0
    sec = np.mod(t, 86400.0)
    day = np.round((t - sec) / 86400.0).astype(np.int64)
    return day, sec


def hour_of_day(t, utc_offset_hours=0.0):
    """Integer hour (0..23) of epoch timestamp(s)."""
    _, sec = day_and_seconds(t, utc_offset_hours)
    return np.minimum(np.floor(sec / 3600.0).astype(int), 23)


def weekday(t, utc_offset_hours=0.0):
    """Weekday (Monday=0) of epoch timestamp(s)."""
    day, _ = day_and_seconds(t, utc_offset_hours)
    return ((day + _EPOCH_WEEKDAY) % 7).astype(int)


@dataclass(frozen=True, slots=True)
class TraceRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    bytes_in: int = 0
    bytes_out: int = 0
    packets_in: int = 0
    packets_out: int = 0
    duration: float = 0.0
    kind: str = "flow"
    tcp_flags: str | None = None

    @property
    def size(self) -> int:
        return self.bytes_in + self.bytes_out

    def is_valid(self) -> bool:
        counts = (self.bytes_in, self.bytes_out, self.packets_in, self.packets_out)
        if not (self.timestamp >= 0 and self.duration >= 0 and min(counts) >= 0):
            return False
        if not (0 <= self.src_port <= 65535 and 0 <= self.dst_port <= 65535):
            return False
        if self.kind == "packet":
            return self.duration == 0 and (self.bytes_in == 0) != (self.bytes_out == 0)
        return True


@dataclass(frozen=True)
class TraceDataset:
    """Time-ordered collection of records of a single kind."""

    records: tuple
    kind: str = "flow"
    provenance: str = ""
    malformed_rows: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.kind not in ("flow", "packet"):
            raise ValueError(f"kind must be 'flow' or 'packet', got {self.kind!r}")
        prev = -math.inf
        for r in self.records:
            if r.timestamp < prev:
                raise ValueError("records must be sorted by timestamp")
            if r.kind != self.kind:
                raise ValueError("all records must share the dataset kind")
            prev = r.timestamp

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def has_tcp_flags(self) -> bool:
        return any(r.tcp_flags is not None for r in self.records)

    def column(self, name: str) -> np.ndarray:
        """Column as a numpy array (object dtype for string fields)."""
        if name == "size":
            return np.array([r.bytes_in + r.bytes_out for r in self.records], dtype=float)
        values = [getattr(r, name) for r in self.records]
        if name in ("timestamp", "duration"):
            return np.array(values, dtype=float)
        if name in INT_COLUMNS:
            return np.array(values, dtype=np.int64)
        return np.array(values, dtype=object)

    def inter_arrivals(self, eps=EPS_TAU) -> np.ndarray:
        """tau_i for i >= 1 (the first record has no predecessor)."""
        t = self.column("timestamp")
        return np.maximum(np.diff(t), eps)

    def slice(self, start, stop=None) -> "TraceDataset":
        return TraceDataset(self.records[start:stop], self.kind, self.provenance)


# -- CSV ------------------------------------------------------------------

def load_schema(path) -> dict:
    """Read a column mapping from a key-value config file.

    The ``[columns]`` section maps canonical names to source column names;
    top-level keys without a section are accepted too.
    """
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[columns]\n" + text
    parser.read_string(text)
    section = parser["columns"] if parser.has_section("columns") else parser[parser.sections()[0]]
    return {k: v.strip() for k, v in section.items()}


def _parse_timestamp(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_int(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"not an integer: {raw!r}")
    return int(value)


def _iter_data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def parse_trace(path, schema: Mapping[str, str] | None = None, kind: str = "flow",
                tolerance: float = 0.01, validate: bool = True) -> TraceDataset:
    """Parse a header CSV into a sorted :class:`TraceDataset`.

    Rows that fail to convert are dropped and counted in ``malformed_rows``;
    if more than ``tolerance`` of the rows are malformed the whole parse
    fails. With ``validate=False`` invariant violations (e.g. negative
    durations) are kept so compliance checks can flag them.
    """
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_iter_data_lines(fh))
        header = reader.fieldnames or []
        source = {c: schema.get(c, c) for c in CANONICAL_COLUMNS + OPTIONAL_COLUMNS}
        required = list(CANONICAL_COLUMNS)
        if kind == "packet":
            required = [c for c in required if c not in ("duration", "packets_in", "packets_out")]
        for col in required:
            if source[col] not in header:
                raise MissingColumn(f"column {col!r} (source {source[col]!r}) not found in {path}")
        has_flags = source["tcp_flags"] in header
        records, n_rows, bad, bad_ts = [], 0, 0, 0
        for row in reader:
            n_rows += 1
            try:
                ts = _parse_timestamp(row[source["timestamp"]])
            except (ValueError, TypeError, AttributeError):
                bad += 1
                bad_ts += 1
                continue
            try:
                rec = _row_to_record(row, source, ts, kind, has_flags, validate)
            except (ValueError, TypeError, AttributeError):
                bad += 1
                continue
            if validate and not rec.is_valid():
                bad += 1
                continue
            records.append(rec)
    if n_rows == 0:
        raise EmptyDataset(f"{path} has no data rows")
    if bad / n_rows > tolerance:
        cls = UnparseableTimestamp if bad_ts * 2 > bad else TooManyMalformedRows
        raise cls(f"{bad} of {n_rows} rows malformed in {path} ({bad_ts} bad timestamps); "
                  f"tolerance is {tolerance:.2%}")
    if not records:
        raise EmptyDataset(f"{path} has no valid rows")
    records.sort(key=lambda r: r.timestamp)
    return TraceDataset(tuple(records), kind, provenance=str(path), malformed_rows=bad)


def _row_to_record(row, source, ts, kind, has_flags, validate):
    def get(col, default=None):
        src = source[col]
        if src not in row or row[src] is None or row[src].strip() == "":
            if default is None:
                raise ValueError(f"missing value for {col}")
            return default
        return row[src].strip()

    ints = {c: _parse_int(get(c, "0" if kind == "packet" and c.startswith("packets") else None))
            for c in INT_COLUMNS}
    raw_dur = get("duration", "0" if kind == "packet" else None)
    try:
        duration = float(raw_dur)
    except ValueError:
        if validate:
            raise
        duration = float("nan")
    flags = None
    if has_flags:
        raw = row.get(source["tcp_flags"])
        flags = "" if raw is None else raw.strip()
    return TraceRecord(ts, get("src_ip"), get("dst_ip"), ints["src_port"], ints["dst_port"],
                       get("protocol"), ints["bytes_in"], ints["bytes_out"], ints["packets_in"],
                       ints["packets_out"], duration, kind, flags)


def format_trace(ds: TraceDataset, comments: Sequence[str] = ()) -> str:
    """Render the canonical CSV text (LF line endings, fixed float format)."""
    out = io.StringIO()
    for line in comments:
        out.write("# " + line.replace("\n", " ") + "\n")
    columns = list(CANONICAL_COLUMNS)
    with_flags = ds.has_tcp_flags
    if with_flags:
        columns.append("tcp_flags")
    out.write(",".join(columns) + "\n")
    for r in ds.records:
        row = [f"{r.timestamp:.6f}", r.src_ip, r.dst_ip, str(r.src_port), str(r.dst_port),
               r.protocol, str(r.bytes_in), str(r.bytes_out), str(r.packets_in),
               str(r.packets_out), f"{r.duration:.6f}"]
        if with_flags:
            row.append(r.tcp_flags or "")
        out.write(",".join(row) + "\n")
    return out.getvalue()


def atomic_write_text(path, text: str):
    """Write via a temp file and rename so failures leave no partial output."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_trace(ds: TraceDataset, path, comments: Sequence[str] = ()):
    atomic_write_text(path, format_trace(ds, comments))


# -- vocabularies -----------------------------------------------------------

class FieldVocab:
    """Dense token <-> index map with a trailing RARE bucket.

    ``rare_counts`` keeps the training counts of tokens folded into RARE;
    the generator can draw from it to turn a RARE port back into a number.
    """

    def __init__(self, tokens: Sequence, rare_counts: Mapping | None = None):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.rare_counts = dict(rare_counts or {})

    @property
    def rare_index(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens) + 1

    def __eq__(self, other):
        return (isinstance(other, FieldVocab) and self.tokens == other.tokens
                and self.rare_counts == other.rare_counts)

    def encode(self, token) -> int:
        return self.index.get(token, self.rare_index)

    def decode(self, idx: int):
        if not 0 <= idx < len(self):
            raise IndexOutOfRange(f"index {idx} outside vocabulary of size {len(self)}")
        return RARE if idx == self.rare_index else self.tokens[idx]

    def to_dict(self):
        return {"tokens": self.tokens,
                "rare_counts": [[k, v] for k, v in sorted(self.rare_counts.items(), key=lambda kv: str(kv[0]))]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], {k: v for k, v in d["rare_counts"]})


@dataclass
class Vocabularies:
    src_ip: FieldVocab
    dst_ip: FieldVocab
    protocol: FieldVocab
    src_port: FieldVocab
    dst_port: FieldVocab
    rare_threshold: int = 5

    def __getitem__(self, name) -> FieldVocab:
        return getattr(self, name)

    def sizes(self) -> dict:
        return {f: len(self[f]) for f in CATEGORICAL_FIELDS}

    def to_dict(self):
        d = {f: self[f].to_dict() for f in CATEGORICAL_FIELDS}
        d["rare_threshold"] = self.rare_threshold
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{f: FieldVocab.from_dict(d[f]) for f in CATEGORICAL_FIELDS},
                   rare_threshold=d["rare_threshold"])


def _field_vocab(values: Iterable, threshold: int) -> FieldVocab:
    counts = Counter(values)
    order = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    kept = [tok for tok, n in order if n >= threshold]
    rare = {tok: n for tok, n in order if n < threshold}
    return FieldVocab(kept, rare)


def build_vocabularies(ds: TraceDataset, rare_threshold: int = 5) -> Vocabularies:
    """Index every field by descending count (ties lexicographic).

    The RARE threshold applies to the port fields; every observed IP and
    protocol token gets its own index. All fields reserve a trailing RARE
    slot for tokens unseen at encode time.
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot build vocabularies from an empty dataset")
    vocabs = {}
    for f in CATEGORICAL_FIELDS:
        threshold = rare_threshold if f in PORT_FIELDS else 1
        vocabs[f] = _field_vocab((getattr(r, f) for r in ds.records), threshold)
    return Vocabularies(**vocabs, rare_threshold=rare_threshold)


# -- encoding ---------------------------------------------------------------

@dataclass(frozen=True)
class EncodingConfig:
    eps_tau: float = EPS_TAU
    eps_duration: float = EPS_TAU


@dataclass(frozen=True)
class EncodedEvent:
    inter_arrival: float
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int
    log_size: float
    log_duration: float
    seasonal: np.ndarray = field(repr=False, compare=False)
    timestamp: float = 0.0


@dataclass
class EncodedArrays:
    """Columnar form of an encoded trace, as consumed by the model."""

    timestamp: np.ndarray
    inter_arrival: np.ndarray
    indices: dict
    log_size: np.ndarray
    log_duration: np.ndarray

    def __len__(self):
        return len(self.timestamp)


def encode_arrays(ds: TraceDataset, vocab: Vocabularies,
                  cfg: EncodingConfig = EncodingConfig()) -> EncodedArrays:
    t = ds.column("timestamp")
    tau = np.full(len(t), cfg.eps_tau)
    if len(t) > 1:
        tau[1:] = np.maximum(np.diff(t), cfg.eps_tau)
    indices = {f: np.array([vocab[f].encode(getattr(r, f)) for r in ds.records], dtype=np.int64)
               for f in CATEGORICAL_FIELDS}
    size = np.array([r.bytes_in + r.bytes_out for r in ds.records], dtype=float)
    dur = ds.column("duration")
    return EncodedArrays(t, tau, indices, np.log(size + 1.0), np.log(dur + cfg.eps_duration))


def encode(ds: TraceDataset, vocab: Vocabularies, cfg: EncodingConfig = EncodingConfig()) -> list:
    """Per-event encoding; see :func:`encode_arrays` for the columnar variant."""
    from .encoder import metadata_vector

    arr = encode_arrays(ds, vocab, cfg)
    return [
        EncodedEvent(float(arr.inter_arrival[i]),
                     *(int(arr.indices[f][i]) for f in ("src_ip", "dst_ip", "src_port", "dst_port", "protocol")),
                     float(arr.log_size[i]), float(arr.log_duration[i]),
                     metadata_vector(arr.timestamp[i]), float(arr.timestamp[i]))
        for i in range(len(arr))
    ]


def decode_tokens(ev: EncodedEvent, vocab: Vocabularies) -> dict:
    return {f: vocab[f].decode(getattr(ev, f)) for f in CATEGORICAL_FIELDS}


def split(ds: TraceDataset, train_fraction: float):
    """Chronological split: the first ceil(n*f) records train, the rest test."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = math.ceil(len(ds) * train_fraction)
    if n_train == 0 or n_train >= len(ds):
        raise DegenerateSplit(f"{len(ds)} records with fraction {train_fraction} leaves an empty side")
    train = TraceDataset(ds.records[:n_train], ds.kind, ds.provenance + "[train]")
    test = TraceDataset(ds.records[n_train:], ds.kind, ds.provenance + "[test]")
    return train, test


# -- fixtures ---------------------------------------------------------------

@dataclass
class PairSpec:
    src_ip: str
    dst_ip: str
    weight: float
    protocols: dict
    dst_ports: dict
    src_ports: dict
    size_mu: float = 7.0
    size_sigma: float = 1.0
    duration_mu: float = 0.0
    duration_sigma: float = 1.0
    in_fraction: float = 0.5
    bytes_per_packet: float = 500.0


@dataclass
class FixtureSpec:
    """Ground-truth generator description.

    ``hourly_rate`` is in events per hour for each UTC hour of the day and
    is multiplied by ``weekday_multiplier`` (Monday first).
    """

    pairs: list
    hourly_rate: list
    weekday_multiplier: list = field(default_factory=lambda: [1.0] * 7)
    span_days: float = 1.0
    start: float = 1704067200.0  # Monday 2024-01-01 00:00 UTC
    kind: str = "flow"

    def validate(self):
        if len(self.hourly_rate) != 24 or len(self.weekday_multiplier) != 7:
            raise InvalidSpec("hourly_rate needs 24 values and weekday_multiplier 7")
        if min(self.hourly_rate) < 0 or min(self.weekday_multiplier) < 0:
            raise InvalidSpec("rates and multipliers must be non-negative")
        if self.span_days <= 0 or self.start < 0:
            raise InvalidSpec("span_days must be positive and start non-negative")
        if self.kind not in ("flow", "packet"):
            raise InvalidSpec(f"unknown kind {self.kind!r}")
        if not self.pairs:
            raise InvalidSpec("at least one host pair is required")
        _check_probs([p.weight for p in self.pairs], "pair weights")
        for p in self.pairs:
            for name in ("protocols", "dst_ports", "src_ports"):
                _check_probs(list(getattr(p, name).values()), f"{p.src_ip}->{p.dst_ip} {name}")
            if p.size_sigma < 0 or p.duration_sigma < 0 or not 0 <= p.in_fraction <= 1 \
                    or p.bytes_per_packet <= 0:
                raise InvalidSpec(f"bad size/duration parameters for {p.src_ip}->{p.dst_ip}")


def _check_probs(values, what):
    if not values or min(values) < 0 or abs(sum(values) - 1.0) > 1e-9:
        raise InvalidSpec(f"{what} must be non-negative and sum to 1 (got {values})")


def _parse_table(text: str, key=str) -> dict:
    table = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        tok, _, prob = item.rpartition(":")
        table[key(tok.strip())] = float(prob)
    return table


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def load_fixture_spec(path) -> FixtureSpec:
    """Read a fixture description from a key-value config file.

    A ``[fixture]`` section holds the global rate tables; each
    ``[pair NAME]`` section describes one host pair, with probability
    tables written as ``token:prob, token:prob``.
    """
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("fixture"):
        raise InvalidSpec(f"{path} lacks a [fixture] section")
    fx = parser["fixture"]
    try:
        pairs = []
        for name in parser.sections():
            if not name.startswith("pair"):
                continue
            s = parser[name]
            pairs.append(PairSpec(
                s["src_ip"], s["dst_ip"], float(s["weight"]),
                _parse_table(s.get("protocols", "TCP:1")),
                _parse_table(s.get("dst_ports", "80:1"), int),
                _parse_table(s.get("src_ports", "40000:1"), int),
                s.getfloat("size_mu", 7.0), s.getfloat("size_sigma", 1.0),
                s.getfloat("duration_mu", 0.0), s.getfloat("duration_sigma", 1.0),
                s.getfloat("in_fraction", 0.5), s.getfloat("bytes_per_packet", 500.0)))
        rate = _floats(fx["hourly_rate"])
        if len(rate) == 1:
            rate = rate * 24
        spec = FixtureSpec(pairs, rate, _floats(fx.get("weekday_multiplier", "1 1 1 1 1 1 1")),
                           fx.getfloat("span_days", 1.0), fx.getfloat("start", 1704067200.0),
                           fx.get("kind", "flow"))
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"bad fixture spec {path}: {exc}") from exc
    spec.validate()
    return spec


def _draw_table(rng, table: dict, n: int) -> list:
    tokens = list(table)
    probs = np.array([table[t] for t in tokens], dtype=float)
    idx = rng.choice(len(tokens), size=n, p=probs / probs.sum())
    return [tokens[i] for i in idx]


def make_fixture(spec: FixtureSpec, seed: int) -> TraceDataset:
    """Sample a synthetic trace from ``spec`` (inhomogeneous Poisson via thinning)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    hourly = np.asarray(spec.hourly_rate, dtype=float)
    daily = np.asarray(spec.weekday_multiplier, dtype=float)
    lam_max = hourly.max() * daily.max()
    span = spec.span_days * 86400.0
    if lam_max <= 0:
        raise InvalidSpec("all rates are zero")
    n_cand = rng.poisson(lam_max * span / 3600.0)
    cand = np.sort(rng.uniform(0.0, span, n_cand)) + spec.start
    rate = hourly[hour_of_day(cand)] * daily[weekday(cand)]
    times = cand[rng.uniform(size=n_cand) * lam_max < rate]
    times = np.round(times * 1e6) / 1e6
    n = len(times)
    if n == 0:
        raise EmptyDataset("fixture produced no events")

    weights = np.array([p.weight for p in spec.pairs])
    pair_idx = rng.choice(len(spec.pairs), size=n, p=weights / weights.sum())
    fields = {k: [None] * n for k in ("protocol", "dst_port", "src_port")}
    size = np.zeros(n, dtype=np.int64)
    dur = np.zeros(n)
    in_frac = np.zeros(n)
    bpp = np.ones(n)
    for j, p in enumerate(spec.pairs):
        sel = np.flatnonzero(pair_idx == j)
        if len(sel) == 0:
            continue
        for name, table in (("protocol", p.protocols), ("dst_port", p.dst_ports),
                            ("src_port", p.src_ports)):
            for i, tok in zip(sel, _draw_table(rng, table, len(sel))):
                fields[name][i] = tok
        size[sel] = np.maximum(1, np.round(rng.lognormal(p.size_mu, p.size_sigma, len(sel))))
        dur[sel] = rng.lognormal(p.duration_mu, p.duration_sigma, len(sel))
        in_frac[sel] = p.in_fraction
        bpp[sel] = p.bytes_per_packet

    records = []
    if spec.kind == "flow":
        b_in = np.round(size * in_frac).astype(np.int64)
        b_out = size - b_in
        p_in = np.where(b_in > 0, np.ceil(b_in / bpp), 0).astype(np.int64)
        p_out = np.where(b_out > 0, np.ceil(b_out / bpp), 0).astype(np.int64)
        dur = np.where(p_in + p_out <= 1, 0.0, np.round(dur * 1e6) / 1e6)
    else:
        inbound = rng.uniform(size=n) < in_frac
        b_in = np.where(inbound, size, 0)
        b_out = np.where(inbound, 0, size)
        p_in = inbound.astype(np.int64)
        p_out = 1 - p_in
        dur = np.zeros(n)
    for i in range(n):
        p = spec.pairs[pair_idx[i]]
        records.append(TraceRecord(
            float(times[i]), p.src_ip, p.dst_ip, int(fields["src_port"][i]), int(fields["dst_port"][i]),
            str(fields["protocol"][i]), int(b_in[i]), int(b_out[i]), int(p_in[i]), int(p_out[i]),
            float(dur[i]), spec.kind))
    return TraceDataset(tuple(records), spec.kind, provenance=f"fixture(seed={seed})")


def diurnal_rates(night: float, day: float, peak_hour: float = 14.0) -> list:
    """24 hourly rates following one cosine cycle from ``night`` (trough) to ``day`` (peak)."""
    h = np.arange(24) + 0.5
    mid, amp = (day + night) / 2.0, (day - night) / 2.0
    return [float(x) for x in mid + amp * np.cos(2 * np.pi * (h - peak_hour) / 24.0)]


def demo_fixture_spec(span_days: float = 7.0, kind: str = "flow") -> FixtureSpec:
    """A small office-like network: web, DNS, mail and NTP clients on a diurnal cycle."""
    pairs = [
        PairSpec("192.168.1.10", "93.184.216.34", 0.35, {"TCP": 1.0}, {443: 0.8, 80: 0.2},
                 {50000 + i: 0.1 for i in range(10)}, 8.0, 1.2, 0.5, 1.0, 0.2, 900.0),
        PairSpec("192.168.1.11", "10.0.0.53", 0.25, {"UDP": 1.0}, {53: 1.0},
                 {40000 + i: 0.2 for i in range(5)}, 4.5, 0.3, -3.0, 0.5, 0.5, 80.0),
        PairSpec("192.168.1.12", "172.16.0.25", 0.15, {"TCP": 1.0}, {25: 0.6, 587: 0.4},
                 {45000: 0.5, 45001: 0.5}, 9.0, 1.5, 1.0, 1.0, 0.1, 1200.0),
        PairSpec("192.168.1.10", "172.16.0.123", 0.1, {"UDP": 1.0}, {123: 1.0}, {123: 1.0},
                 4.5, 0.1, -4.0, 0.3, 0.5, 90.0),
        PairSpec("192.168.1.13", "93.184.216.34", 0.15, {"TCP": 0.9, "UDP": 0.1}, {443: 1.0},
                 {51000: 0.5, 51001: 0.5}, 7.5, 1.0, 0.0, 1.0, 0.3, 700.0),
    ]
    return FixtureSpec(pairs, diurnal_rates(60.0, 180.0), [1, 1, 1, 1, 1, 0.5, 0.5], span_days,
                       kind=kind)
