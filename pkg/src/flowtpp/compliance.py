"""Domain knowledge check: twenty plausibility rules over flow records.

Rules are string-level heuristics. Addresses are classified by prefix and
suffix of their token, ports by fixed lists, and protocols by name (numeric
protocol codes 1, 2, 6, 17 are accepted as ICMP, IGMP, TCP, UDP).

Rules that need information a trace does not carry are skipped: rule 12
without a configured DNS server set, rule 14 when records have no TCP flag
field. Skipped rules are listed in the report and left out of the score's
denominator.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyDataset, WrongKind
from .ingest import TraceDataset, TraceRecord

UDP_SERVICE_PORTS = frozenset({53, 137, 138, 5353, 1900, 67, 3544, 8612, 3702, 123})
TCP_SERVICE_PORTS = frozenset({80, 443, 8000, 25, 993, 587, 445, 84, 8088, 8080})
NETBIOS_SSDP_PORTS = frozenset({137, 138, 1900})
EXTERNAL_SERVICE_PORTS = frozenset({80, 443, 8000, 25, 587})
LOCAL_ONLY_PORTS = frozenset({993, 67})
DEFAULT_MDNS_GROUPS = frozenset({"224.0.0.251", "ff02::fb"})
MIN_FRAME = 42
MAX_FRAME = 65535

_PROTO_NUMBERS = {"1": "ICMP", "2": "IGMP", "6": "TCP", "17": "UDP"}

RULES = {
    1: "TCP traffic on ports reserved for UDP services (53, 137, 138, 5353, 1900, 67, 3544, 8612, 3702, 123)",
    2: "UDP traffic on ports typically associated with TCP services (80, 443, 8000, 25, 993, 587, 445, 84, 8088, 8080)",
    3: "Destination port 0 with non-ICMP/IGMP traffic",
    4: "ICMP flows with nonzero outgoing bytes",
    5: "ICMP flows with nonzero outgoing packets",
    6: "IGMP flows with nonzero incoming or outgoing bytes",
    7: "NetBIOS/SSDP ports (137, 138, 1900) with nonzero incoming bytes",
    8: "NetBIOS/SSDP ports (137, 138, 1900) with nonzero incoming packets",
    9: "NetBIOS/SSDP ports (137, 138, 1900) not sent to broadcast addresses (.255)",
    10: "Flows targeting local/private IPs (192.168.) on external service ports (80, 443, 8000, 25, 587)",
    11: "External IPs using local-only service ports (993, 67)",
    12: "DNS port 53 flows not directed to a DNS-labeled destination",
    13: "Multicast DNS port 5353 flows not directed to expected group addresses",
    14: "Non-TCP flows with non-empty TCP flag fields",
    15: "Incoming payload smaller than Ethernet header size (bytes < 42 x packets)",
    16: "Outgoing payload smaller than Ethernet header size (bytes < 42 x packets)",
    17: "Incoming payload larger than maximum frame size (bytes > 65535 x packets)",
    18: "Outgoing payload larger than maximum frame size (bytes > 65535 x packets)",
    19: "Negative or malformed durations",
    20: "Inconsistent duration/packet relations (zero duration with multiple packets, or nonzero duration with a single packet)",
}
RULE_IDS = tuple(sorted(RULES))


@dataclass(frozen=True)
class RuleId:
    id: int
    description: str


def rule_catalog() -> list:
    return [RuleId(i, RULES[i]) for i in RULE_IDS]


@dataclass(frozen=True)
class DKCConfig:
    """``dns_servers`` of None means rule 12 cannot be evaluated."""

    dns_servers: frozenset | None = None
    mdns_groups: frozenset = DEFAULT_MDNS_GROUPS
    private_prefix: str = "192.168."
    broadcast_suffix: str = ".255"

    def __post_init__(self):
        if self.dns_servers is not None:
            object.__setattr__(self, "dns_servers", frozenset(self.dns_servers))
        object.__setattr__(self, "mdns_groups", frozenset(self.mdns_groups))


def proto_name(p) -> str:
    s = str(p).strip().upper()
    return _PROTO_NUMBERS.get(s, s)


def _is_private(ip, cfg):
    return str(ip).startswith(cfg.private_prefix)


def _has_flags(flags) -> bool:
    if flags is None:
        return False
    s = str(flags).strip()
    return s not in ("", "0", ".", "......", "-")


def skipped_rules(r: TraceRecord, cfg: DKCConfig) -> frozenset:
    out = set()
    if cfg.dns_servers is None:
        out.add(12)
    if r.tcp_flags is None:
        out.add(14)
    return frozenset(out)


def check_record(r: TraceRecord, cfg: DKCConfig | None = None) -> frozenset:
    """Ids of the rules ``r`` violates (skipped rules never appear)."""
    cfg = cfg or DKCConfig()
    if r.kind != "flow":
        raise WrongKind(f"compliance rules apply to flow records, got {r.kind!r}")
    proto = proto_name(r.protocol)
    port = r.dst_port
    dst = str(r.dst_ip)
    v = set()
    if proto == "TCP" and port in UDP_SERVICE_PORTS:
        v.add(1)
    if proto == "UDP" and port in TCP_SERVICE_PORTS:
        v.add(2)
    if port == 0 and proto not in ("ICMP", "IGMP"):
        v.add(3)
    if proto == "ICMP" and r.bytes_out != 0:
        v.add(4)
    if proto == "ICMP" and r.packets_out != 0:
        v.add(5)
    if proto == "IGMP" and (r.bytes_in != 0 or r.bytes_out != 0):
        v.add(6)
    if port in NETBIOS_SSDP_PORTS:
        if r.bytes_in != 0:
            v.add(7)
        if r.packets_in != 0:
            v.add(8)
        if not dst.endswith(cfg.broadcast_suffix):
            v.add(9)
    if _is_private(dst, cfg) and port in EXTERNAL_SERVICE_PORTS:
        v.add(10)
    if not _is_private(dst, cfg) and port in LOCAL_ONLY_PORTS:
        v.add(11)
    if cfg.dns_servers is not None and port == 53 and dst not in cfg.dns_servers:
        v.add(12)
    if port == 5353 and dst not in cfg.mdns_groups:
        v.add(13)
    if r.tcp_flags is not None and proto != "TCP" and _has_flags(r.tcp_flags):
        v.add(14)
    # frame-size rules only judge directions that carry both bytes and packets
    if r.packets_in > 0 and r.bytes_in > 0:
        if r.bytes_in < MIN_FRAME * r.packets_in:
            v.add(15)
        if r.bytes_in > MAX_FRAME * r.packets_in:
            v.add(17)
    if r.packets_out > 0 and r.bytes_out > 0:
        if r.bytes_out < MIN_FRAME * r.packets_out:
            v.add(16)
        if r.bytes_out > MAX_FRAME * r.packets_out:
            v.add(18)
    d = r.duration
    bad_duration = not isinstance(d, (int, float)) or math.isnan(d) or math.isinf(d) or d < 0
    if bad_duration:
        v.add(19)
    else:
        packets = r.packets_in + r.packets_out
        if (d == 0 and packets >= 2) or (d > 0 and packets == 1):
            v.add(20)
    return frozenset(v)


@dataclass
class ViolationReport:
    violations: list
    counts: dict
    skipped: tuple
    n_records: int
    dkc_score: float
    config: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"records      {self.n_records}",
                 f"dkc_score    {self.dkc_score:.6g}",
                 f"skipped      {','.join(map(str, self.skipped)) or '-'}",
                 "rule  count  description"]
        for i in RULE_IDS:
            tag = "skipped" if i in self.skipped else str(self.counts.get(i, 0))
            lines.append(f"{i:>4}  {tag:>5}  {RULES[i]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_index", "rule_ids"])
        for i, rules in enumerate(self.violations):
            w.writerow([i, ";".join(map(str, sorted(rules)))])
        return buf.getvalue()


def dkc_score(ds: TraceDataset, cfg: DKCConfig | None = None) -> ViolationReport:
    """Share of (record, rule) checks that fail, over the rules that could be evaluated."""
    cfg = cfg or DKCConfig()
    if ds.kind != "flow":
        raise WrongKind(f"compliance rules apply to flow traces, got {ds.kind!r}")
    if len(ds) == 0:
        raise EmptyDataset("no records to check")
    violations = [check_record(r, cfg) for r in ds.records]
    counts = Counter(i for v in violations for i in v)
    # a rule is skipped only if no record could evaluate it
    skipped = set(RULE_IDS)
    for r in ds.records:
        skipped &= skipped_rules(r, cfg)
    active = len(RULE_IDS) - len(skipped)
    total = sum(len(v) for v in violations)
    return ViolationReport(
        violations=violations,
        counts={i: counts.get(i, 0) for i in RULE_IDS if i not in skipped},
        skipped=tuple(sorted(skipped)),
        n_records=len(ds),
        dkc_score=total / (len(ds) * active),
        config={"dns_servers": sorted(cfg.dns_servers) if cfg.dns_servers is not None else None,
                "mdns_groups": sorted(cfg.mdns_groups)},
    )
