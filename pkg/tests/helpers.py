import numpy as np

from flowtpp.ingest import TraceDataset, TraceRecord

IPS = ["10.0.0.1", "10.0.0.2", "10.0.0.3", "192.168.1.5"]
PROTOS = ["TCP", "UDP", "ICMP"]
PORTS = [53, 80, 443, 1234]


def random_dataset(rng, n, kind="flow", start=1704067200.0):
    """Small random flow trace with repeated categories and integer-ish numerics."""
    t = start + np.cumsum(np.round(rng.exponential(5.0, n), 6) + 1e-6)
    recs = []
    for i in range(n):
        bi, bo = int(rng.integers(0, 3000)), int(rng.integers(0, 3000))
        pi, po = int(rng.integers(0, 5)), int(rng.integers(0, 5))
        dur = 0.0 if rng.random() < 0.3 else round(float(rng.exponential(2.0)), 6)
        recs.append(TraceRecord(float(round(t[i], 6)), str(rng.choice(IPS)), str(rng.choice(IPS)),
                                int(rng.choice(PORTS)), int(rng.choice(PORTS)), str(rng.choice(PROTOS)),
                                bi, bo, pi, po, dur, kind))
    return TraceDataset(tuple(recs), kind)
