"""Fidelity, diversity and novelty metrics plus diagnostic exports.

All functions are pure. Distances are zero when the synthetic trace equals
the real one.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.neighbors import NearestNeighbors

from .errors import EmptyInput, InsufficientData, TooFewPoints
from .ingest import CATEGORICAL_FIELDS, EPS_TAU, TraceDataset, hour_of_day, weekday

# fields compared by membership disclosure (everything except the timestamp)
MD_FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol",
             "bytes_in", "bytes_out", "packets_in", "packets_out", "duration")
MD_NUMERIC = ("bytes_in", "bytes_out", "packets_in", "packets_out", "duration")


# -- scalar metrics -----------------------------------------------------------------

def _xlogy2(p, q):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz] / q[nz])
    return out.sum()


def distribution_jsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence of two (unnormalized) count vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.sum() <= 0 or q.sum() <= 0:
        raise EmptyInput("distribution has no mass")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    v = 0.5 * _xlogy2(p, m) + 0.5 * _xlogy2(q, m)
    return float(min(max(v, 0.0), 1.0))


def jsd(p_samples, q_samples) -> float:
    """JSD between the empirical distributions of two categorical samples."""
    p_samples, q_samples = list(p_samples), list(q_samples)
    if not p_samples or not q_samples:
        raise EmptyInput("jsd needs two non-empty samples")
    cp, cq = Counter(p_samples), Counter(q_samples)
    universe = sorted(set(cp) | set(cq), key=str)
    a = np.array([cp[u] for u in universe], dtype=float)
    b = np.array([cq[u] for u in universe], dtype=float)
    return distribution_jsd(a, b)


def emd_1d(x, y) -> float:
    """Wasserstein-1 distance between two 1-d samples: integral of |F_x - F_y|."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if x.size == 0 or y.size == 0:
        raise EmptyInput("emd needs two non-empty samples")
    grid = np.concatenate([x, y])
    grid.sort(kind="mergesort")
    Fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    Fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(Fx - Fy) * np.diff(grid)))


def numeric_matrix(ds: TraceDataset) -> np.ndarray:
    """ln tau, ln(bytes + 1), ln(duration + eps) for events 1..n-1 (event 0 has no tau)."""
    ts = ds.column("timestamp")
    tau = np.maximum(np.diff(ts), EPS_TAU)
    size = ds.column("size")[1:]
    dur = np.maximum(ds.column("duration")[1:], 0.0)
    return np.column_stack([np.log(tau), np.log(size + 1.0), np.log(dur + EPS_TAU)])


def correlation(X) -> np.ndarray:
    """Pearson correlation of the columns of X; constant columns get a zero row/column."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    sd = np.sqrt((Xc ** 2).sum(axis=0))
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    Z = np.where(const, 0.0, Xc / np.where(const, 1.0, sd))
    R = Z.T @ Z
    np.fill_diagonal(R, np.where(const, 0.0, 1.0))
    return np.clip(R, -1.0, 1.0)


def pcd(real: TraceDataset, synth: TraceDataset, columns=None) -> float:
    """Frobenius norm between the numeric correlation matrices of two traces."""
    cols = [0, 1, 2] if columns is None else list(columns)
    if len(cols) < 2:
        raise InsufficientData("pcd needs at least two numeric columns")
    if len(real) < 3 or len(synth) < 3:
        raise InsufficientData("pcd needs at least two inter-arrival rows per trace")
    A = correlation(numeric_matrix(real)[:, cols])
    B = correlation(numeric_matrix(synth)[:, cols])
    return float(np.linalg.norm(A - B))


def _joint_counts(ds: TraceDataset, a: str, b: str) -> Counter:
    return Counter(zip(ds.column(a), ds.column(b)))


def cmd(real: TraceDataset, synth: TraceDataset, fields=CATEGORICAL_FIELDS) -> float:
    """Mean over categorical column pairs of the L1 distance between joint tables."""
    if len(fields) < 2:
        raise InsufficientData("cmd needs at least two categorical columns")
    if len(real) == 0 or len(synth) == 0:
        raise InsufficientData("cmd needs non-empty traces")
    total = 0.0
    pairs = list(combinations(fields, 2))
    for a, b in pairs:
        cr, cs = _joint_counts(real, a, b), _joint_counts(synth, a, b)
        nr, ns = len(real), len(synth)
        cells = set(cr) | set(cs)
        total += sum(abs(cr[c] / nr - cs[c] / ns) for c in sorted(cells, key=str))
    return total / len(pairs)


# -- manifold metrics ------------------------------------------------------------------

@dataclass
class Embedding:
    """Shared mixed-feature space: standardized ln numerics and one-hot categoricals.

    Statistics and category universes come from the real trace, so a synthetic
    category never seen in the real data maps to an all-zero block.
    """

    means: np.ndarray
    stds: np.ndarray
    universes: dict

    @classmethod
    def fit(cls, ds: TraceDataset):
        X = numeric_matrix(ds)
        sd = X.std(axis=0)
        universes = {f: {v: i for i, v in enumerate(sorted(set(ds.column(f)[1:]), key=str))}
                     for f in CATEGORICAL_FIELDS}
        return cls(X.mean(axis=0), np.where(sd > 1e-12, sd, 1.0), universes)

    def transform(self, ds: TraceDataset) -> np.ndarray:
        num = (numeric_matrix(ds) - self.means) / self.stds
        blocks = [num]
        for f, uni in self.universes.items():
            col = ds.column(f)[1:]
            oh = np.zeros((len(col), len(uni)))
            for r, v in enumerate(col):
                j = uni.get(v)
                if j is not None:
                    oh[r, j] = 1.0
            blocks.append(oh)
        return np.hstack(blocks)


def _dist(A, B):
    return np.sqrt(((A - B) ** 2).sum(axis=-1))


def density_coverage_arrays(R, S, k: int = 5):
    """Density and coverage of real points R against synthetic k-NN balls on S.

    A ball is closed and its radius is the distance from a synthetic point
    to its k-th nearest other synthetic point. sklearn only proposes
    candidates; every distance that decides membership is recomputed with
    one formula so ties on the sphere (common when synth shares points with
    real) resolve the same way every time.
    """
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    if len(R) < k + 1 or len(S) < k + 1:
        raise TooFewPoints(f"need more than k={k} points in each set, got {len(R)} and {len(S)}")
    extra = min(len(S), k + 4)
    nn = NearestNeighbors(n_neighbors=extra).fit(S)
    cand = nn.kneighbors(S, return_distance=False)
    d = np.sort(_dist(S[:, None, :], S[cand]), axis=1)
    # position 0 is the point itself (distance 0)
    radii = d[:, k]
    slack = float(radii.max()) * (1 + 1e-9) + 1e-12
    ind = nn.radius_neighbors(R, radius=slack, return_distance=False)
    counts = np.zeros(len(R))
    for r in range(len(R)):
        j = ind[r]
        if len(j):
            counts[r] = np.count_nonzero(_dist(R[r], S[j]) <= radii[j])
    return float(counts.mean() / k), float(np.mean(counts > 0))


def density_coverage(real: TraceDataset, synth: TraceDataset, k: int = 5, max_points=None, seed: int = 0):
    emb = Embedding.fit(real)
    R, S = emb.transform(real), emb.transform(synth)
    if max_points is not None:
        # same seed for both sides: equal-length inputs keep the same rows
        if len(R) > max_points:
            R = R[np.sort(np.random.default_rng(seed).choice(len(R), max_points, replace=False))]
        if len(S) > max_points:
            S = S[np.sort(np.random.default_rng(seed).choice(len(S), max_points, replace=False))]
    return density_coverage_arrays(R, S, k)


def decile_edges(values) -> np.ndarray:
    return np.quantile(np.asarray(values, dtype=float), np.linspace(0.1, 0.9, 9))


def discretize(ds: TraceDataset, edges: dict) -> np.ndarray:
    """Integer-coded record matrix over MD_FIELDS; numerics mapped to decile buckets."""
    cols = []
    for f in MD_FIELDS:
        if f in MD_NUMERIC:
            cols.append(np.searchsorted(edges[f], ds.column(f).astype(float), side="right"))
        else:
            cols.append(ds.column(f))
    return cols


def _codes(train_cols, synth_cols):
    T, S = [], []
    for tc, sc in zip(train_cols, synth_cols):
        lookup = {}
        for v in tc:
            lookup.setdefault(v, len(lookup))
        T.append(np.array([lookup[v] for v in tc], dtype=np.int64))
        S.append(np.array([lookup.get(v, -1) for v in sc], dtype=np.int64))
    return np.column_stack(T), np.column_stack(S)


def membership_disclosure(synth: TraceDataset, train: TraceDataset, chunk: int = 256) -> float:
    """Mean over synthetic records of the minimum Hamming distance to any training record."""
    if len(synth) == 0 or len(train) == 0:
        raise EmptyInput("membership disclosure needs non-empty traces")
    edges = {f: decile_edges(train.column(f)) for f in MD_NUMERIC}
    T, S = _codes(discretize(train, edges), discretize(synth, edges))
    T = np.unique(T, axis=0)
    best = np.empty(len(S), dtype=np.int64)
    for a in range(0, len(S), chunk):
        block = S[a:a + chunk]
        d = np.full(len(block), len(MD_FIELDS), dtype=np.int64)
        for b in range(0, len(T), 4096):
            ham = (block[:, None, :] != T[None, b:b + 4096, :]).sum(axis=2)
            np.minimum(d, ham.min(axis=1), out=d)
        best[a:a + chunk] = d
    return float(best.mean())


# -- diagnostics -------------------------------------------------------------------------

def qq_points(real_taus, synth_taus, n_quantiles: int = 99):
    """Matched empirical quantiles at probabilities j/(n+1), j = 1..n."""
    r = np.asarray(real_taus, dtype=float)
    s = np.asarray(synth_taus, dtype=float)
    if r.size == 0 or s.size == 0:
        raise EmptyInput("qq_points needs non-empty samples")
    if n_quantiles < 1:
        raise ValueError("n_quantiles must be >= 1")
    probs = np.arange(1, n_quantiles + 1) / (n_quantiles + 1)
    return list(zip(np.quantile(r, probs).tolist(), np.quantile(s, probs).tolist()))


def seasonal_histograms(ds: TraceDataset, utc_offset_hours: float = 0.0):
    t = ds.column("timestamp")
    hours = np.bincount(hour_of_day(t, utc_offset_hours), minlength=24)
    days = np.bincount(weekday(t, utc_offset_hours), minlength=7)
    return hours.astype(np.int64), days.astype(np.int64)


def host_pair_distribution(ds: TraceDataset, top_n: int = 30):
    counts = Counter(zip(ds.column("src_ip"), ds.column("dst_ip")))
    n = len(ds)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0][0]), str(kv[0][1])))
    return [(pair, c / n) for pair, c in ranked[:top_n]]


def top_pair_tv(real: TraceDataset, synth: TraceDataset, top_n: int = 10) -> float:
    """Total variation between real and synthetic frequencies of the real top pairs."""
    top = [p for p, _ in host_pair_distribution(real, top_n)]
    cr = Counter(zip(real.column("src_ip"), real.column("dst_ip")))
    cs = Counter(zip(synth.column("src_ip"), synth.column("dst_ip")))
    return 0.5 * sum(abs(cr[p] / len(real) - cs[p] / len(synth)) for p in top)


# -- report -------------------------------------------------------------------------------

EMD_FEATURES = ("time_delta", "hourly", "daily", "duration", "size")


def emd_features(ds: TraceDataset) -> dict:
    t = ds.column("timestamp")
    out = {
        "time_delta": np.diff(t) if len(t) > 1 else np.zeros(1),
        "hourly": hour_of_day(t).astype(float),
        "daily": weekday(t).astype(float),
        "size": ds.column("size").astype(float),
    }
    if ds.kind == "flow":
        out["duration"] = ds.column("duration")
    return out


@dataclass
class MetricReport:
    jsd: dict
    emd: dict
    pcd: float
    cmd: float
    density: float
    coverage: float
    md: float
    n_real: int
    n_synth: int
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "jsd": self.jsd, "emd": self.emd, "pcd": self.pcd, "cmd": self.cmd,
            "density": self.density, "coverage": self.coverage, "md": self.md,
            "n_real": self.n_real, "n_synth": self.n_synth, "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [(f"jsd.{k}", v) for k, v in self.jsd.items()]
        rows += [(f"emd.{k}", v) for k, v in self.emd.items()]
        rows += [("pcd", self.pcd), ("cmd", self.cmd), ("density", self.density),
                 ("coverage", self.coverage), ("md", self.md),
                 ("n_real", self.n_real), ("n_synth", self.n_synth)]
        w = max(len(k) for k, _ in rows)
        lines = [f"{'metric'.ljust(w)}  value", f"{'-' * w}  {'-' * 12}"]
        for k, v in rows:
            lines.append(f"{k.ljust(w)}  {v:.6g}" if isinstance(v, float) else f"{k.ljust(w)}  {v}")
        return "\n".join(lines) + "\n"


def evaluate(real: TraceDataset, synth: TraceDataset, train: TraceDataset | None = None,
             k: int = 5, max_points: int | None = 5000, seed: int = 0, config=None) -> MetricReport:
    """Full metric battery. MD is measured against ``train`` (``real`` if omitted)."""
    if len(real) == 0 or len(synth) == 0:
        raise EmptyInput("evaluate needs non-empty traces")
    fr, fs = emd_features(real), emd_features(synth)
    return MetricReport(
        jsd={f: jsd(real.column(f), synth.column(f)) for f in CATEGORICAL_FIELDS},
        emd={f: emd_1d(fr[f], fs[f]) for f in EMD_FEATURES if f in fr and f in fs},
        pcd=pcd(real, synth),
        cmd=cmd(real, synth),
        density=(dc := density_coverage(real, synth, k, max_points, seed))[0],
        coverage=dc[1],
        md=membership_disclosure(synth, train if train is not None else real),
        n_real=len(real),
        n_synth=len(synth),
        config=dict(config or {}),
    )


# -- CSV exports ---------------------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def qq_csv(points) -> str:
    return _csv(["real_quantile", "synth_quantile"], ([f"{a:.9g}", f"{b:.9g}"] for a, b in points))


def seasonal_csv(real: TraceDataset, synth: TraceDataset) -> tuple[str, str]:
    hr, dr = seasonal_histograms(real)
    hs, ds_ = seasonal_histograms(synth)
    hours = _csv(["hour", "real", "synth"], ([h, hr[h], hs[h]] for h in range(24)))
    days = _csv(["weekday", "real", "synth"], ([d, dr[d], ds_[d]] for d in range(7)))
    return hours, days


def host_pair_csv(real: TraceDataset, synth: TraceDataset, top_n: int = 30) -> str:
    cs = Counter(zip(synth.column("src_ip"), synth.column("dst_ip")))
    rows = [[rank, a, b, f"{frac:.9g}", f"{cs[(a, b)] / len(synth):.9g}"]
            for rank, ((a, b), frac) in enumerate(host_pair_distribution(real, top_n), 1)]
    return _csv(["rank", "src_ip", "dst_ip", "real_fraction", "synth_fraction"], rows)


def taus(ds: TraceDataset) -> np.ndarray:
    t = ds.column("timestamp")
    return np.diff(t) if len(t) > 1 else np.zeros(0)

