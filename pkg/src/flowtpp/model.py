"""Multi-task point-process network: shared LSTM history, one head per field.

Each header field is a task with its own negative log-likelihood; the
training objective is the 1/m-weighted sum over the m tasks present.

Context for event i (teacher forcing, history through event i-1):

* inter_arrival: [h ‖ seasonal(t_{i-1})]
* every other field: [h ‖ seasonal(t_i) ‖ embeddings of its conditioning fields]

with the conditioning chain src -> dst; (src, dst) -> protocol, src_port,
size, duration; (src, dst, protocol) -> dst_port.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tpp
from .encoder import LSTM, SEASONAL_DIM, seasonal_rows
from .errors import EmptyBatch, EmptyDataset, NonFiniteLoss, WrongKind
from .heads import CategoricalHead, nll_rows
from .ingest import (
    CATEGORICAL_FIELDS,
    EncodedArrays,
    TraceDataset,
    Vocabularies,
    build_vocabularies,
    encode_arrays,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

ALL_TASKS = ("inter_arrival", "src_ip", "dst_ip", "duration", "protocol", "dst_port", "src_port", "size")
PACKET_TASKS = tuple(t for t in ALL_TASKS if t != "duration")
STAGE1_TASKS = ("inter_arrival", "src_ip", "dst_ip", "duration")
STAGE2_TASKS = ("protocol", "dst_port", "src_port", "size")
MIXTURE_TASKS = ("inter_arrival", "size", "duration")
CONDITIONING = {
    "inter_arrival": (),
    "src_ip": (),
    "dst_ip": ("src_ip",),
    "duration": ("src_ip", "dst_ip"),
    "protocol": ("src_ip", "dst_ip"),
    "dst_port": ("src_ip", "dst_ip", "protocol"),
    "src_port": ("src_ip", "dst_ip"),
    "size": ("src_ip", "dst_ip"),
}
# EncodedArrays attribute holding the log-value each mixture task models
LOG_VALUE = {"inter_arrival": "inter_arrival", "size": "log_size", "duration": "log_duration"}

DEFAULT_EMBEDDING_DIMS = {"src_ip": 16, "dst_ip": 16, "protocol": 4, "src_port": 8, "dst_port": 8}


@dataclass
class TempoNetConfig:
    K: int = 8
    H: int = 64
    embedding_dims: dict = field(default_factory=lambda: dict(DEFAULT_EMBEDDING_DIMS))
    src_hidden: int = 64
    tbptt_window: int = 128
    batch_size: int = 4
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    kind: str = "flow"
    stage_split: bool = False
    rare_threshold: int = 5
    grad_clip: float = 5.0
    lr_schedule: str = "cosine"
    lr_floor: float = 0.05

    def __post_init__(self):
        self.embedding_dims = {**DEFAULT_EMBEDDING_DIMS, **dict(self.embedding_dims)}
        self.validate()

    def validate(self):
        if min(self.K, self.H, self.src_hidden, self.tbptt_window, self.batch_size) < 1:
            raise ValueError("K, H, src_hidden, tbptt_window and batch_size must be >= 1")
        if self.epochs < 0 or min(self.embedding_dims.values()) < 0:
            raise ValueError("epochs and embedding dims must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ValueError("lr_floor must lie in [0, 1]")
        if self.kind not in ("flow", "packet"):
            raise ValueError(f"unknown kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def tasks_for(kind: str, stage: int = 0) -> tuple:
    if stage == 1:
        return STAGE1_TASKS
    if stage == 2:
        return STAGE2_TASKS
    return ALL_TASKS if kind == "flow" else PACKET_TASKS


@dataclass
class TaskLosses:
    losses: dict

    @property
    def m(self):
        return len(self.losses)

    @property
    def total(self):
        return sum(self.losses.values()) / self.m

    def as_dict(self):
        return {**self.losses, "total": self.total}


@dataclass
class ModelCheckpoint:
    config: TempoNetConfig
    vocabularies: Vocabularies
    scalers: dict
    params: dict
    tasks: tuple
    stage: int = 0
    aux: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def build(self) -> "TempoNet":
        return TempoNet(self.config, self.vocabularies.sizes(), self.tasks, self.scalers,
                        params=self.params)


# -- batching -------------------------------------------------------------------

@dataclass
class Lanes:
    """An encoded trace cut into B contiguous lanes of length L (B, L arrays)."""

    t: np.ndarray
    y_t: np.ndarray
    y_prev: np.ndarray
    log_values: dict
    indices: dict
    valid: np.ndarray
    tau_valid: np.ndarray

    @property
    def shape(self):
        return self.valid.shape

    def window(self, a, b):
        def cut(x):
            return np.swapaxes(x[:, a:b], 0, 1)
        return Lanes(cut(self.t), cut(self.y_t), cut(self.y_prev),
                     {k: cut(v) for k, v in self.log_values.items()},
                     {k: cut(v) for k, v in self.indices.items()},
                     cut(self.valid), cut(self.tau_valid))


def make_lanes(arrays, n_lanes: int, window: int = 1) -> Lanes:
    """Lay one or more encoded sequences out as lanes.

    A single :class:`EncodedArrays` is split into ``n_lanes`` contiguous
    pieces (at least ``window`` events each where possible); a list of them
    becomes one lane per sequence. Short lanes are padded and masked.
    """
    if isinstance(arrays, EncodedArrays):
        N = len(arrays)
        if N == 0:
            raise EmptyBatch("no events to batch")
        B = max(1, min(n_lanes, N // window if window > 1 else N))
        L = math.ceil(N / B)
        bounds = [(b * L, min((b + 1) * L, N)) for b in range(B)]
        seqs = [(arrays, lo, hi) for lo, hi in bounds if hi > lo]
    else:
        seqs = [(a, 0, len(a)) for a in arrays]
        if not seqs or min(hi for _, _, hi in seqs) == 0:
            raise EmptyBatch("empty window in batch")
    B = len(seqs)
    L = max(hi - lo for _, lo, hi in seqs)

    t = np.zeros((B, L))
    t_prev = np.zeros((B, L))
    valid = np.zeros((B, L), dtype=bool)
    tau_valid = np.zeros((B, L), dtype=bool)
    log_values = {k: np.zeros((B, L)) for k in LOG_VALUE}
    indices = {f: np.zeros((B, L), dtype=np.int64) for f in CATEGORICAL_FIELDS}
    for b, (a, lo, hi) in enumerate(seqs):
        n = hi - lo
        t[b, :n] = a.timestamp[lo:hi]
        t[b, n:] = a.timestamp[hi - 1]
        t_prev[b, :n] = a.timestamp[lo:hi] - a.inter_arrival[lo:hi]
        t_prev[b, n:] = t[b, n:]
        valid[b, :n] = True
        tau_valid[b, :n] = True
        if lo == 0:
            tau_valid[b, 0] = False  # first event of a trace has no inter-arrival
        log_values["inter_arrival"][b, :n] = np.log(a.inter_arrival[lo:hi])
        log_values["size"][b, :n] = a.log_size[lo:hi]
        log_values["duration"][b, :n] = a.log_duration[lo:hi]
        for f in CATEGORICAL_FIELDS:
            indices[f][b, :n] = a.indices[f][lo:hi]
    y_t = seasonal_rows(t.ravel()).reshape(B, L, SEASONAL_DIM)
    y_prev = seasonal_rows(np.maximum(t_prev, 0.0).ravel()).reshape(B, L, SEASONAL_DIM)
    return Lanes(t, y_t, y_prev, log_values, indices, valid, tau_valid)


# -- the network --------------------------------------------------------------------

class TempoNet:
    """Parameters and forward/backward passes for one task set.

    ``params`` is a flat dict keyed by module path (``enc.W``,
    ``emb.src_ip``, ``head.size.V_mu`` ...); every array is float64.
    """

    def __init__(self, config: TempoNetConfig, vocab_sizes: dict, tasks, scalers: dict,
                 params: dict | None = None, rng=None):
        self.config = config
        self.vocab_sizes = dict(vocab_sizes)
        self.tasks = tuple(t for t in ALL_TASKS if t in tasks)
        self.scalers = {k: tuple(v) for k, v in scalers.items()}
        self.cat_tasks = [t for t in self.tasks if t not in MIXTURE_TASKS]
        self.num_tasks = [t for t in MIXTURE_TASKS if t in self.tasks]
        needed = set(self.cat_tasks)
        for t in self.tasks:
            needed.update(CONDITIONING[t])
        self.emb_fields = [f for f in CATEGORICAL_FIELDS if f in needed]
        self.input_fields = [f for f in CATEGORICAL_FIELDS if f in self.cat_tasks]
        dims = config.embedding_dims
        self.input_dim = sum(dims[f] for f in self.input_fields) + len(self.num_tasks) + SEASONAL_DIM
        self.context_dims = {t: config.H + SEASONAL_DIM + sum(dims[f] for f in CONDITIONING[t])
                             for t in self.tasks}
        self.params = dict(params) if params is not None else self._init_params(
            rng if rng is not None else np.random.default_rng(config.seed))
        self.encoder = LSTM(self.params["enc.W"], self.params["enc.b"])

    # parameters ----------------------------------------------------------------
    def parameter_shapes(self) -> dict:
        cfg, dims = self.config, self.config.embedding_dims
        shapes = {f"emb.{f}": (self.vocab_sizes[f], dims[f]) for f in self.emb_fields}
        shapes["enc.W"] = (4 * cfg.H, self.input_dim + cfg.H)
        shapes["enc.b"] = (4 * cfg.H,)
        for t in self.tasks:
            C = self.context_dims[t]
            if t in MIXTURE_TASKS:
                for p in ("w", "s", "mu"):
                    shapes[f"head.{t}.V_{p}"] = (cfg.K, C)
                    shapes[f"head.{t}.b_{p}"] = (cfg.K,)
            elif t == "src_ip":
                shapes[f"head.{t}.W1"] = (cfg.src_hidden, C)
                shapes[f"head.{t}.b1"] = (cfg.src_hidden,)
                shapes[f"head.{t}.W2"] = (self.vocab_sizes[t], cfg.src_hidden)
                shapes[f"head.{t}.b2"] = (self.vocab_sizes[t],)
            else:
                shapes[f"head.{t}.W2"] = (self.vocab_sizes[t], C)
                shapes[f"head.{t}.b2"] = (self.vocab_sizes[t],)
        return shapes

    def _init_params(self, rng) -> dict:
        cfg = self.config
        shapes = self.parameter_shapes()
        params = {}
        for name, shape in shapes.items():
            if name.startswith("emb."):
                params[name] = rng.normal(0.0, 0.3, shape)
            elif name == "enc.W":
                bound = 1.0 / math.sqrt(cfg.H)
                params[name] = rng.uniform(-bound, bound, shape)
            elif name.endswith(".W1"):
                params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), shape)
            else:
                params[name] = np.zeros(shape)
        params["enc.b"][cfg.H:2 * cfg.H] = 1.0  # forget-gate bias
        for t in self.num_tasks:
            mean, std = self.scalers[t]
            offsets = np.linspace(-1.0, 1.0, cfg.K) if cfg.K > 1 else np.zeros(1)
            params[f"head.{t}.b_mu"] = mean + std * offsets
            params[f"head.{t}.b_s"] = np.full(cfg.K, math.log(max(std, 1e-3)))
        return params

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def mixture_head(self, task) -> tpp.MixtureHead:
        p = self.params
        return tpp.MixtureHead(*(p[f"head.{task}.{n}"] for n in ("V_w", "b_w", "V_s", "b_s", "V_mu", "b_mu")))

    def categorical_head(self, task) -> CategoricalHead:
        p = self.params
        return CategoricalHead(p[f"head.{task}.W2"], p[f"head.{task}.b2"],
                               p.get(f"head.{task}.W1"), p.get(f"head.{task}.b1"))

    # building blocks ----------------------------------------------------------------
    def embed_rows(self, indices: dict, log_values: dict, y_t) -> np.ndarray:
        """Encoder inputs; every argument has leading shape S (any), returns S + (I,)."""
        parts = [self.params[f"emb.{f}"][indices[f]] for f in self.input_fields]
        for t in self.num_tasks:
            mean, std = self.scalers[t]
            parts.append(((log_values[t] - mean) / std)[..., None])
        parts.append(y_t)
        return np.concatenate(parts, axis=-1)

    def context_rows(self, task, h, y_t, y_prev, indices) -> np.ndarray:
        parts = [h, y_prev if task == "inter_arrival" else y_t]
        parts.extend(self.params[f"emb.{f}"][indices[f]] for f in CONDITIONING[task])
        return np.concatenate(parts, axis=-1)

    def initial_carry(self, B):
        H = self.config.H
        return np.zeros((B, H)), np.zeros((B, H))

    # loss ------------------------------------------------------------------------
    def loss(self, win: Lanes, carry=None, need_grad=False):
        """Teacher-forced losses for one (T, B) window.

        Returns (TaskLosses, grads or None, new carry, counts per task).
        """
        T, B = win.valid.shape
        H = self.config.H
        h0, c0 = carry if carry is not None else self.initial_carry(B)
        X = self.embed_rows(win.indices, win.log_values, win.y_t)
        hs, c_last, cache = self.encoder.run(X, h0, c0)
        new_carry = (hs[T], c_last)
        n = T * B
        h_rows = hs[:T].reshape(n, H)
        y_t = win.y_t.reshape(n, SEASONAL_DIM)
        y_prev = win.y_prev.reshape(n, SEASONAL_DIM)
        idx = {f: win.indices[f].reshape(n) for f in CATEGORICAL_FIELDS}
        valid = win.valid.reshape(n)
        tau_valid = win.tau_valid.reshape(n)
        m = len(self.tasks)

        grads = {k: np.zeros_like(v) for k, v in self.params.items()} if need_grad else None
        dh_rows = np.zeros((n, H)) if need_grad else None
        losses, counts = {}, {}
        for task in self.tasks:
            mask = tau_valid if task == "inter_arrival" else valid
            count = int(mask.sum())
            counts[task] = count
            C = self.context_rows(task, h_rows, y_t, y_prev, idx)
            if task in MIXTURE_TASKS:
                row_loss, dC = self._mixture_task(task, C, win.log_values[task].reshape(n),
                                                  mask, count, m, grads)
            else:
                row_loss, dC = self._categorical_task(task, C, idx[task], mask, count, m, grads)
            losses[task] = float(row_loss[mask].sum() / count) if count else 0.0
            if need_grad:
                dh_rows += dC[:, :H]
                off = H + SEASONAL_DIM
                for f in CONDITIONING[task]:
                    d = self.config.embedding_dims[f]
                    np.add.at(grads[f"emb.{f}"], idx[f], dC[:, off:off + d])
                    off += d
        if need_grad:
            dhs = dh_rows.reshape(T, B, H)
            dW, db, dX = self.encoder.backward(cache, dhs)
            grads["enc.W"] += dW
            grads["enc.b"] += db
            off = 0
            for f in self.input_fields:
                d = self.config.embedding_dims[f]
                np.add.at(grads[f"emb.{f}"], win.indices[f].reshape(n), dX[..., off:off + d].reshape(n, d))
                off += d
        return TaskLosses(losses), grads, new_carry, counts

    def _mixture_task(self, task, C, log_v, mask, count, m, grads):
        head = self.mixture_head(task)
        log_w, log_s, mu, clipped = tpp.params_rows(C, head.V_w, head.b_w, head.V_s, head.b_s,
                                                    head.V_mu, head.b_mu)
        lp, resp, z = tpp.log_density_rows(log_v, log_w, log_s, mu)
        # the modelled variable is v = exp(log_v), so the density carries the -log_v Jacobian
        row_loss = -lp
        if grads is None:
            return row_loss, None
        g = np.where(mask, 1.0 / (m * max(count, 1)), 0.0)
        d_aw, d_as, d_mu = tpp.backward_rows(g, resp, z, log_w, log_s, clipped)
        pre = f"head.{task}."
        grads[pre + "V_w"] += d_aw.T @ C
        grads[pre + "b_w"] += d_aw.sum(axis=0)
        grads[pre + "V_s"] += d_as.T @ C
        grads[pre + "b_s"] += d_as.sum(axis=0)
        grads[pre + "V_mu"] += d_mu.T @ C
        grads[pre + "b_mu"] += d_mu.sum(axis=0)
        dC = d_aw @ head.V_w + d_as @ head.V_s + d_mu @ head.V_mu
        return row_loss, dC

    def _categorical_task(self, task, C, targets, mask, count, m, grads):
        head = self.categorical_head(task)
        lg, z = head.forward_rows(C)
        row_loss, d_lg = nll_rows(lg, targets)
        if grads is None:
            return row_loss, None
        d_lg *= np.where(mask, 1.0 / (m * max(count, 1)), 0.0)[:, None]
        hg, dC = head.backward_rows(C, z, d_lg)
        for k, v in hg.items():
            grads[f"head.{task}.{k}"] += v
        return row_loss, dC


# -- optimisation -----------------------------------------------------------------

class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def learning_rate_at(cfg: TempoNetConfig, step: int, total: int) -> float:
    """Per-step rate; cosine anneals from the base rate to ``lr_floor`` times it."""
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.learning_rate
    frac = step / (total - 1)
    scale = cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))
    return cfg.learning_rate * scale


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- statistics stored alongside the parameters --------------------------------------

def feature_scalers(arrays: EncodedArrays, tasks) -> dict:
    out = {}
    for t in MIXTURE_TASKS:
        if t not in tasks:
            continue
        v = np.log(arrays.inter_arrival[1:]) if t == "inter_arrival" else getattr(arrays, LOG_VALUE[t])
        if len(v) == 0:
            v = np.log(arrays.inter_arrival)
        std = float(np.std(v))
        out[t] = (float(np.mean(v)), std if std > 1e-12 else 1.0)
    return out


def size_split_stats(ds: TraceDataset, vocab: Vocabularies) -> dict:
    """Per-protocol byte direction split and bytes per packet, for output rendering.

    The model predicts a single total size; these training-set ratios turn it
    back into in/out byte and packet counts.
    """
    V = len(vocab.protocol)
    b_in = np.zeros(V)
    b_out = np.zeros(V)
    pk = np.zeros(V)
    n_in = np.zeros(V)
    n = np.zeros(V)
    for r in ds.records:
        k = vocab.protocol.encode(r.protocol)
        b_in[k] += r.bytes_in
        b_out[k] += r.bytes_out
        pk[k] += r.packets_in + r.packets_out
        n_in[k] += r.bytes_in > 0
        n[k] += 1
    total = b_in + b_out
    glob_frac = b_in.sum() / total.sum() if total.sum() else 0.5
    glob_bpp = total.sum() / pk.sum() if pk.sum() else 500.0
    frac = np.where(total > 0, b_in / np.maximum(total, 1), glob_frac)
    if ds.kind == "packet":
        glob = n_in.sum() / max(n.sum(), 1)
        frac = np.where(n > 0, n_in / np.maximum(n, 1), glob)
    bpp = np.where(pk > 0, total / np.maximum(pk, 1), glob_bpp)
    return {"in_fraction": [float(x) for x in frac], "bytes_per_packet": [float(max(x, 1.0)) for x in bpp]}


# -- public operations ---------------------------------------------------------------

def forward_loss(net: TempoNet, batch) -> TaskLosses:
    """Teacher-forced losses over a list of encoded windows (one lane each)."""
    if isinstance(batch, EncodedArrays):
        batch = [batch]
    if not batch:
        raise EmptyBatch("forward_loss needs at least one window")
    lanes = make_lanes(list(batch), len(batch))
    T = lanes.shape[1]
    losses, _, _, _ = net.loss(lanes.window(0, T))
    return losses


def teacher_forced_mixture(net: TempoNet, arrays: EncodedArrays, task: str = "inter_arrival"):
    """Per-event (log_w, log_s, mu) of a mixture head with the true history fed in."""
    if task not in net.num_tasks:
        raise ValueError(f"{task!r} is not a mixture task of this network")
    lanes = make_lanes([arrays], 1)
    win = lanes.window(0, lanes.shape[1])
    n = win.valid.shape[0]
    X = net.embed_rows(win.indices, win.log_values, win.y_t)
    hs, _, _ = net.encoder.run(X, *net.initial_carry(1))
    idx = {f: win.indices[f].reshape(n) for f in CATEGORICAL_FIELDS}
    C = net.context_rows(task, hs[:n].reshape(n, -1), win.y_t.reshape(n, -1),
                         win.y_prev.reshape(n, -1), idx)
    head = net.mixture_head(task)
    log_w, log_s, mu, _ = tpp.params_rows(C, head.V_w, head.b_w, head.V_s, head.b_s, head.V_mu, head.b_mu)
    return log_w, log_s, mu


def _check_finite(losses: TaskLosses, epoch, batch, log_path=None):
    vals = losses.as_dict()
    if all(math.isfinite(v) for v in vals.values()):
        return
    msg = f"non-finite loss at epoch {epoch}, batch {batch}: {vals}"
    if log_path is not None:
        with open(f"{log_path}.nonfinite.json", "w", encoding="utf-8") as fh:
            json.dump({"epoch": epoch, "batch": batch, "losses": {k: repr(v) for k, v in vals.items()}}, fh)
    raise NonFiniteLoss(msg, epoch=epoch, batch=batch, losses=vals)


def fit_network(net: TempoNet, arrays: EncodedArrays, cfg: TempoNetConfig, log_rows=None,
                log_path=None, callback=None):
    """Run TBPTT training in place on ``net``; returns per-epoch TaskLosses."""
    T = cfg.tbptt_window
    lanes = make_lanes(arrays, cfg.batch_size, T)
    B, L = lanes.shape
    opt = Adam(net.params, lr=cfg.learning_rate)
    n_windows = -(-L // T)
    total_steps = cfg.epochs * n_windows
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        carry = net.initial_carry(B)
        sums = {t: 0.0 for t in net.tasks}
        counts = {t: 0 for t in net.tasks}
        for j, a in enumerate(range(0, L, T)):
            win = lanes.window(a, min(a + T, L))
            losses, grads, carry, cnt = net.loss(win, carry, need_grad=True)
            _check_finite(losses, epoch, j, log_path)
            clip_gradients(grads, cfg.grad_clip)
            opt.lr = learning_rate_at(cfg, epoch * n_windows + j, total_steps)
            opt.step(net.params, grads)
            for t in net.tasks:
                sums[t] += losses.losses[t] * cnt[t]
                counts[t] += cnt[t]
        epoch_losses = TaskLosses({t: sums[t] / counts[t] if counts[t] else 0.0 for t in net.tasks})
        history.append(epoch_losses)
        wall = time.perf_counter() - t0
        log.info("epoch %d total %.5f (%.1fs)", epoch, epoch_losses.total, wall)
        if log_rows is not None:
            log_rows.append({"epoch": epoch, **epoch_losses.as_dict(), "wall_seconds": wall})
        if callback is not None:
            callback(epoch, epoch_losses)
    return history


def _train_stage(ds, cfg, vocab, arrays, stage, log_rows, log_path, rng):
    tasks = tasks_for(cfg.kind, stage)
    scalers = feature_scalers(arrays, tasks)
    net = TempoNet(cfg, vocab.sizes(), tasks, scalers, rng=rng)
    history = fit_network(net, arrays, cfg, log_rows, log_path)
    final = history[-1].as_dict() if history else {}
    aux = size_split_stats(ds, vocab) if "size" in tasks else {}
    meta = {
        "final_losses": final,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "n_events": len(ds),
        "train_start": float(ds.records[0].timestamp),
        "train_end": float(ds.records[-1].timestamp),
        "n_parameters": net.n_parameters,
    }
    return ModelCheckpoint(cfg, vocab, scalers, net.params, net.tasks, stage, aux, meta)


def _prepare(ds: TraceDataset, cfg: TempoNetConfig):
    if len(ds) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if ds.kind != cfg.kind:
        raise WrongKind(f"config kind {cfg.kind!r} but dataset kind {ds.kind!r}")
    vocab = build_vocabularies(ds, cfg.rare_threshold)
    return vocab, encode_arrays(ds, vocab)


def train(ds: TraceDataset, cfg: TempoNetConfig, log_rows=None, log_path=None) -> ModelCheckpoint:
    """Train a single network covering every task for ``cfg.kind``."""
    vocab, arrays = _prepare(ds, cfg)
    return _train_stage(ds, cfg, vocab, arrays, 0, log_rows, log_path,
                        np.random.default_rng(cfg.seed))


def train_two_stage(ds: TraceDataset, cfg: TempoNetConfig, log_rows=None, log_path=None):
    """Stage 1 learns timing, host pair and duration; stage 2 the remaining attributes.

    Each stage has its own encoder. Stage 2 sees the true host pair through
    its conditioning embeddings.
    """
    if cfg.kind != "flow":
        raise WrongKind("two-stage training is only defined for flow traces")
    vocab, arrays = _prepare(ds, cfg)
    rng1, rng2 = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    rows1 = [] if log_rows is not None else None
    ck1 = _train_stage(ds, cfg, vocab, arrays, 1, rows1, log_path, rng1)
    rows2 = [] if log_rows is not None else None
    ck2 = _train_stage(ds, cfg, vocab, arrays, 2, rows2, log_path, rng2)
    if log_rows is not None:
        log_rows.extend({"stage": 1, **r} for r in rows1)
        log_rows.extend({"stage": 2, **r} for r in rows2)
    return ck1, ck2


# -- gradient checking ------------------------------------------------------------

def _toy_dataset(rng, n, kind, vocab_size):
    from .ingest import TraceRecord

    ips = [f"10.0.0.{i}" for i in range(max(1, vocab_size - 1))]
    protos = ["TCP", "UDP", "ICMP", "IGMP"][:max(1, min(4, vocab_size - 1))]
    ports = list(range(1, max(2, vocab_size)))
    t = np.cumsum(rng.exponential(1.0, n)) + 1e5
    recs = []
    for i in range(n):
        b_in = int(rng.integers(1, 2000))
        b_out = int(rng.integers(0, 2000)) if kind == "flow" else 0
        recs.append(TraceRecord(float(t[i]), str(rng.choice(ips)), str(rng.choice(ips)),
                                int(rng.choice(ports)), int(rng.choice(ports)), str(rng.choice(protos)),
                                b_in, b_out, 1, int(b_out > 0),
                                float(rng.exponential(1.0)) if kind == "flow" else 0.0, kind))
    return TraceDataset(tuple(recs), kind)


def model_loss_and_grad(net: TempoNet, win: Lanes):
    losses, grads, _, _ = net.loss(win, need_grad=True)
    return losses.total, grads


def gradient_check(cfg: TempoNetConfig, trials: int = 200, seed: int = 0, n_events: int = 24,
                   step: float = 1e-5, loss_and_grad=model_loss_and_grad, stage: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Builds a small random trace, perturbs the freshly initialised parameters
    so no gradient is structurally zero, then probes ``trials`` random
    coordinates of the full parameter vector.
    """
    rng = np.random.default_rng(seed)
    vocab_size = max(2, min(5, max(cfg.embedding_dims.values()) + 3))
    ds = _toy_dataset(rng, n_events, cfg.kind, vocab_size)
    vocab = build_vocabularies(ds, rare_threshold=1)
    arrays = encode_arrays(ds, vocab)
    tasks = tasks_for(cfg.kind, stage)
    net = TempoNet(cfg, vocab.sizes(), tasks, feature_scalers(arrays, tasks), rng=rng)
    for p in net.params.values():
        p += rng.normal(0.0, 0.3, p.shape)
    lanes = make_lanes(arrays, 2, 1)
    win = lanes.window(0, lanes.shape[1])
    _, grads = loss_and_grad(net, win)

    names = list(net.params)
    sizes = np.array([net.params[k].size for k in names])
    flat = rng.choice(sizes.sum(), size=min(trials, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in flat:
        j = int(np.searchsorted(offsets, f, side="right") - 1)
        name, pos = names[j], int(f - offsets[j])
        p = net.params[name].reshape(-1)
        orig = p[pos]
        p[pos] = orig + step
        up = net.loss(win)[0].total
        p[pos] = orig - step
        down = net.loss(win)[0].total
        p[pos] = orig
        numeric = (up - down) / (2 * step)
        analytic = float(grads[name].reshape(-1)[pos])
        denom = max(abs(numeric), abs(analytic), 1e-6)
        err = abs(numeric - analytic) / denom
        if not math.isfinite(err):
            return math.inf
        worst = max(worst, err)
    return worst
