"""Autoregressive trace sampling from trained checkpoints.

Each step samples the inter-arrival time from the history state and the
seasonal features of the previous event's clock, advances the clock, samples
the header fields in conditioning order, then feeds the finished event back
into the encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tpp
from .encoder import seasonal_rows
from .errors import CheckpointMismatch, HorizonTooLarge
from .heads import categorical_sample
from .ingest import (
    CATEGORICAL_FIELDS,
    EPS_TAU,
    PORT_FIELDS,
    RARE,
    TraceDataset,
    TraceRecord,
    encode_arrays,
)
from .model import MIXTURE_TASKS, ModelCheckpoint, make_lanes

FIELD_ORDER = ("src_ip", "dst_ip", "duration", "protocol", "dst_port", "src_port", "size")
DEFAULT_MAX_EVENTS = 10 ** 8


@dataclass
class GenerationRequest:
    checkpoints: list
    n_events: int | None = None
    duration: float | None = None
    start_timestamp: float | None = None
    seed: int = 0
    mode: str = "stochastic"
    rare_policy: str = "sentinel"  # or "resample"
    max_events: int = DEFAULT_MAX_EVENTS
    warmup: TraceDataset | None = None
    eps_tau: float = EPS_TAU

    def __post_init__(self):
        if isinstance(self.checkpoints, ModelCheckpoint):
            self.checkpoints = [self.checkpoints]
        if (self.n_events is None) == (self.duration is None):
            raise ValueError("set exactly one of n_events or duration")
        if self.n_events is not None and self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.mode not in ("stochastic", "argmax"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rare_policy not in ("sentinel", "resample"):
            raise ValueError(f"unknown rare_policy {self.rare_policy!r}")
        if self.n_events is not None and self.n_events > self.max_events:
            raise HorizonTooLarge(f"{self.n_events} events exceeds the cap of {self.max_events}")


class _Sampler:
    """Per-checkpoint sampling helpers operating on single-row arrays."""

    def __init__(self, ckpt: ModelCheckpoint, mode, rare_policy):
        self.ckpt = ckpt
        self.net = ckpt.build()
        self.vocab = ckpt.vocabularies
        self.mode = mode
        self.rare_policy = rare_policy
        H = ckpt.config.H
        self.h = np.zeros((1, H))
        self.c = np.zeros((1, H))

    def context(self, task, y_t, y_prev, idx):
        return self.net.context_rows(task, self.h, y_t, y_prev, idx)

    def sample_log_value(self, task, C, rng):
        head = self.net.mixture_head(task)
        log_w, log_s, mu, _ = tpp.params_rows(C, head.V_w, head.b_w, head.V_s, head.b_s,
                                              head.V_mu, head.b_mu)
        lv, _ = tpp.sample_rows(log_w, log_s, mu, rng)
        return float(lv[0])

    def sample_index(self, task, C, rng):
        lg = self.net.categorical_head(task).forward_rows(C)[0][0]
        if self.rare_policy == "resample" and lg.shape[0] > 1:
            lg = lg.copy()
            lg[-1] = -np.inf
        return categorical_sample(lg, rng, self.mode)

    def advance(self, idx, log_values, y_t):
        x = self.net.embed_rows(idx, log_values, y_t)
        self.h, self.c, _ = self.net.encoder._cell(self.h, self.c, x)

    def warm_up(self, ds: TraceDataset):
        arrays = encode_arrays(ds, self.vocab)
        lanes = make_lanes([arrays], 1)
        win = lanes.window(0, lanes.shape[1])
        X = self.net.embed_rows(win.indices, win.log_values, win.y_t)
        hs, c_last, _ = self.net.encoder.run(X, self.h, self.c)
        self.h, self.c = hs[-1], c_last

    def sample_fields(self, tasks, t, rng, idx, values):
        """Sample ``tasks`` in conditioning order at clock ``t``; fills ``idx``/``values``."""
        y_t = seasonal_rows(t)
        for task in FIELD_ORDER:
            if task not in tasks:
                continue
            C = self.context(task, y_t, None, idx)
            if task in MIXTURE_TASKS:
                values[task] = self.sample_log_value(task, C, rng)
            else:
                idx[task] = np.array([self.sample_index(task, C, rng)])
        return y_t


def _decode(vocab, name, index, rng):
    fv = vocab[name]
    token = fv.decode(int(index))
    if token == RARE and name in PORT_FIELDS:
        # ports are integers; draw a concrete value from the tail seen in training
        if fv.rare_counts:
            values = sorted(fv.rare_counts, key=str)
            p = np.array([fv.rare_counts[v] for v in values], dtype=float)
            token = values[int(np.searchsorted(np.cumsum(p) / p.sum(), rng.random(), side="right"))
                           if len(values) > 1 else 0]
        else:
            token = 0
    return token


def _render(kind, t, tokens, size, duration, aux, proto_idx, rng) -> TraceRecord:
    frac = aux.get("in_fraction", [0.5])[proto_idx] if aux else 0.5
    bpp = aux.get("bytes_per_packet", [500.0])[proto_idx] if aux else 500.0
    if kind == "packet":
        size = max(size, 1)
        inbound = rng.random() < frac
        b_in, b_out = (size, 0) if inbound else (0, size)
        p_in, p_out = int(inbound), int(not inbound)
        duration = 0.0
    else:
        b_in = int(round(size * frac))
        b_out = size - b_in
        p_in = math.ceil(b_in / bpp) if b_in > 0 else 0
        p_out = math.ceil(b_out / bpp) if b_out > 0 else 0
    return TraceRecord(t, str(tokens["src_ip"]), str(tokens["dst_ip"]), int(tokens["src_port"]),
                       int(tokens["dst_port"]), str(tokens["protocol"]), b_in, b_out, p_in, p_out,
                       duration, kind)


def _size_from_log(lv):
    return max(int(round(math.exp(min(lv, 700.0)))) - 1, 0)


def _duration_from_log(lv, eps):
    return round(max(math.exp(min(lv, 700.0)) - eps, 0.0), 6)


def _check(req: GenerationRequest):
    stages = sorted(c.stage for c in req.checkpoints)
    kinds = {c.config.kind for c in req.checkpoints}
    if len(kinds) != 1:
        raise CheckpointMismatch("checkpoints disagree on trace kind")
    if stages not in ([0], [1, 2]):
        raise CheckpointMismatch(f"need one full checkpoint or a stage-1/stage-2 pair, got stages {stages}")
    if stages == [1, 2]:
        a, b = sorted(req.checkpoints, key=lambda c: c.stage)
        if a.vocabularies.to_dict() != b.vocabularies.to_dict():
            raise CheckpointMismatch("stage checkpoints were trained on different vocabularies")


def _start(req, ckpt):
    if req.start_timestamp is not None:
        return float(req.start_timestamp)
    if req.warmup is not None and len(req.warmup):
        return float(req.warmup.records[-1].timestamp)
    return float(ckpt.metadata.get("train_end", 0.0))


def _rollout(sampler: _Sampler, req: GenerationRequest, rng):
    """Clock and sampled fields for every event of the horizon."""
    ckpt = sampler.ckpt
    start = _start(req, ckpt)
    if req.warmup is not None and len(req.warmup):
        sampler.warm_up(req.warmup)
    t_us = int(round(start * 1e6))
    end_us = None if req.duration is None else int(math.floor((start + req.duration) * 1e6))
    t_prev = start
    tasks = set(ckpt.tasks)
    events = []
    while True:
        if req.n_events is not None and len(events) >= req.n_events:
            break
        if len(events) >= req.max_events:
            raise HorizonTooLarge(f"duration horizon produced more than {req.max_events} events")
        C = sampler.context("inter_arrival", None, seasonal_rows(t_prev), {})
        tau = math.exp(min(sampler.sample_log_value("inter_arrival", C, rng), 700.0))
        dt_us = max(int(round(max(tau, req.eps_tau) * 1e6)), 1)
        if end_us is not None and t_us + dt_us > end_us:
            break
        t_us += dt_us
        t = t_us / 1e6
        idx, values = {}, {"inter_arrival": math.log(dt_us / 1e6)}
        y_t = sampler.sample_fields(tasks, t, rng, idx, values)
        if "duration" in values:
            d = _duration_from_log(values["duration"], EPS_TAU)
            values["duration"] = math.log(d + EPS_TAU)
            values["_duration"] = d
        if "size" in values:
            s = _size_from_log(values["size"])
            values["size"] = math.log(s + 1.0)
            values["_size"] = s
        sampler.advance(idx, {k: np.array([v]) for k, v in values.items() if k in MIXTURE_TASKS}, y_t)
        events.append((t, idx, values))
        t_prev = t
    return events


def _fill(sampler: _Sampler, events, rng):
    """Sample the stage tasks for each (t, idx, values) skeleton event in place."""
    tasks = set(sampler.ckpt.tasks)
    for t, idx, values in events:
        y_t = sampler.sample_fields(tasks, t, rng, idx, values)
        if "size" in values:
            s = _size_from_log(values["size"])
            values["size"] = math.log(s + 1.0)
            values["_size"] = s
        sampler.advance(idx, {k: np.array([values[k]]) for k in MIXTURE_TASKS if k in tasks}, y_t)


def _to_dataset(events, ckpt_attrs: ModelCheckpoint, kind, rng, provenance) -> TraceDataset:
    vocab = ckpt_attrs.vocabularies
    records = []
    for t, idx, values in events:
        tokens = {f: _decode(vocab, f, idx[f][0], rng) if f in idx else RARE for f in CATEGORICAL_FIELDS}
        for f in PORT_FIELDS:
            if f not in idx:
                tokens[f] = 0
        proto_idx = int(idx["protocol"][0]) if "protocol" in idx else 0
        records.append(_render(kind, t, tokens, values.get("_size", 0), values.get("_duration", 0.0),
                               ckpt_attrs.aux, proto_idx, rng))
    return TraceDataset(tuple(records), kind, provenance)


def generate(req: GenerationRequest) -> TraceDataset:
    """Sample a trace from one full checkpoint (or dispatch to the two-stage path)."""
    _check(req)
    if len(req.checkpoints) == 2:
        return generate_two_stage(req)
    ckpt = req.checkpoints[0]
    rng = np.random.default_rng(req.seed)
    sampler = _Sampler(ckpt, req.mode, req.rare_policy)
    events = _rollout(sampler, req, rng)
    return _to_dataset(events, ckpt, ckpt.config.kind, rng, f"generated(seed={req.seed})")


def generate_skeleton(req: GenerationRequest, stage1: ModelCheckpoint):
    rng = np.random.default_rng(np.random.SeedSequence(req.seed).spawn(2)[0])
    return _rollout(_Sampler(stage1, req.mode, req.rare_policy), req, rng)


def fill_attributes(skeleton, stage2: ModelCheckpoint, seed, mode="stochastic",
                    rare_policy="sentinel", seed_is_stage_seed=False) -> TraceDataset:
    """Stage-2 pass: add protocol, ports and bytes to a stage-1 skeleton.

    ``seed`` is the request seed (the stage-2 stream is derived from it the
    same way :func:`generate_two_stage` does) unless ``seed_is_stage_seed``.
    """
    events = [(t, dict(idx), dict(values)) for t, idx, values in skeleton]
    ss = seed if seed_is_stage_seed else np.random.SeedSequence(seed).spawn(2)[1]
    rng = np.random.default_rng(ss)
    _fill(_Sampler(stage2, mode, rare_policy), events, rng)
    return _to_dataset(events, stage2, "flow", rng, f"generated(seed={seed})")


def generate_two_stage(req: GenerationRequest) -> TraceDataset:
    """Stage 1 emits (t, src, dst, duration); stage 2 fills the rest per event."""
    _check(req)
    stage1, stage2 = sorted(req.checkpoints, key=lambda c: c.stage)
    if [stage1.stage, stage2.stage] != [1, 2]:
        raise CheckpointMismatch("two-stage generation needs stage-1 and stage-2 checkpoints")
    skeleton = generate_skeleton(req, stage1)
    return fill_attributes(skeleton, stage2, req.seed, req.mode, req.rare_policy)


def generate_streams(req: GenerationRequest, n_streams: int, merge: bool = False):
    """Independent rollouts with seeds spawned from ``req.seed``.

    Returns a list of datasets, or one re-sorted dataset when ``merge`` is set
    (interleaving changes inter-arrival statistics, hence opt-in).
    """
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(req.seed).spawn(n_streams)]
    outs = []
    for s in seeds:
        sub = GenerationRequest(req.checkpoints, req.n_events, req.duration, req.start_timestamp, s,
                                req.mode, req.rare_policy, req.max_events, req.warmup, req.eps_tau)
        outs.append(generate(sub))
    if not merge:
        return outs
    records = sorted((r for ds in outs for r in ds.records), key=lambda r: r.timestamp)
    return TraceDataset(tuple(records), outs[0].kind, f"merged({n_streams} streams)")
