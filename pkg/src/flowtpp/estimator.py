"""scikit-learn style wrappers around encoding, training and generation.

``X`` is always a :class:`TraceDataset` (or a path to a canonical CSV);
there is no target, arrays are built internally.
"""
from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .errors import EmptyDataset, WrongKind
from .generator import GenerationRequest, generate
from .ingest import EPS_TAU, EncodingConfig, TraceDataset, build_vocabularies, encode_arrays, parse_trace
from .model import TempoNetConfig, forward_loss, train, train_two_stage


def check_trace(X, kind=None, min_records=1) -> TraceDataset:
    """Accept a TraceDataset or a CSV path; enforce kind and a minimum length."""
    if isinstance(X, (str, os.PathLike)):
        X = parse_trace(X, kind=kind or "flow")
    if not isinstance(X, TraceDataset):
        raise TypeError(f"expected a TraceDataset or a CSV path, got {type(X).__name__}")
    if kind is not None and X.kind != kind:
        raise WrongKind(f"expected a {kind} trace, got {X.kind}")
    if len(X) < min_records:
        raise EmptyDataset(f"need at least {min_records} records, got {len(X)}")
    return X


class TraceEncoder(TransformerMixin, BaseEstimator):
    """Vocabulary fitting and array encoding of a trace."""

    def __init__(self, rare_threshold=5, eps_tau=EPS_TAU, eps_duration=EPS_TAU):
        self.rare_threshold = rare_threshold
        self.eps_tau = eps_tau
        self.eps_duration = eps_duration

    def fit(self, X, y=None):
        X = check_trace(X)
        self.vocabularies_ = build_vocabularies(X, self.rare_threshold)
        self.vocab_sizes_ = self.vocabularies_.sizes()
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabularies_")
        return encode_arrays(check_trace(X), self.vocabularies_, EncodingConfig(self.eps_tau, self.eps_duration))


class TempoNetEstimator(BaseEstimator):
    """Fit a trace model, then ``sample`` synthetic traces from it.

    With ``stage_split=True`` two checkpoints are trained (timing and host
    pair, then attributes) and used together when sampling.
    """

    def __init__(self, K=8, H=64, embedding_dims=None, src_hidden=64, tbptt_window=128,
                 batch_size=4, learning_rate=1e-3, epochs=20, seed=0, kind="flow",
                 stage_split=False, rare_threshold=5, grad_clip=5.0,
                 lr_schedule="cosine", lr_floor=0.05):
        self.K = K
        self.H = H
        self.embedding_dims = embedding_dims
        self.src_hidden = src_hidden
        self.tbptt_window = tbptt_window
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.kind = kind
        self.stage_split = stage_split
        self.rare_threshold = rare_threshold
        self.grad_clip = grad_clip
        self.lr_schedule = lr_schedule
        self.lr_floor = lr_floor

    def _config(self) -> TempoNetConfig:
        p = self.get_params()
        if p["embedding_dims"] is None:
            p.pop("embedding_dims")
        return TempoNetConfig(**p)

    def fit(self, X, y=None):
        X = check_trace(X, self.kind, min_records=2)
        cfg = self._config()
        self.log_ = []
        if self.stage_split:
            self.checkpoints_ = list(train_two_stage(X, cfg, log_rows=self.log_))
        else:
            self.checkpoints_ = [train(X, cfg, log_rows=self.log_)]
        self.n_parameters_ = sum(c.metadata["n_parameters"] for c in self.checkpoints_)
        self.vocab_sizes_ = self.checkpoints_[0].vocabularies.sizes()
        return self

    def sample(self, n_events=None, duration=None, seed=0, start_timestamp=None,
               mode="stochastic", rare_policy="sentinel") -> TraceDataset:
        check_is_fitted(self, "checkpoints_")
        req = GenerationRequest(self.checkpoints_, n_events=n_events, duration=duration,
                                start_timestamp=start_timestamp, seed=seed, mode=mode,
                                rare_policy=rare_policy)
        return generate(req)

    def score_samples(self, X) -> dict:
        """Teacher-forced per-task mean NLL on ``X`` (lower is better)."""
        check_is_fitted(self, "checkpoints_")
        X = check_trace(X, self.kind, min_records=2)
        out = {}
        for ck in self.checkpoints_:
            arrays = encode_arrays(X, ck.vocabularies)
            net = ck.build()
            out.update(forward_loss(net, [arrays]).losses)
        return out

    def score(self, X, y=None) -> float:
        """Negative mean task NLL, so higher is better as sklearn expects."""
        return -float(np.mean(list(self.score_samples(X).values())))

    def save(self, path):
        check_is_fitted(self, "checkpoints_")
        path = os.fspath(path)
        if len(self.checkpoints_) == 1:
            checkpoint.save(self.checkpoints_[0], path)
            return [path]
        paths = [f"{path}.stage1", f"{path}.stage2"]
        for ck, p in zip(self.checkpoints_, paths):
            checkpoint.save(ck, p)
        return paths

    @classmethod
    def from_checkpoints(cls, *paths):
        cks = [checkpoint.load(p) for p in paths]
        cfg = cks[0].config.to_dict()
        est = cls(**{k: v for k, v in cfg.items() if k in cls().get_params()})
        est.stage_split = len(cks) == 2
        est.checkpoints_ = sorted(cks, key=lambda c: c.stage)
        est.n_parameters_ = sum(c.metadata.get("n_parameters", 0) for c in cks)
        est.vocab_sizes_ = cks[0].vocabularies.sizes()
        est.log_ = []
        return est

