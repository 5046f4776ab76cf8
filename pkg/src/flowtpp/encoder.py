"""History encoder: single-layer LSTM, seasonal metadata and event embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange
from .ingest import day_and_seconds, _EPOCH_WEEKDAY

SEASONAL_DIM = 11  # sin/cos hour, sin/cos weekday, weekday one-hot


@dataclass(frozen=True)
class HistoryState:
    hidden: np.ndarray
    cell: np.ndarray

    @property
    def H(self):
        return self.hidden.shape[-1]


def init_state(H: int) -> HistoryState:
    if H < 1:
        raise ValueError(f"hidden dimension must be >= 1, got {H}")
    return HistoryState(np.zeros(H), np.zeros(H))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTM:
    """Gated recurrence with gate order (input, forget, cell, output).

    ``W`` has shape (4H, I + H) acting on ``[x, h]``; ``b`` has shape (4H,).
    The arrays are used by reference, so an optimizer updating them in place
    is seen by the encoder.
    """

    def __init__(self, W, b):
        self.W = W
        self.b = b

    @property
    def H(self):
        return self.W.shape[0] // 4

    @property
    def input_dim(self):
        return self.W.shape[1] - self.H

    def step(self, state: HistoryState, x) -> HistoryState:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionMismatch(f"event vector has shape {x.shape}, expected ({self.input_dim},)")
        h, c = self._cell(state.hidden[None, :], state.cell[None, :], x[None, :])[:2]
        return HistoryState(h[0], c[0])

    def _cell(self, h, c, x):
        H = self.H
        a = np.concatenate([x, h], axis=1) @ self.W.T + self.b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        return o * tc, c_new, (i, f, g, o, tc)

    def run(self, X, h0, c0):
        """Consume ``X`` (T, B, I) from state (h0, c0).

        Returns ``hs`` of shape (T + 1, B, H) where ``hs[k]`` is the state
        before event k, the final cell state, and a cache for :meth:`backward`.
        """
        T = X.shape[0]
        hs = np.empty((T + 1,) + h0.shape)
        cs = np.empty_like(hs)
        hs[0], cs[0] = h0, c0
        gates = []
        for k in range(T):
            hs[k + 1], cs[k + 1], gk = self._cell(hs[k], cs[k], X[k])
            gates.append(gk)
        return hs, cs[T], (X, hs, cs, gates)

    def backward(self, cache, dhs):
        """Back-propagate ``dhs`` (gradients on hs[0..T-1]) through the window.

        The incoming state hs[0] is treated as a constant (truncated BPTT).
        Returns (dW, db, dX).
        """
        X, hs, cs, gates = cache
        T, B, I = X.shape
        H = self.H
        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        dX = np.zeros_like(X)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for s in range(T - 2, -1, -1):
            i, f, g, o, tc = gates[s]
            dh = dhs[s + 1] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * cs[s] * f * (1.0 - f),
                                 dc * i * (1.0 - g * g),
                                 do * o * (1.0 - o)], axis=1)
            z = np.concatenate([X[s], hs[s]], axis=1)
            dW += da.T @ z
            db += da.sum(axis=0)
            dz = da @ self.W
            dX[s] = dz[:, :I]
            dh_next = dz[:, I:]
            dc_next = dc * f
        return dW, db, dX


def step(lstm: LSTM, state: HistoryState, event) -> HistoryState:
    return lstm.step(state, event)


def seasonal_rows(t) -> np.ndarray:
    """Seasonal features for each timestamp in ``t`` (shape (N, 11))."""
    day, sec = day_and_seconds(np.atleast_1d(t))
    wd = (day + _EPOCH_WEEKDAY) % 7
    hour_phase = 2.0 * np.pi * sec / 86400.0
    week_phase = 2.0 * np.pi * wd / 7.0
    out = np.zeros((len(sec), SEASONAL_DIM))
    out[:, 0] = np.sin(hour_phase)
    out[:, 1] = np.cos(hour_phase)
    out[:, 2] = np.sin(week_phase)
    out[:, 3] = np.cos(week_phase)
    out[np.arange(len(sec)), 4 + wd] = 1.0
    return out


def metadata_vector(t, extras=()) -> np.ndarray:
    """[sin, cos of hour-of-day phase, sin, cos of weekday phase, weekday one-hot, *extras]."""
    if t < 0:
        raise ValueError("timestamp must be non-negative")
    parts = [seasonal_rows(t)[0]]
    parts.extend(np.asarray(e, dtype=float).ravel() for e in extras)
    return np.concatenate(parts)


# numeric encoder inputs and the EncodedEvent attribute each one reads
NUMERIC_SOURCES = {"inter_arrival": "inter_arrival", "size": "log_size", "duration": "log_duration"}


def embed_event(ev, tables: dict, scalers: dict) -> np.ndarray:
    """Encoder input for one event.

    ``tables`` maps categorical field -> embedding matrix (rows = vocabulary);
    ``scalers`` maps numeric field -> (mean, std) of its log value. Insertion
    order of both dicts fixes the layout, followed by the seasonal features.
    """
    parts = []
    for name, table in tables.items():
        idx = getattr(ev, name)
        if not 0 <= idx < table.shape[0]:
            raise IndexOutOfRange(f"{name} index {idx} outside table of {table.shape[0]} rows")
        parts.append(table[idx])
    for name, (mean, std) in scalers.items():
        value = getattr(ev, NUMERIC_SOURCES[name])
        if name == "inter_arrival":
            value = np.log(value)
        parts.append(np.array([(value - mean) / std]))
    parts.append(np.asarray(ev.seasonal, dtype=float)[:SEASONAL_DIM])
    return np.concatenate(parts)
