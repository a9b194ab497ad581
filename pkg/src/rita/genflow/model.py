"""Score network over trajectory windows and the egocentric scorer.

Both share the per-vehicle 1-D conv encoder (channel widths 32/64/128 with
stride-2 downsampling of the 128-step axis). The score network mirrors the
encoder with transposed convs and additive skip connections and applies one
single-head self-attention layer across the 16 vehicle slots at the
bottleneck, which makes it equivariant to permutations of the social slots.
The scorer attends only between the ego slot and the others and reduces to a
scalar head.
"""

from __future__ import annotations

import contextlib
import json
import math
from pathlib import Path

import numpy as np

from ..dataio import WINDOW_CHANNELS, WINDOW_STEPS, WINDOW_VEHICLES
from ..numcore import (
    Tensor,
    batched_matmul,
    concat,
    conv1d,
    conv1d_transpose,
    dense,
    load_weights,
    save_weights,
    softmax,
)
from .schedule import GenFlowError, NoiseSchedule

__all__ = ["DiffusionModel", "Scorer", "no_grad", "level_embedding"]

ENC_CHANNELS = (32, 64, 128)
KERNEL = 4
EMB_DIM = 32
BOTTLENECK = ENC_CHANNELS[-1]


@contextlib.contextmanager
def no_grad(params: list[Tensor]):
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def level_embedding(levels: np.ndarray, n_levels: int) -> np.ndarray:
    """Sinusoidal features of the noise level, shape (B, EMB_DIM)."""
    half = EMB_DIM // 2
    freqs = np.exp(-math.log(10_000.0) * np.arange(half) / half)
    angles = np.asarray(levels, dtype=np.float64)[:, None] / n_levels * freqs * n_levels
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class _Encoder:
    """Shared per-vehicle conv stack; owns its parameter slice."""

    def __init__(self, rng: np.random.Generator):
        c = (WINDOW_CHANNELS,) + ENC_CHANNELS
        self.w = [
            _glorot(rng, (c[i + 1], c[i], KERNEL), c[i] * KERNEL, c[i + 1])
            for i in range(3)
        ]
        self.b = [_zeros(c[i + 1]) for i in range(3)]

    @property
    def params(self) -> list[Tensor]:
        return [*self.w, *self.b]

    def __call__(self, x: Tensor):
        """x: (B*V, channels, steps) -> list of three stage outputs."""
        outs = []
        h = x
        for w, b in zip(self.w, self.b):
            h = (conv1d(h, w, stride=2, pad=1) + b.reshape(1, -1, 1)).silu()
            outs.append(h)
        return outs


def _flatten_window(x) -> Tensor:
    """(B, V, T, C) array/Tensor -> (B*V, C, T) Tensor."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    b = t.shape[0]
    return t.transpose(0, 1, 3, 2).reshape(b * WINDOW_VEHICLES, WINDOW_CHANNELS, WINDOW_STEPS)


class DiffusionModel:
    """s_theta(x, i): the score of the noised window distribution.

    Internally predicts the injected noise and rescales by -1/sqrt(1-ab_i),
    which keeps the regression target unit-scale at every level.
    """

    def __init__(self, schedule: NoiseSchedule, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.schedule = schedule
        self.encoder = _Encoder(rng)
        d = BOTTLENECK
        self.emb_w1 = _glorot(rng, (EMB_DIM, d), EMB_DIM, d)
        self.emb_b1 = _zeros(d)
        self.emb_w2 = _glorot(rng, (d, d), d, d)
        self.emb_b2 = _zeros(d)
        self.wq = _glorot(rng, (d, d), d, d)
        self.wk = _glorot(rng, (d, d), d, d)
        self.wv = _glorot(rng, (d, d), d, d)
        self.wo = _glorot(rng, (d, d), d, d)
        c = (WINDOW_CHANNELS,) + ENC_CHANNELS
        self.dec_w = [
            _glorot(rng, (c[i + 1], c[i], KERNEL), c[i + 1] * KERNEL, c[i])
            for i in (2, 1, 0)
        ]
        self.dec_b = [_zeros(c[i]) for i in (2, 1, 0)]

    @property
    def params(self) -> list[Tensor]:
        return [
            *self.encoder.params,
            self.emb_w1,
            self.emb_b1,
            self.emb_w2,
            self.emb_b2,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            *self.dec_w,
            *self.dec_b,
        ]

    def _attend(self, h: Tensor, batch: int) -> Tensor:
        """Self-attention across vehicle slots at each bottleneck position."""
        d = BOTTLENECK
        t_len = h.shape[2]
        tokens = h.reshape(batch, WINDOW_VEHICLES, d, t_len).transpose(0, 3, 1, 2)
        q, k, v = dense(tokens, self.wq), dense(tokens, self.wk), dense(tokens, self.wv)
        att = softmax(batched_matmul(q, k.transpose(0, 1, 3, 2)) * (d**-0.5))
        ctx = dense(batched_matmul(att, v), self.wo)
        out = tokens + ctx
        return out.transpose(0, 2, 3, 1).reshape(batch * WINDOW_VEHICLES, d, t_len)

    def predict_noise(self, x, levels: np.ndarray) -> Tensor:
        """eps-prediction network; x is (B, V, T, C), levels (B,) in 1..N."""
        batch = x.shape[0]
        e1, e2, e3 = self.encoder(_flatten_window(x))
        emb = Tensor(level_embedding(levels, self.schedule.n_levels))
        emb = (dense(emb, self.emb_w1) + self.emb_b1).silu()
        emb = dense(emb, self.emb_w2) + self.emb_b2  # (B, d)
        t_len = e3.shape[2]
        h = e3.reshape(batch, WINDOW_VEHICLES, BOTTLENECK, t_len) + emb.reshape(
            batch, 1, BOTTLENECK, 1
        )
        h = self._attend(
            h.reshape(batch * WINDOW_VEHICLES, BOTTLENECK, t_len), batch
        )
        d3 = (conv1d_transpose(h, self.dec_w[0], stride=2, pad=1)
              + self.dec_b[0].reshape(1, -1, 1)).silu() + e2
        d2 = (conv1d_transpose(d3, self.dec_w[1], stride=2, pad=1)
              + self.dec_b[1].reshape(1, -1, 1)).silu() + e1
        eps = conv1d_transpose(d2, self.dec_w[2], stride=2, pad=1) + self.dec_b[
            2
        ].reshape(1, -1, 1)
        return eps.reshape(batch, WINDOW_VEHICLES, WINDOW_CHANNELS, WINDOW_STEPS).transpose(
            0, 1, 3, 2
        )

    def forward(self, x, levels) -> Tensor:
        levels = np.atleast_1d(np.asarray(levels, dtype=np.int64))
        ab = self.schedule.alpha_bar[levels - 1]
        scale = np.sqrt(np.maximum(1.0 - ab, 1e-12)).reshape(-1, 1, 1, 1)
        return self.predict_noise(x, levels) * Tensor(-1.0 / scale)

    def score(self, x: np.ndarray, levels) -> np.ndarray:
        """Inference-only score evaluation on raw arrays."""
        with no_grad(self.params):
            out = self.forward(x, levels).data
        if not np.all(np.isfinite(out)):
            raise GenFlowError("non-finite score network output")
        return out

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        save_weights(path, [p.data.reshape(p.data.shape[0], -1) for p in self.params])
        meta = {
            "kind": "diffusion",
            "shapes": [list(p.shape) for p in self.params],
            "n_levels": int(self.schedule.n_levels),
            "beta": self.schedule.beta.tolist(),
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path) -> "DiffusionModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        beta = np.asarray(meta["beta"], dtype=np.float64)
        schedule = NoiseSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))
        model = cls(schedule)
        arrays = load_weights(path)
        if len(arrays) != len(model.params):
            raise GenFlowError("weight file does not match the architecture")
        for p, arr, shape in zip(model.params, arrays, meta["shapes"]):
            p.data = arr.reshape(shape)
        return model


class Scorer:
    """Differentiable scalar window scorer with ego-restricted attention."""

    def __init__(self, seed: int = 0, metric_tag: str = "stability"):
        rng = np.random.default_rng(seed)
        self.metric_tag = metric_tag
        self.encoder = _Encoder(rng)
        d = BOTTLENECK
        self.wq = _glorot(rng, (d, d), d, d)
        self.wk = _glorot(rng, (d, d), d, d)
        self.wv = _glorot(rng, (d, d), d, d)
        self.head_w1 = _glorot(rng, (2 * d, d), 2 * d, d)
        self.head_b1 = _zeros(d)
        self.head_w2 = _glorot(rng, (d, 1), d, 1)
        self.head_b2 = _zeros(1)
        self.label_mean = 0.0
        self.label_std = 1.0

    @property
    def params(self) -> list[Tensor]:
        return [
            *self.encoder.params,
            self.wq,
            self.wk,
            self.wv,
            self.head_w1,
            self.head_b1,
            self.head_w2,
            self.head_b2,
        ]

    def forward(self, x) -> Tensor:
        """x: (B, V, T, C) -> (B,) predicted metric (standardized units)."""
        batch = x.shape[0]
        _, _, e3 = self.encoder(_flatten_window(x))
        t_len = e3.shape[2]
        feats = e3.reshape(batch, WINDOW_VEHICLES, BOTTLENECK, t_len).mean(axis=3)
        ego = feats[:, 0:1, :]
        others = feats[:, 1:, :]
        q = dense(ego, self.wq)
        k = dense(others, self.wk)
        v = dense(others, self.wv)
        att = softmax(batched_matmul(q, k.transpose(0, 2, 1)) * (BOTTLENECK**-0.5))
        ctx = batched_matmul(att, v)
        h = concat([ego, ctx], axis=2).reshape(batch, 2 * BOTTLENECK)
        h = (dense(h, self.head_w1) + self.head_b1).silu()
        return (dense(h, self.head_w2) + self.head_b2).reshape(batch)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with no_grad(self.params):
            out = self.forward(x).data
        return out * self.label_std + self.label_mean

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the (standardized) score with respect to the window."""
        with no_grad(self.params):
            leaf = Tensor(x, requires_grad=True)
            self.forward(leaf).sum().backward()
        g = leaf.grad
        if g is None or not np.all(np.isfinite(g)):
            raise GenFlowError("non-finite scorer gradient")
        return g

    def save(self, path) -> None:
        path = Path(path)
        save_weights(path, [p.data.reshape(p.data.shape[0], -1) for p in self.params])
        meta = {
            "kind": "scorer",
            "metric_tag": self.metric_tag,
            "shapes": [list(p.shape) for p in self.params],
            "label_mean": self.label_mean,
            "label_std": self.label_std,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path) -> "Scorer":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        scorer = cls(metric_tag=meta["metric_tag"])
        arrays = load_weights(path)
        if len(arrays) != len(scorer.params):
            raise GenFlowError("weight file does not match the architecture")
        for p, arr, shape in zip(scorer.params, arrays, meta["shapes"]):
            p.data = arr.reshape(shape)
        scorer.label_mean = float(meta["label_mean"])
        scorer.label_std = float(meta["label_std"])
        return scorer
