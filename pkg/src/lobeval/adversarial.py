"""Adversarial real-vs-generated discrimination on book-state deltas.

Book snapshots are encoded step-by-step as (mid change in ticks, signed
relative level of the dominant size change, size change), one triple per
consecutive snapshot pair. A small binary classifier is trained on fixed
length windows of these triples; its held-out AUC and the divergence of
its logit distributions act as a worst-case, trainable score.

The default architecture is a temporal convolution over the three input
channels followed by attention-weighted pooling and a linear head. It is
implemented directly in numpy, including the backward pass and the Adam
update, so training is dependency-free and bit-reproducible from its
seed. A simpler pooled-statistics + logistic-regression architecture is
available as a fallback for tiny datasets.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import TrainingError
from .lobster import BookArray

_MAGIC = b"LOBADV01"
_VERSION = 1


@dataclass(frozen=True)
class DiscriminatorConfig:
    window: int = 100
    conv_width: int = 5
    n_filters: int = 16
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    test_fraction: float = 0.2
    seed: int = 0
    architecture: str = "conv_attention"  # or "pooled"

    def as_dict(self) -> dict:
        return {
            "window": self.window, "conv_width": self.conv_width,
            "n_filters": self.n_filters,
            "learning_rate": self.learning_rate, "epochs": self.epochs,
            "batch_size": self.batch_size,
            "test_fraction": self.test_fraction, "seed": self.seed,
            "architecture": self.architecture,
        }


@dataclass
class EncodeResult:
    steps: np.ndarray  # (T-1, 3): mid_change, rel_level, qty_change
    multi_changes: int = 0
    nan_mid_steps: int = 0

    def __len__(self) -> int:
        return len(self.steps)


def encode(books: BookArray, tick: int) -> EncodeResult:
    """Delta-encode consecutive snapshots.

    Each step reports the mid move in ticks and the dominant single
    (price, size) change: its signed book level (ask positive, bid
    negative, located in the post-change book, or the pre-change book for
    vanished prices) and the signed size change. Steps with several
    changed prices keep only the largest absolute size change and bump
    ``multi_changes``. Steps with no visible change encode (0, 0, 0).
    """
    data = books.data
    t = len(data)
    if t < 2:
        raise ValueError("need at least 2 snapshots to encode")
    n = books.n_levels
    out = np.zeros((t - 1, 3))
    mids = books.mid()
    dmid = (mids[1:] - mids[:-1]) / tick
    nan_steps = int(np.isnan(dmid).sum())
    out[:, 0] = np.where(np.isnan(dmid), 0.0, dmid)

    ask_cols = [(4 * i, 4 * i + 1) for i in range(n)]
    bid_cols = [(4 * i + 2, 4 * i + 3) for i in range(n)]
    changed_rows = np.nonzero((data[1:] != data[:-1]).any(axis=1))[0]
    ask_changed = (data[1:][:, [c for pair in ask_cols for c in pair]]
                   != data[:-1][:, [c for pair in ask_cols for c in pair]]
                   ).any(axis=1)
    bid_changed = (data[1:][:, [c for pair in bid_cols for c in pair]]
                   != data[:-1][:, [c for pair in bid_cols for c in pair]]
                   ).any(axis=1)

    multi = 0
    for r in changed_rows:
        r0 = data[r]
        r1 = data[r + 1]
        candidates = []  # (|dq|, -|rel|, side_pref, rel_level, dq)
        for is_ask, cols, flag in ((True, ask_cols, ask_changed[r]),
                                   (False, bid_cols, bid_changed[r])):
            if not flag:
                continue
            old_levels = {}
            new_levels = {}
            for lvl, (pc, sc) in enumerate(cols, start=1):
                if r0[sc] > 0:
                    old_levels[r0[pc]] = (r0[sc], lvl)
                if r1[sc] > 0:
                    new_levels[r1[pc]] = (r1[sc], lvl)
            for price in old_levels.keys() | new_levels.keys():
                old_sz = old_levels.get(price, (0, None))[0]
                new_sz, new_lvl = new_levels.get(price, (0, None))
                dq = int(new_sz) - int(old_sz)
                if dq == 0:
                    continue
                lvl = new_lvl if new_lvl is not None \
                    else old_levels[price][1]
                rel = lvl if is_ask else -lvl
                candidates.append((abs(dq), -abs(rel), 1 if is_ask else 0,
                                   rel, dq))
        if not candidates:
            continue
        if len(candidates) > 1:
            multi += 1
        candidates.sort(reverse=True)
        _, _, _, rel, dq = candidates[0]
        out[r, 1] = rel
        out[r, 2] = dq
    return EncodeResult(steps=out, multi_changes=multi,
                        nan_mid_steps=nan_steps)


def slice_windows(encoding: EncodeResult, window: int) -> list:
    """Cut one long encoding into non-overlapping full windows.

    The tail shorter than ``window`` is dropped so every window carries
    the same amount of signal; an encoding shorter than one window yields
    nothing.
    """
    steps = encoding.steps if isinstance(encoding, EncodeResult) \
        else np.asarray(encoding)
    return [steps[k:k + window] for k in
            range(0, len(steps) - window + 1, window)]


def make_windows(encodings: Sequence[EncodeResult], window: int) -> np.ndarray:
    """Stack encodings into (S, window, 3): pad short with zero steps,
    truncate long ones to their first ``window`` steps."""
    s = len(encodings)
    x = np.zeros((s, window, 3))
    for i, enc in enumerate(encodings):
        steps = enc.steps if isinstance(enc, EncodeResult) else np.asarray(enc)
        k = min(len(steps), window)
        x[i, :k] = steps[:k]
    return x


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_with_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y*z, stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


class Discriminator:
    """Numpy classifier over delta-step windows.

    ``params`` maps tensor names to arrays; ``channel_mean``/``std`` hold
    the training-set standardization applied before every forward pass.
    """

    def __init__(self, config: DiscriminatorConfig, params: dict,
                 channel_mean: np.ndarray, channel_std: np.ndarray):
        self.config = config
        self.params = params
        self.channel_mean = np.asarray(channel_mean, dtype=np.float64)
        self.channel_std = np.asarray(channel_std, dtype=np.float64)

    @classmethod
    def initialize(cls, config: DiscriminatorConfig,
                   rng: np.random.Generator) -> "Discriminator":
        c = 3
        if config.architecture == "conv_attention":
            f, w = config.n_filters, config.conv_width
            params = {
                "conv_w": rng.normal(0.0, np.sqrt(2.0 / (c * w)), (f, c, w)),
                "conv_b": np.zeros(f),
                "att_u": rng.normal(0.0, 1.0 / np.sqrt(f), f),
                "att_b": np.zeros(1),
                # near-zero head so an untrained model scores ~ln 2 loss
                "out_w": rng.normal(0.0, 1e-2, f),
                "out_b": np.zeros(1),
            }
        elif config.architecture == "pooled":
            params = {
                "out_w": rng.normal(0.0, 1e-2, 4 * c),
                "out_b": np.zeros(1),
            }
        else:
            raise ValueError(f"unknown architecture {config.architecture!r}")
        return cls(config, params,
                   channel_mean=np.zeros(c), channel_std=np.ones(c))

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.channel_mean) / self.channel_std

    def _pooled_features(self, xs: np.ndarray) -> np.ndarray:
        return np.concatenate([xs.mean(axis=1), xs.std(axis=1),
                               xs.min(axis=1), xs.max(axis=1)], axis=1)

    def _forward(self, x: np.ndarray, need_cache: bool = False):
        xs = self._standardize(x)
        p = self.params
        if self.config.architecture == "pooled":
            feats = self._pooled_features(xs)
            z = feats @ p["out_w"] + p["out_b"][0]
            return (z, {"feats": feats}) if need_cache else (z, None)
        w = self.config.conv_width
        left = (w - 1) // 2
        xp = np.pad(xs, ((0, 0), (left, w - 1 - left), (0, 0)))
        win = sliding_window_view(xp, w, axis=1)  # (B, T, C, w)
        h_pre = np.einsum("btcw,fcw->btf", win, p["conv_w"],
                          optimize=True) + p["conv_b"]
        h = np.maximum(h_pre, 0.0)
        s = h @ p["att_u"] + p["att_b"][0]
        s_shift = s - s.max(axis=1, keepdims=True)
        es = np.exp(s_shift)
        alpha = es / es.sum(axis=1, keepdims=True)
        g = np.einsum("bt,btf->bf", alpha, h, optimize=True)
        z = g @ p["out_w"] + p["out_b"][0]
        if not need_cache:
            return z, None
        return z, {"win": win, "h_pre": h_pre, "h": h, "alpha": alpha,
                   "g": g}

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        z, _ = self._forward(np.asarray(x, dtype=np.float64))
        return z

    def _gradients(self, x: np.ndarray, y: np.ndarray):
        z, cache = self._forward(x, need_cache=True)
        b = len(x)
        dz = (_sigmoid(z) - y) / b
        p = self.params
        grads = {}
        if self.config.architecture == "pooled":
            grads["out_w"] = cache["feats"].T @ dz
            grads["out_b"] = np.array([dz.sum()])
            return z, grads
        h, alpha, g = cache["h"], cache["alpha"], cache["g"]
        grads["out_w"] = g.T @ dz
        grads["out_b"] = np.array([dz.sum()])
        dg = dz[:, None] * p["out_w"][None, :]
        dh_pool = alpha[:, :, None] * dg[:, None, :]
        dalpha = np.einsum("bf,btf->bt", dg, h, optimize=True)
        ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        grads["att_u"] = np.einsum("bt,btf->f", ds, h, optimize=True)
        grads["att_b"] = np.array([ds.sum()])
        dh = dh_pool + ds[:, :, None] * p["att_u"][None, None, :]
        dpre = dh * (cache["h_pre"] > 0.0)
        grads["conv_b"] = dpre.sum(axis=(0, 1))
        grads["conv_w"] = np.einsum("btf,btcw->fcw", dpre, cache["win"],
                                    optimize=True)
        return z, grads

    def save(self, path: Union[str, Path]) -> None:
        meta = {
            "config": self.config.as_dict(),
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "params": [{"name": k, "shape": list(v.shape)}
                       for k, v in self.params.items()],
        }
        blob = json.dumps(meta, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _VERSION, len(blob)))
            fh.write(blob)
            for k in meta["params"]:
                fh.write(np.ascontiguousarray(
                    self.params[k["name"]], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Discriminator":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a discriminator file")
            version, blob_len = struct.unpack("<II", fh.read(8))
            if version != _VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            meta = json.loads(fh.read(blob_len).decode())
            params = {}
            for spec in meta["params"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(8 * count)
                params[spec["name"]] = np.frombuffer(
                    raw, dtype="<f8").reshape(shape).copy()
        config = DiscriminatorConfig(**meta["config"])
        return cls(config, params, np.array(meta["channel_mean"]),
                   np.array(meta["channel_std"]))


@dataclass
class TrainResult:
    model: Discriminator
    initial_loss: float
    losses: list
    auc_train: float
    auc_test: float
    test_logits: np.ndarray
    test_labels: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray


def _adam_step(params: dict, grads: dict, state: dict, lr: float,
               t: int, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    for k, g in grads.items():
        m, v = state[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        params[k] -= lr * mhat / (np.sqrt(vhat) + eps)


def train(real_encodings: Sequence, gen_encodings: Sequence,
          config: Optional[DiscriminatorConfig] = None) -> TrainResult:
    """Train the discriminator on labeled windows (real=1, generated=0).

    The split is stratified per class; channel standardization comes from
    the training windows only. Raises :class:`TrainingError` if the loss
    goes non-finite.
    """
    config = config or DiscriminatorConfig()
    if len(real_encodings) < 10 or len(gen_encodings) < 10:
        raise ValueError("need at least 10 sequences per class")
    rng = np.random.default_rng(config.seed)

    xr = make_windows(real_encodings, config.window)
    xg = make_windows(gen_encodings, config.window)
    x = np.concatenate([xr, xg])
    y = np.concatenate([np.ones(len(xr)), np.zeros(len(xg))])

    test_idx = []
    train_idx = []
    for cls_val, count, offset in ((1, len(xr), 0), (0, len(xg), len(xr))):
        order = rng.permutation(count) + offset
        n_test = max(1, int(round(count * config.test_fraction)))
        test_idx.append(order[:n_test])
        train_idx.append(order[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)

    xt, yt = x[train_idx], y[train_idx]
    mean = xt.reshape(-1, 3).mean(axis=0)
    std = xt.reshape(-1, 3).std(axis=0)
    std[std == 0] = 1.0

    model = Discriminator.initialize(config, rng)
    model.channel_mean = mean
    model.channel_std = std

    initial_loss = _bce_with_logits(model.predict_logits(xt), yt)
    state = {k: (np.zeros_like(v), np.zeros_like(v))
             for k, v in model.params.items()}
    losses = []
    step = 0
    n_train = len(xt)
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for lo in range(0, n_train, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            z, grads = model._gradients(xt[batch], yt[batch])
            loss = _bce_with_logits(z, yt[batch])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, step {step}: "
                    f"{loss}")
            epoch_loss += loss * len(batch)
            step += 1
            _adam_step(model.params, grads, state, config.learning_rate,
                       step)
        losses.append(epoch_loss / n_train)

    z_train = model.predict_logits(xt)
    z_test = model.predict_logits(x[test_idx])
    y_test = y[test_idx]
    return TrainResult(model=model, initial_loss=initial_loss,
                       losses=losses,
                       auc_train=roc_auc(yt, z_train),
                       auc_test=roc_auc(y_test, z_test),
                       test_logits=z_test, test_labels=y_test,
                       train_index=train_idx, test_index=test_idx)


def score(model: Discriminator, encodings: Sequence) -> np.ndarray:
    """Pre-sigmoid logit per sequence; deterministic for fixed inputs."""
    x = make_windows(encodings, model.config.window)
    return model.predict_logits(x)


def _ranks_with_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based
        i = j + 1
    return ranks


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC of scores for class 1 over class 0, ties as 1/2."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = _ranks_with_ties(scores)
    r1 = ranks[pos].sum()
    return float((r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def roc_curve(labels: np.ndarray, scores: np.ndarray):
    """(fpr, tpr, thresholds) sweeping the decision threshold downward."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order] == 1
    distinct = np.nonzero(np.diff(s))[0]
    cut = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(~y)[cut]
    n1 = int(y.sum())
    n0 = len(y) - n1
    tpr = np.concatenate([[0.0], tp / max(n1, 1)])
    fpr = np.concatenate([[0.0], fp / max(n0, 1)])
    thresholds = np.concatenate([[np.inf], s[cut]])
    return fpr, tpr, thresholds
