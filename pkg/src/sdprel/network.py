"""From-scratch convolutional classifier over embedded token sequences.

Architecture: one or two embedding channels (summed), convolutions of
several widths with ReLU, max-over-time pooling, inverted dropout, and an
affine softmax layer.  Loss is class-weighted cross-entropy.  Everything is
plain numpy; backward passes are hand-derived and checked against central
differences.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .embeddings import PAD_INDEX, EmbeddingChannel, Vocabulary
from .errors import DataError, FormatError, NumericalError

log = logging.getLogger(__name__)

MODEL_MAGIC = "SDPREL-MODEL v1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class KinkError(NumericalError):
    """Input puts a ReLU or max-pool decision too close to its switch point
    for finite differences to be trustworthy; resample and retry."""


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int
    max_length: int
    num_classes: int
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 128
    dropout_rate: float = 0.5
    norm_cap: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "filter_widths", tuple(self.filter_widths))
        if not self.filter_widths:
            raise DataError("at least one filter width is required")
        if any(w < 1 or w > self.max_length for w in self.filter_widths):
            raise DataError(f"filter widths {self.filter_widths} must lie in "
                            f"[1, {self.max_length}]")
        if self.filters_per_width < 1:
            raise DataError("filters_per_width must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError(f"dropout rate {self.dropout_rate} outside [0, 1)")
        if self.norm_cap <= 0:
            raise DataError("norm cap must be positive")
        if self.num_classes < 2:
            raise DataError("need at least two classes")
        if self.embedding_dim < 1 or self.max_length < 1:
            raise DataError("embedding_dim and max_length must be >= 1")

    @property
    def pooled_size(self):
        return len(self.filter_widths) * self.filters_per_width

    def to_json_dict(self):
        return {
            "embedding_dim": self.embedding_dim,
            "max_length": self.max_length,
            "num_classes": self.num_classes,
            "filter_widths": list(self.filter_widths),
            "filters_per_width": self.filters_per_width,
            "dropout_rate": self.dropout_rate,
            "norm_cap": self.norm_cap,
        }


class CnnModel:
    """Parameter container: embedding channels, conv filters, affine layer.

    Parameter registry order (also the serialization order): channels, then
    per filter width its weights and bias, then the affine weights and bias.
    """

    def __init__(self, config, channels, vocab, classes, conv_w, conv_b, fc_w, fc_b):
        if not 1 <= len(channels) <= 2:
            raise DataError(f"expected 1 or 2 channels, got {len(channels)}")
        if len(set(classes)) != len(classes):
            raise DataError("duplicate class names")
        if len(classes) != config.num_classes:
            raise DataError(f"{len(classes)} class names for num_classes={config.num_classes}")
        for channel in channels:
            if channel.matrix.shape != (len(vocab), config.embedding_dim):
                raise DataError(f"channel shape {channel.matrix.shape} does not match "
                                f"vocab {len(vocab)} x dim {config.embedding_dim}")
        self.config = config
        self.channels = list(channels)
        self.vocab = vocab
        self.classes = tuple(classes)
        self.conv_w = conv_w
        self.conv_b = conv_b
        self.fc_w = fc_w
        self.fc_b = fc_b

    @classmethod
    def initialize(cls, config, channels, vocab, classes, seed):
        rng = np.random.default_rng(seed)
        F, d = config.filters_per_width, config.embedding_dim
        conv_w, conv_b = {}, {}
        for w in config.filter_widths:
            conv_w[w] = rng.uniform(-0.1, 0.1, size=(F, w, d)).astype(np.float32)
            conv_b[w] = np.zeros(F, dtype=np.float32)
        fc_w = rng.uniform(-0.1, 0.1, size=(config.num_classes, config.pooled_size))
        fc_w = fc_w.astype(np.float32)
        fc_b = np.zeros(config.num_classes, dtype=np.float32)
        return cls(config, channels, vocab, classes, conv_w, conv_b, fc_w, fc_b)

    @property
    def dtype(self):
        return self.fc_w.dtype

    def parameters(self):
        """name -> array, in declared order."""
        out = {}
        for i, channel in enumerate(self.channels):
            out[f"channel{i}"] = channel.matrix
        for w in self.config.filter_widths:
            out[f"conv_w{w}"] = self.conv_w[w]
            out[f"conv_b{w}"] = self.conv_b[w]
        out["fc_w"] = self.fc_w
        out["fc_b"] = self.fc_b
        return out

    def trainable_names(self):
        names = [f"channel{i}" for i, ch in enumerate(self.channels) if ch.trainable]
        for w in self.config.filter_widths:
            names.extend((f"conv_w{w}", f"conv_b{w}"))
        names.extend(("fc_w", "fc_b"))
        return names

    def parameter_count(self):
        return sum(arr.size for arr in self.parameters().values())

    def astype(self, dtype):
        channels = [EmbeddingChannel(ch.matrix.astype(dtype), ch.trainable, ch.source,
                                     ch.pretrained_hits)
                    for ch in self.channels]
        conv_w = {w: m.astype(dtype) for w, m in self.conv_w.items()}
        conv_b = {w: b.astype(dtype) for w, b in self.conv_b.items()}
        return CnnModel(self.config, channels, self.vocab, self.classes,
                        conv_w, conv_b, self.fc_w.astype(dtype), self.fc_b.astype(dtype))

    def copy(self):
        return self.astype(self.dtype)


@dataclass
class ForwardCache:
    indices: np.ndarray
    per_width: dict          # width -> (windows, preacts, argmax)
    pooled: np.ndarray
    mask: np.ndarray         # inverted-dropout mask incl. scaling, or None
    dropped: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward_batch(model, indices, train_mode=False, rng=None):
    """Run the network on a batch of index sequences (B x max_length)."""
    cfg = model.config
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != cfg.max_length:
        raise DataError(f"expected shape (B, {cfg.max_length}), got {indices.shape}")
    if train_mode and cfg.dropout_rate > 0 and rng is None:
        raise DataError("training-mode forward with dropout needs an rng")
    B = indices.shape[0]
    d = cfg.embedding_dim
    emb = model.channels[0].matrix[indices]
    for channel in model.channels[1:]:
        emb = emb + channel.matrix[indices]

    pooled_parts = []
    per_width = {}
    for w in cfg.filter_widths:
        T = cfg.max_length - w + 1
        windows = sliding_window_view(emb, (w, d), axis=(1, 2)).reshape(B, T, w * d)
        weights = model.conv_w[w].reshape(cfg.filters_per_width, w * d)
        pre = windows @ weights.T + model.conv_b[w]
        fmap = np.maximum(pre, 0)
        arg = fmap.argmax(axis=1)
        pooled_parts.append(np.take_along_axis(fmap, arg[:, None, :], axis=1)[:, 0, :])
        per_width[w] = (windows, pre, arg)
    pooled = np.concatenate(pooled_parts, axis=1)

    if train_mode and cfg.dropout_rate > 0:
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(pooled.shape) < keep).astype(pooled.dtype) / pooled.dtype.type(keep)
        dropped = pooled * mask
    else:
        mask = None
        dropped = pooled

    logits = dropped @ model.fc_w.T + model.fc_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    return ForwardCache(indices=indices, per_width=per_width, pooled=pooled,
                        mask=mask, dropped=dropped, logits=logits, probs=probs)


def forward(model, sequence, train_mode=False, rng=None):
    """Single-sequence convenience wrapper; returns (logits, probs, cache)."""
    cache = forward_batch(model, np.asarray(sequence)[None, :], train_mode, rng)
    return cache.logits[0], cache.probs[0], cache


def weighted_cross_entropy(probs, gold, class_weights):
    """Mean over the batch of w_gold * (-log p_gold)."""
    probs = np.atleast_2d(probs)
    gold = np.atleast_1d(gold)
    class_weights = np.asarray(class_weights)
    # zero is allowed: a class absent from the data never multiplies a loss
    if np.any(class_weights < 0) or not np.all(np.isfinite(class_weights)):
        raise DataError("class weights must be finite and non-negative")
    p_gold = probs[np.arange(len(gold)), gold]
    if np.any(p_gold <= 0):
        log.warning("clamping %d zero probabilities before log", int(np.sum(p_gold <= 0)))
        p_gold = np.maximum(p_gold, 1e-12)
    return float(np.mean(class_weights[gold] * -np.log(p_gold)))


def loss_and_logit_grad(probs, gold, class_weights):
    """Batch loss plus d(loss)/d(logits), fused through the softmax."""
    probs = np.atleast_2d(probs)
    gold = np.atleast_1d(gold)
    class_weights = np.asarray(class_weights, dtype=probs.dtype)
    B = probs.shape[0]
    loss = weighted_cross_entropy(probs, gold, class_weights)
    dlogits = probs.copy()
    dlogits[np.arange(B), gold] -= 1.0
    dlogits *= (class_weights[gold] / B)[:, None]
    return loss, dlogits


def backward(model, cache, dlogits):
    """Gradients for every parameter; static channels get zero buffers.

    Max-pooling routes gradient to the first maximum position only; the
    dropout mask recorded in the cache is reused.
    """
    cfg = model.config
    B = cache.indices.shape[0]
    if dlogits.shape != cache.logits.shape:
        raise DataError(f"dlogits shape {dlogits.shape} does not match cache "
                        f"{cache.logits.shape}")
    grads = {}
    grads["fc_w"] = dlogits.T @ cache.dropped
    grads["fc_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ model.fc_w
    if cache.mask is not None:
        dpooled = dpooled * cache.mask

    any_trainable_channel = any(ch.trainable for ch in model.channels)
    demb = None
    if any_trainable_channel:
        demb = np.zeros((B, cfg.max_length, cfg.embedding_dim), dtype=cache.pooled.dtype)

    offset = 0
    F = cfg.filters_per_width
    for w in cfg.filter_widths:
        windows, pre, arg = cache.per_width[w]
        T = pre.shape[1]
        dpool_w = dpooled[:, offset:offset + F]
        offset += F
        gate = np.take_along_axis(pre, arg[:, None, :], axis=1)[:, 0, :] > 0
        dpool_w = dpool_w * gate
        dpre = np.zeros_like(pre)
        np.put_along_axis(dpre, arg[:, None, :], dpool_w[:, None, :], axis=1)
        dpre_flat = dpre.reshape(B * T, F)
        win_flat = windows.reshape(B * T, w * cfg.embedding_dim)
        grads[f"conv_w{w}"] = (dpre_flat.T @ win_flat).reshape(F, w, cfg.embedding_dim)
        grads[f"conv_b{w}"] = dpre.sum(axis=(0, 1))
        if any_trainable_channel:
            weights = model.conv_w[w].reshape(F, w * cfg.embedding_dim)
            dwin = (dpre_flat @ weights).reshape(B, T, w, cfg.embedding_dim)
            for o in range(w):
                demb[:, o:o + T, :] += dwin[:, :, o, :]

    flat_idx = cache.indices.ravel()
    for i, channel in enumerate(model.channels):
        name = f"channel{i}"
        grads[name] = np.zeros_like(channel.matrix)
        if channel.trainable:
            np.add.at(grads[name], flat_idx,
                      demb.reshape(-1, cfg.embedding_dim))
            grads[name][PAD_INDEX] = 0.0
    return grads


@dataclass
class TrainState:
    """Adam accumulators for the trainable parameters."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_model(cls, model):
        params = model.parameters()
        names = model.trainable_names()
        m = {n: np.zeros_like(params[n]) for n in names}
        v = {n: np.zeros_like(params[n]) for n in names}
        return cls(m=m, v=v)


def adam_step(model, state, grads, lr=1e-3):
    """One Adam update over the trainable parameters, then the norm cap on
    affine rows, then re-zeroing the padding embedding row."""
    params = model.parameters()
    names = model.trainable_names()
    for name in names:
        if name not in grads:
            raise DataError(f"missing gradient for {name}")
        if not np.all(np.isfinite(grads[name])):
            raise NumericalError(f"non-finite gradient in {name}; step aborted")
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name in names:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        update = (lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS))
        params[name] -= update.astype(params[name].dtype, copy=False)
    apply_max_norm(model.fc_w, model.config.norm_cap)
    for channel in model.channels:
        if channel.trainable:
            channel.matrix[PAD_INDEX] = 0.0
    return model, state


def apply_max_norm(fc_weights, cap):
    """Rescale each row with L2 norm above cap back onto the cap, in place."""
    if cap <= 0:
        raise DataError("norm cap must be positive")
    norms = np.linalg.norm(fc_weights, axis=1)
    over = norms > cap
    if np.any(over):
        fc_weights[over] *= (cap / norms[over])[:, None].astype(fc_weights.dtype, copy=False)
    return fc_weights


def predict_batch(model, indices):
    """(class index array, probability matrix) in evaluation mode."""
    cache = forward_batch(model, indices, train_mode=False)
    return cache.probs.argmax(axis=1), cache.probs


def gradient_check(model, indices, gold, class_weights, epsilon=1e-5,
                   tolerance=1e-4, num_samples=500, seed=0):
    """Compare analytic gradients against central differences in 64-bit.

    Samples at least num_samples parameter coordinates across the trainable
    groups (static channels and the padding row excluded).  Inputs that put
    a ReLU pre-activation or a pooling decision too close to its switch
    point raise KinkError; callers resample the batch and retry.
    Returns a report dict; report["passed"] reflects the tolerance.
    """
    model64 = model.astype(np.float64)
    gold = np.asarray(gold)
    weights64 = np.asarray(class_weights, dtype=np.float64)

    cache = forward_batch(model64, indices, train_mode=False)
    # A +-epsilon nudge of one parameter moves any pre-activation by at most
    # epsilon times this factor; decisions closer than that to a ReLU kink or
    # a pooling switch would make central differences lie.
    reach = 1.0
    for w, (windows, _, _) in cache.per_width.items():
        reach = max(reach, float(np.max(np.abs(windows))),
                    w * float(np.max(np.abs(model64.conv_w[w]))))
    margin = max(1e-6, 4.0 * epsilon * reach)
    for w, (_, pre, _) in cache.per_width.items():
        closest = float(np.min(np.abs(pre)))
        if closest < margin:
            raise KinkError(f"width-{w} pre-activation within {closest:.1e} of the ReLU kink")
        fmap = np.maximum(pre, 0)
        if fmap.shape[1] < 2:
            continue  # single pooling position, nothing can switch
        top2 = np.sort(fmap, axis=1)[:, -2:, :]
        second, first = top2[:, 0, :], top2[:, 1, :]
        risky = (first > 0) & (first - second < 2.0 * margin)
        if np.any(risky):
            raise KinkError(f"width-{w} pooling margin below {2 * margin:.1e}")

    loss, dlogits = loss_and_logit_grad(cache.probs, gold, weights64)
    analytic = backward(model64, cache, dlogits)

    params = model64.parameters()
    groups = []
    for name in model64.trainable_names():
        size = params[name].size
        if name.startswith("channel"):
            # the padding row is pinned to zero and excluded from the check
            allowed = np.arange(model64.config.embedding_dim, size)
        else:
            allowed = np.arange(size)
        groups.append((name, allowed))
    total = sum(len(allowed) for _, allowed in groups)
    rng = np.random.default_rng(seed)

    plan = []
    planned = 0
    for name, allowed in groups:
        want = max(min(len(allowed), 10), int(round(num_samples * len(allowed) / total)))
        want = min(want, len(allowed))
        plan.append([name, allowed, want])
        planned += want
    # top up proportionally if rounding left us short
    i = 0
    while planned < min(num_samples, total):
        name, allowed, want = plan[i % len(plan)]
        if want < len(allowed):
            plan[i % len(plan)][2] += 1
            planned += 1
        i += 1

    failures = []
    worst = 0.0
    checked = 0
    for name, allowed, want in plan:
        arr = params[name]
        flat = arr.reshape(-1)
        for pos in rng.choice(allowed, size=want, replace=False):
            original = flat[pos]
            flat[pos] = original + epsilon
            hi = weighted_cross_entropy(forward_batch(model64, indices).probs, gold, weights64)
            flat[pos] = original - epsilon
            lo = weighted_cross_entropy(forward_batch(model64, indices).probs, gold, weights64)
            flat[pos] = original
            numeric = (hi - lo) / (2.0 * epsilon)
            value = analytic[name].reshape(-1)[pos]
            rel = abs(value - numeric) / max(abs(value), abs(numeric), 1e-8)
            worst = max(worst, rel)
            checked += 1
            if rel > tolerance:
                failures.append({
                    "param": name,
                    "index": [int(c) for c in np.unravel_index(pos, arr.shape)],
                    "analytic": float(value),
                    "numeric": float(numeric),
                    "rel_err": float(rel),
                })
    failures.sort(key=lambda f: -f["rel_err"])
    return {
        "checked": int(checked),
        "worst_rel_err": float(worst),
        "tolerance": tolerance,
        "loss": float(loss),
        "failures": failures,
        "passed": not failures,
    }


def _format_array(arr):
    return "[" + ",".join(f"{x:.9g}" for x in arr.reshape(-1).tolist()) + "]"


def save_model(model, path):
    """Write the model to one file: magic line, JSON metadata, one flat
    JSON number array per parameter tensor in registry order."""
    params = model.parameters()
    meta = {
        "config": model.config.to_json_dict(),
        "classes": list(model.classes),
        "vocab": list(model.vocab.index_to_token),
        "channels": [{"source": ch.source, "trainable": ch.trainable,
                      "pretrained_hits": int(ch.pretrained_hits)}
                     for ch in model.channels],
        "tensors": [{"name": name, "shape": list(arr.shape)}
                    for name, arr in params.items()],
    }
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(MODEL_MAGIC + "\n")
        handle.write(json.dumps(meta, ensure_ascii=False) + "\n")
        for arr in params.values():
            handle.write(_format_array(arr) + "\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as handle:
        magic = handle.readline().rstrip("\n")
        if magic != MODEL_MAGIC:
            raise FormatError(f"unsupported model file (first line {magic!r})",
                              source=str(path), line=1)
        try:
            meta = json.loads(handle.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad model metadata: {exc}", source=str(path), line=2) from None
        try:
            config = ModelConfig(
                embedding_dim=meta["config"]["embedding_dim"],
                max_length=meta["config"]["max_length"],
                num_classes=meta["config"]["num_classes"],
                filter_widths=tuple(meta["config"]["filter_widths"]),
                filters_per_width=meta["config"]["filters_per_width"],
                dropout_rate=meta["config"]["dropout_rate"],
                norm_cap=meta["config"]["norm_cap"],
            )
            classes = tuple(meta["classes"])
            vocab = Vocabulary(meta["vocab"])
            channel_meta = meta["channels"]
            tensor_meta = meta["tensors"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"incomplete model metadata: {exc}",
                              source=str(path), line=2) from None

        tensors = {}
        for lineno, spec in enumerate(tensor_meta, start=3):
            line = handle.readline()
            if not line:
                raise FormatError(f"missing tensor {spec['name']!r} (file truncated)",
                                  source=str(path), line=lineno)
            values = np.asarray(json.loads(line), dtype=np.float32)
            shape = tuple(spec["shape"])
            if values.size != int(np.prod(shape)):
                raise FormatError(f"tensor {spec['name']!r}: {values.size} values for "
                                  f"shape {shape}", source=str(path), line=lineno)
            tensors[spec["name"]] = values.reshape(shape)

    channels = []
    for i, ch_meta in enumerate(channel_meta):
        name = f"channel{i}"
        if name not in tensors:
            raise FormatError(f"metadata lists channel {i} but tensor {name!r} is missing",
                              source=str(path))
        channels.append(EmbeddingChannel(tensors[name], trainable=bool(ch_meta["trainable"]),
                                         source=ch_meta["source"],
                                         pretrained_hits=int(ch_meta.get("pretrained_hits", 0))))
    try:
        conv_w = {w: tensors[f"conv_w{w}"] for w in config.filter_widths}
        conv_b = {w: tensors[f"conv_b{w}"] for w in config.filter_widths}
        fc_w = tensors["fc_w"]
        fc_b = tensors["fc_b"]
    except KeyError as exc:
        raise FormatError(f"model file lacks tensor {exc}", source=str(path)) from None
    return CnnModel(config, channels, vocab, classes, conv_w, conv_b, fc_w, fc_b)
