"""Stacked LSTM sequence classifier written directly in numpy.

One sigmoid output per timestep, mean binary cross-entropy over the labelled
steps, full backpropagation through time (optionally truncated into windows
for very long bricks) and a bias-corrected Adam optimizer.

Gate layout inside every fused weight matrix is ``[input, forget, cell,
output]``: ``W`` has shape (input_size, 4H), ``U`` (H, 4H) and ``b`` (4H,).
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AllLabelsAbsent, ShapeMismatch
from .features import ABSENT

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
GATES = ("input", "forget", "cell", "output")


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ModelParams:
    input_size: int
    hidden_sizes: tuple
    task: str = "branch"
    params: dict = field(default_factory=dict)

    @property
    def n_layers(self):
        return len(self.hidden_sizes)

    def layer(self, k):
        p = self.params
        return p[f"l{k}.W"], p[f"l{k}.U"], p[f"l{k}.b"]

    def names(self):
        return list(self.params)

    def gate(self, k, which, kind="W"):
        """View on one gate's block of a fused matrix, e.g. ``gate(1, "forget", "b")``."""
        H = self.hidden_sizes[k - 1]
        j = GATES.index(which)
        arr = self.params[f"l{k}.{kind}"]
        return arr[..., j * H:(j + 1) * H]

    def copy(self):
        return ModelParams(self.input_size, tuple(self.hidden_sizes), self.task,
                           {k: v.copy() for k, v in self.params.items()})

    def flat(self):
        return np.concatenate([v.ravel() for v in self.params.values()])

    def layout(self):
        return [(k, list(v.shape)) for k, v in self.params.items()]


def param_shapes(input_size, hidden_sizes):
    shapes = {}
    fan_in = input_size
    for k, H in enumerate(hidden_sizes, start=1):
        shapes[f"l{k}.W"] = (fan_in, 4 * H)
        shapes[f"l{k}.U"] = (H, 4 * H)
        shapes[f"l{k}.b"] = (4 * H,)
        fan_in = H
    shapes["head.w"] = (fan_in,)
    shapes["head.b"] = (1,)
    return shapes


def init_model(input_size: int, hidden_sizes: Sequence[int] = (32, 8), task: str = "branch",
               seed: int = 0) -> ModelParams:
    """Glorot-uniform gate weights, zero biases except forget-gate bias 1."""
    if input_size < 1 or not hidden_sizes or min(hidden_sizes) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = input_size
    for k, H in enumerate(hidden_sizes, start=1):
        lim_w = math.sqrt(6.0 / (fan_in + H))
        lim_u = math.sqrt(6.0 / (H + H))
        params[f"l{k}.W"] = rng.uniform(-lim_w, lim_w, size=(fan_in, 4 * H))
        params[f"l{k}.U"] = rng.uniform(-lim_u, lim_u, size=(H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        params[f"l{k}.b"] = b
        fan_in = H
    lim = math.sqrt(6.0 / (fan_in + 1))
    params["head.w"] = rng.uniform(-lim, lim, size=fan_in)
    params["head.b"] = np.zeros(1)
    return ModelParams(input_size, tuple(hidden_sizes), task, params)


def zero_model(input_size, hidden_sizes=(32, 8), task="branch"):
    shapes = param_shapes(input_size, hidden_sizes)
    return ModelParams(input_size, tuple(hidden_sizes), task, {k: np.zeros(s) for k, s in shapes.items()})


# --------------------------------------------------------------------------- forward


def _layer_forward(W, U, b, X, h0, c0):
    B, T, _ = X.shape
    H = U.shape[0]
    zx = X @ W + b
    acts = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h, c = h0, c0
    for t in range(T):
        z = zx[:, t] + h @ U
        a = sigmoid(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H:] * tc
        acts[:, t] = a
        cs[:, t] = c
        tcs[:, t] = tc
        hs[:, t] = h
    return {"X": X, "acts": acts, "cs": cs, "tcs": tcs, "hs": hs, "h0": h0, "c0": c0}


def forward(model: ModelParams, rows, state=None):
    """Run the network over one brick (T, F) or a padded batch (B, T, F).

    Returns ``(probs, cache)``; ``probs`` has shape (T,) or (B, T). ``state``
    optionally carries ``[(h, c), ...]`` per layer from a previous window.
    """
    X = np.asarray(rows, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != model.input_size:
        raise ShapeMismatch(f"expected (..., {model.input_size}) input, got {np.shape(rows)}")
    B = X.shape[0]
    layers = []
    inp = X
    for k, H in enumerate(model.hidden_sizes, start=1):
        W, U, b = model.layer(k)
        if state is None:
            h0 = np.zeros((B, H))
            c0 = np.zeros((B, H))
        else:
            h0, c0 = state[k - 1]
        lc = _layer_forward(W, U, b, inp, h0, c0)
        layers.append(lc)
        inp = lc["hs"]
    logits = inp @ model.params["head.w"] + model.params["head.b"][0]
    probs = sigmoid(logits)
    cache = {"layers": layers, "logits": logits, "probs": probs, "single": single}
    if single:
        probs = probs[0]
    return probs, cache


def final_state(cache):
    return [(lc["hs"][:, -1].copy(), lc["cs"][:, -1].copy()) for lc in cache["layers"]]


# --------------------------------------------------------------------------- loss / backward


def _present(labels):
    labels = np.asarray(labels)
    return labels != ABSENT


def loss(probs, labels) -> float:
    """Mean binary cross-entropy over labelled steps (ABSENT entries skipped)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ShapeMismatch(f"probabilities {probs.shape} vs labels {labels.shape}")
    keep = _present(labels)
    if not keep.any():
        raise AllLabelsAbsent("no labelled step to score")
    p = np.clip(probs[keep], PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels[keep].astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _layer_backward(W, U, lc, dH):
    X, acts, cs, tcs, hs = lc["X"], lc["acts"], lc["cs"], lc["tcs"], lc["hs"]
    B, T, H = hs.shape
    dZ = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    UT = U.T
    for t in range(T - 1, -1, -1):
        a = acts[:, t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else lc["c0"]
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ UT
    h_prev = np.concatenate([lc["h0"][:, None], hs[:, :-1]], axis=1)
    Fin = X.shape[2]
    dW = X.reshape(-1, Fin).T @ dZ.reshape(-1, 4 * H)
    dU = h_prev.reshape(-1, H).T @ dZ.reshape(-1, 4 * H)
    db = dZ.sum(axis=(0, 1))
    dX = dZ @ W.T
    return dX, dW, dU, db


def backward(model: ModelParams, cache, labels, n_present: Optional[int] = None) -> dict:
    """Exact gradient of :func:`loss` with respect to every parameter.

    ``n_present`` overrides the normaliser of the mean (used when one brick is
    split into several BPTT windows that share a single loss).
    """
    probs = cache["probs"]
    y = np.asarray(labels)
    if y.ndim == 1:
        y = y[None]
    if y.shape != probs.shape:
        raise ShapeMismatch(f"labels {y.shape} vs outputs {probs.shape}")
    keep = y != ABSENT
    n = int(keep.sum()) if n_present is None else n_present
    if n == 0:
        raise AllLabelsAbsent("no labelled step to differentiate")
    # d(mean BCE)/d(logit) = (p - y) / n on labelled steps
    dlogits = np.where(keep, probs - np.where(keep, y, 0), 0.0) / n

    grads = {}
    top = cache["layers"][-1]["hs"]
    Hl = top.shape[2]
    grads["head.w"] = top.reshape(-1, Hl).T @ dlogits.reshape(-1)
    grads["head.b"] = np.array([dlogits.sum()])
    dH = dlogits[:, :, None] * model.params["head.w"][None, None, :]
    for k in range(model.n_layers, 0, -1):
        W, U, _ = model.layer(k)
        dH, dW, dU, db = _layer_backward(W, U, cache["layers"][k - 1], dH)
        grads[f"l{k}.W"] = dW
        grads[f"l{k}.U"] = dU
        grads[f"l{k}.b"] = db
    return {k: grads[k] for k in model.params}


def loss_and_grad(model: ModelParams, rows, labels, bptt_cap: Optional[int] = None):
    """Loss and gradient of one brick, processing windows of ``bptt_cap`` steps
    with carried hidden state and no gradient across window edges."""
    labels = np.asarray(labels)
    n_present = int(_present(labels).sum())
    if n_present == 0:
        raise AllLabelsAbsent("no labelled step in brick")
    T = len(labels)
    cap = T if not bptt_cap else bptt_cap
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = 0.0
    state = None
    probs_all = np.empty(T)
    for start in range(0, T, cap):
        stop = min(T, start + cap)
        probs, cache = forward(model, rows[start:stop], state)
        probs_all[start:stop] = probs
        state = final_state(cache)
        win = labels[start:stop]
        keep = _present(win)
        if keep.any():
            p = np.clip(probs[keep], PROB_CLAMP, 1.0 - PROB_CLAMP)
            yy = win[keep].astype(np.float64)
            total -= float(np.sum(yy * np.log(p) + (1.0 - yy) * np.log1p(-p)))
            g = backward(model, cache, win, n_present=n_present)
            for k in grads:
                grads[k] += g[k]
    return total / n_present, grads, probs_all


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, model: ModelParams, learning_rate=0.001, **kw):
        return cls({k: np.zeros_like(p) for k, p in model.params.items()},
                   {k: np.zeros_like(p) for k, p in model.params.items()}, 0, learning_rate, **kw)


def adam_step(model: ModelParams, grads: dict, state: AdamState):
    """In-place bias-corrected Adam update; returns ``(model, state)``."""
    if set(grads) != set(state.m):
        raise ShapeMismatch("gradient keys do not match optimizer state")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in model.params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return model, state


# --------------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 10
    bptt_cap: int = 500
    shuffle_seed: int = 0
    learning_rate: float = 0.001
    patience: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.bptt_cap < 1:
            raise ValueError("bptt_cap must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def _task_bricks(blocks, task):
    if hasattr(blocks, "bricks"):
        blocks = [blocks]
    out = []
    for block in blocks:
        for brick in block.bricks:
            y = brick.labels(task)
            if (y != ABSENT).any():
                out.append((brick.rows, y))
    return out


def _accuracy(pairs_probs):
    correct = total = 0
    for probs, y in pairs_probs:
        keep = y != ABSENT
        correct += int(((probs[keep] > 0.5).astype(np.int8) == y[keep]).sum())
        total += int(keep.sum())
    return correct / total if total else float("nan")


def evaluate_bricks(model, bricks_labels):
    """(mean loss over bricks, node-level accuracy)."""
    if not bricks_labels:
        return float("nan"), float("nan")
    probs = predict_many(model, [r for r, _ in bricks_labels])
    losses = [loss(p, y) for p, (_, y) in zip(probs, bricks_labels)]
    return float(np.mean(losses)), _accuracy([(p, y) for p, (_, y) in zip(probs, bricks_labels)])


def train(model: ModelParams, blocks, config: TrainConfig, validation=None, progress=None):
    """Batch-size-one training: one Adam update per brick, brick order
    reshuffled every epoch from ``config.shuffle_seed``.

    Returns ``(model, trace)``; the input model is not modified. With
    ``patience > 0`` (requires ``validation``) training stops after that many
    epochs without validation improvement and the best epoch is returned.
    """
    task = model.task
    data = _task_bricks(blocks, task)
    if not data:
        raise AllLabelsAbsent(f"no brick carries {task} labels")
    val = _task_bricks(validation, task) if validation is not None else []
    if config.patience and not val:
        raise ValueError("early stopping needs a validation block")
    model = model.copy()
    state = AdamState.fresh(model, config.learning_rate)
    rng = np.random.default_rng(config.shuffle_seed)
    trace = []
    best = None
    best_acc = -1.0
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        seen = []
        for idx in order:
            rows, y = data[idx]
            value, grads, probs = loss_and_grad(model, rows, y, config.bptt_cap)
            if not math.isfinite(value) or not all(np.isfinite(g).all() for g in grads.values()):
                raise FloatingPointError(f"non-finite loss or gradient at epoch {epoch}")
            adam_step(model, grads, state)
            losses.append(value)
            seen.append((probs, y))
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "train_accuracy": _accuracy(seen)}
        if val:
            vl, va = evaluate_bricks(model, val)
            entry["val_loss"] = vl
            entry["val_accuracy"] = va
        trace.append(entry)
        if progress is not None:
            progress(entry)
        log.info("epoch %d: %s", epoch, entry)
        if config.patience:
            if entry["val_accuracy"] > best_acc:
                best_acc = entry["val_accuracy"]
                best = model.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    if config.patience and best is not None:
        return best, trace
    return model, trace


# --------------------------------------------------------------------------- inference


def predict(model: ModelParams, rows, threshold: float = 0.5):
    """Per-step probabilities and hard labels (1 iff p > threshold)."""
    probs, _ = forward(model, rows)
    return probs, (probs > threshold).astype(np.int8)


def predict_many(model: ModelParams, rows_list, batch_size: int = 256):
    """Probabilities for many bricks. Bricks are zero-padded at the end and run
    as a batch; the recurrence is causal so padding never reaches real steps."""
    out = [None] * len(rows_list)
    order = sorted(range(len(rows_list)), key=lambda i: len(rows_list[i]))
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        T = max(len(rows_list[i]) for i in idx)
        X = np.zeros((len(idx), T, model.input_size))
        for j, i in enumerate(idx):
            X[j, :len(rows_list[i])] = rows_list[i]
        probs, _ = forward(model, X)
        for j, i in enumerate(idx):
            out[i] = probs[j, :len(rows_list[i])].copy()
    return out


# --------------------------------------------------------------------------- gradient check


def numerical_gradient(model: ModelParams, rows, labels, h: float = 1e-5) -> dict:
    """Central finite differences of :func:`loss` for every parameter entry."""
    probe = model.copy()
    num = {}
    for k, arr in probe.params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = loss(forward(probe, rows)[0], labels)
            flat[j] = old - h
            lm = loss(forward(probe, rows)[0], labels)
            flat[j] = old
            gflat[j] = (lp - lm) / (2 * h)
        num[k] = g
    return num


def relative_error(a, b, floor: float = 1e-8):
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(model: ModelParams, rows, labels, h: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients."""
    probs, cache = forward(model, rows)
    analytic = backward(model, cache, labels)
    numeric = numerical_gradient(model, rows, labels, h)
    return max(float(relative_error(analytic[k], numeric[k]).max()) for k in analytic)
