"""Small feed-forward networks with hand-written reverse mode and Adam.

Only what the handover agents need: dense layers, ``tanh``/linear
activations, a masked softmax head and a checkpoint format.  Everything is
float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class Mlp:
    """Dense network; hidden layers use ``activation``, the last layer is linear."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator = None, activation: str = "tanh"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.activations = [activation] * (len(sizes) - 2) + ["linear"]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]

    def soft_update(self, source: "Mlp", tau: float) -> None:
        """In-place Polyak averaging: self <- tau * source + (1 - tau) * self."""
        for dst, src in zip(self.params, source.params):
            dst *= 1.0 - tau
            dst += tau * src


def forward(net: Mlp, x: np.ndarray):
    """Returns ``(output, cache)``; ``cache`` feeds :func:`backward`."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {h.shape[-1]} != {net.sizes[0]}")
    inputs = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w + b
        h = np.tanh(z) if act == "tanh" else z
        if act == "tanh":
            inputs.append(h)
        else:
            inputs.append(None)
    return h, inputs


def backward(net: Mlp, cache, grad_out: np.ndarray):
    """Gradients ``[dW0, db0, dW1, db1, ...]`` and the gradient w.r.t. the input."""
    grads = [None] * (2 * len(net.weights))
    g = np.asarray(grad_out, dtype=np.float64)
    for i in range(len(net.weights) - 1, -1, -1):
        x_in, act_out = cache[2 * i], cache[2 * i + 1]
        if net.activations[i] == "tanh":
            g = g * (1.0 - act_out ** 2)
        grads[2 * i] = x_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, g


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 3e-4, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """Bias-corrected Adam, updating ``params`` in place."""
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameters")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0.

    Rows with an empty mask come back all-zero.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, logits, -np.inf)
    top = np.max(z, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(z - top), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities on ``mask``, 0 elsewhere (so ``p * logp`` vanishes off-support)."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, logits, -np.inf)
    top = np.max(z, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(z - top), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    lse = np.log(np.where(s > 0, s, 1.0)) + top
    return np.where(mask, logits - lse, 0.0)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, nets: dict, optimizers: dict = None, scalars: dict = None, meta: dict = None) -> None:
    """Write an ``.npz``; every array stored little-endian float64.

    Keys: ``net/<name>/sizes``, ``net/<name>/p<i>`` (W0, b0, W1, b1, ...),
    ``opt/<name>/{m,v}<i>`` and ``opt/<name>/step``, ``scalar/<name>``, plus
    ``format_version`` and a JSON ``meta`` string.
    """
    arrays = {"format_version": np.array([CHECKPOINT_VERSION], dtype="<i8")}
    for name, net in nets.items():
        arrays[f"net/{name}/sizes"] = np.array(net.sizes, dtype="<i8")
        for i, p in enumerate(net.params):
            arrays[f"net/{name}/p{i}"] = p.astype("<f8")
    for name, opt in (optimizers or {}).items():
        arrays[f"opt/{name}/step"] = np.array([opt.step], dtype="<i8")
        arrays[f"opt/{name}/hyper"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps], dtype="<f8")
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt/{name}/m{i}"] = np.asarray(m, dtype="<f8")
            arrays[f"opt/{name}/v{i}"] = np.asarray(v, dtype="<f8")
    for name, val in (scalars or {}).items():
        arrays[f"scalar/{name}"] = np.asarray(val, dtype="<f8")
    arrays["meta"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(nets, optimizers, scalars, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    if int(data["format_version"][0]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {int(data['format_version'][0])}")
    nets, opts, scalars = {}, {}, {}
    names = sorted({k.split("/")[1] for k in data if k.startswith("net/")})
    for name in names:
        net = Mlp(data[f"net/{name}/sizes"].tolist())
        count = len(net.params)
        net.load_params([data[f"net/{name}/p{i}"] for i in range(count)])
        nets[name] = net
    for name in sorted({k.split("/")[1] for k in data if k.startswith("opt/")}):
        lr, b1, b2, eps = data[f"opt/{name}/hyper"].tolist()
        count = len([k for k in data if k.startswith(f"opt/{name}/m")])
        opts[name] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=int(data[f"opt/{name}/step"][0]),
                               m=[data[f"opt/{name}/m{i}"].copy() for i in range(count)],
                               v=[data[f"opt/{name}/v{i}"].copy() for i in range(count)])
    for k, v in data.items():
        if k.startswith("scalar/"):
            scalars[k.split("/", 1)[1]] = v.copy() if v.ndim else float(v)
    meta = json.loads(str(data["meta"]))
    return nets, opts, scalars, meta
