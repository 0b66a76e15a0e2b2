"""Minimal dense feedforward networks on numpy.

Embedding tables for hashed categorical fields, a ReLU trunk, linear output
logits, hand-written reverse-mode gradients, and Adam with an L2 loss term.
Everything runs in float64 and is deterministic given the seeding RNG, which
keeps finite-difference gradient checks and bit-exact replays honest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

CHECKPOINT_FORMAT = "cvrtrace-densenet-v1"


@dataclass(frozen=True)
class EmbeddingField:
    vocab: int
    dim: int


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


class DenseNet:
    """Feedforward net: [numeric | embeddings] -> ReLU hidden stack -> logits.

    ``forward(..., train=True)`` records the activations needed by
    ``backward``; ``backward`` consumes that record and returns gradients
    keyed like ``param_items()``.
    """

    def __init__(self, numeric_dim, cat_fields, hidden, out_dim, rng,
                 init_seed=None):
        self.numeric_dim = int(numeric_dim)
        self.cat_fields = [EmbeddingField(int(f[0]), int(f[1]))
                           if not isinstance(f, EmbeddingField) else f
                           for f in cat_fields]
        self.hidden = tuple(int(h) for h in hidden)
        self.out_dim = int(out_dim)
        self.init_seed = init_seed
        emb_total = sum(f.dim for f in self.cat_fields)
        self.input_dim = self.numeric_dim + emb_total
        if self.input_dim <= 0:
            raise ValueError("network needs at least one input feature")

        self.embeddings = [rng.uniform(-0.05, 0.05, size=(f.vocab, f.dim))
                           for f in self.cat_fields]
        dims = (self.input_dim,) + self.hidden + (self.out_dim,)
        self.weights = []
        self.biases = []
        for din, dout in zip(dims, dims[1:]):
            lim = np.sqrt(6.0 / (din + dout))
            self.weights.append(rng.uniform(-lim, lim, size=(din, dout)))
            self.biases.append(np.zeros(dout))
        self._cache = None

    # -- parameters -----------------------------------------------------

    def param_items(self):
        items = [(f"emb{j}", t) for j, t in enumerate(self.embeddings)]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            items.append((f"W{i}", W))
            items.append((f"b{i}", b))
        return items

    @property
    def param_count(self) -> int:
        return sum(int(p.size) for _, p in self.param_items())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.param_items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def clone(self) -> "DenseNet":
        other = object.__new__(DenseNet)
        other.numeric_dim = self.numeric_dim
        other.cat_fields = list(self.cat_fields)
        other.hidden = self.hidden
        other.out_dim = self.out_dim
        other.init_seed = self.init_seed
        other.input_dim = self.input_dim
        other.embeddings = [t.copy() for t in self.embeddings]
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._cache = None
        return other

    def load_params_from(self, other: "DenseNet"):
        for (_, dst), (_, src) in zip(self.param_items(), other.param_items()):
            dst[...] = src

    # -- forward / backward ----------------------------------------------

    def _assemble_input(self, numeric, cats):
        parts = []
        n_rows = None
        if self.numeric_dim:
            numeric = np.atleast_2d(np.asarray(numeric, dtype=np.float64))
            if numeric.shape[1] != self.numeric_dim:
                raise ValueError(
                    f"expected {self.numeric_dim} numeric features, "
                    f"got {numeric.shape[1]}")
            parts.append(numeric)
            n_rows = numeric.shape[0]
        if self.cat_fields:
            cats = np.atleast_2d(np.asarray(cats, dtype=np.int64))
            if cats.shape[1] != len(self.cat_fields):
                raise ValueError(
                    f"expected {len(self.cat_fields)} categorical fields, "
                    f"got {cats.shape[1]}")
            if n_rows is None:
                n_rows = cats.shape[0]
            parts.extend(self.embeddings[j][cats[:, j]]
                         for j in range(len(self.cat_fields)))
        else:
            cats = None
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0], cats

    def forward(self, numeric, cats=None, train=False) -> np.ndarray:
        x, cats = self._assemble_input(numeric, cats)
        acts = [x]
        pre = []
        a = x
        n_layers = len(self.weights)
        for i in range(n_layers - 1):
            z = a @ self.weights[i] + self.biases[i]
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite logits in forward pass")
        if train:
            self._cache = (cats, acts, pre)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict:
        """Gradients of a scalar loss given d(loss)/d(logits)."""
        if self._cache is None:
            raise RuntimeError("backward() called without a recorded forward pass")
        cats, acts, pre = self._cache
        self._cache = None
        dlogits = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
        grads = {}
        dz = dlogits
        for i in range(len(self.weights) - 1, -1, -1):
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 0:
                dz = (dz @ self.weights[i].T) * (pre[i - 1] > 0.0)
            else:
                dx = dz @ self.weights[0].T
        offset = self.numeric_dim
        for j, field in enumerate(self.cat_fields):
            g = np.zeros_like(self.embeddings[j])
            np.add.at(g, cats[:, j], dx[:, offset:offset + field.dim])
            grads[f"emb{j}"] = g
            offset += field.dim
        return grads

    # -- checkpointing ----------------------------------------------------

    def save(self, path):
        meta = {
            "format": CHECKPOINT_FORMAT,
            "numeric_dim": self.numeric_dim,
            "cat_fields": [[f.vocab, f.dim] for f in self.cat_fields],
            "hidden": list(self.hidden),
            "out_dim": self.out_dim,
            "init_seed": self.init_seed,
        }
        arrays = {name: p for name, p in self.param_items()}
        np.savez(path, __meta__=np.frombuffer(
            json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "DenseNet":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"unrecognized checkpoint format in {path}")
            net = object.__new__(cls)
            net.numeric_dim = int(meta["numeric_dim"])
            net.cat_fields = [EmbeddingField(v, d) for v, d in meta["cat_fields"]]
            net.hidden = tuple(meta["hidden"])
            net.out_dim = int(meta["out_dim"])
            net.init_seed = meta.get("init_seed")
            net.input_dim = net.numeric_dim + sum(f.dim for f in net.cat_fields)
            net.embeddings = [np.array(data[f"emb{j}"], dtype=np.float64)
                              for j in range(len(net.cat_fields))]
            n_layers = len(net.hidden) + 1
            net.weights = [np.array(data[f"W{i}"], dtype=np.float64)
                           for i in range(n_layers)]
            net.biases = [np.array(data[f"b{i}"], dtype=np.float64)
                          for i in range(n_layers)]
            net._cache = None
        return net


def l2_penalty(net: DenseNet, l2: float) -> float:
    return l2 * sum(float(np.sum(p * p)) for _, p in net.param_items())


def l2_gradients(net: DenseNet, l2: float) -> dict:
    return {name: 2.0 * l2 * p for name, p in net.param_items()}


class Adam:
    """Adam with bias correction; L2 enters as a loss-term gradient 2*l2*p."""

    def __init__(self, net: DenseNet, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, l2=0.0):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.l2 = float(l2)
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in net.param_items()}
        self.v = {name: np.zeros_like(p) for name, p in net.param_items()}

    def step(self, net: DenseNet, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in net.param_items():
            if p.shape != grads[name].shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            g = grads[name]
            if self.l2:
                g = g + 2.0 * self.l2 * p
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite values in parameter {name}")
