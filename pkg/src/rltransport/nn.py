"""Minimal dense networks: forward, backpropagation and plain SGD.

Parameters of a :class:`TinyMLP` live in one flat float64 vector laid out
layer by layer as ``W`` (row-major, out x in) followed by ``b``.  The same
vector is what the compiled kernels read, and what gets serialized.
"""
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import ContractError, TrainingError
from .qmc import hashed_uniform

IDENTITY, RELU, SOFTMAX = 0, 1, 2
_ACT_CODES = {"identity": IDENTITY, "relu": RELU, "softmax": SOFTMAX}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_MAGIC = b"TMLP"


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(inline="always")
def softmax_inplace(v, start, n):
    m = v[start]
    for i in range(1, n):
        if v[start + i] > m:
            m = v[start + i]
    s = 0.0
    for i in range(n):
        e = math.exp(v[start + i] - m)
        v[start + i] = e
        s += e
    inv = 1.0 / s
    for i in range(n):
        v[start + i] *= inv


@njit(inline="always")
def mlp_forward(params, sizes, acts, offs, aoff, x, a, z):
    """Forward pass for one input; activations land in ``a``, pre-activations in ``z``."""
    n0 = sizes[0]
    for i in range(n0):
        a[i] = x[i]
    for l in range(acts.shape[0]):
        nin = sizes[l]
        nout = sizes[l + 1]
        wo = offs[l, 0]
        bo = offs[l, 1]
        ain = aoff[l]
        aout = aoff[l + 1]
        for j in range(nout):
            s = params[bo + j]
            row = wo + j * nin
            for i in range(nin):
                s += params[row + i] * a[ain + i]
            z[aout + j] = s
        act = acts[l]
        if act == RELU:
            for j in range(nout):
                v = z[aout + j]
                a[aout + j] = v if v > 0.0 else 0.0
        else:
            for j in range(nout):
                a[aout + j] = z[aout + j]
            if act == SOFTMAX:
                softmax_inplace(a, aout, nout)
    return a[aoff[acts.shape[0]]:aoff[acts.shape[0]] + sizes[acts.shape[0]]]


@njit(inline="always")
def mlp_backprop_delta(params, sizes, acts, offs, aoff, a, z, delta, grad):
    """Accumulate parameter gradients given dLoss/dz of the output layer in ``delta``."""
    for l in range(acts.shape[0] - 1, -1, -1):
        nin = sizes[l]
        nout = sizes[l + 1]
        wo = offs[l, 0]
        bo = offs[l, 1]
        ain = aoff[l]
        aout = aoff[l + 1]
        for j in range(nout):
            gz = delta[aout + j]
            if gz == 0.0:
                continue
            grad[bo + j] += gz
            row = wo + j * nin
            for i in range(nin):
                grad[row + i] += gz * a[ain + i]
        if l > 0:
            below = acts[l - 1]
            for i in range(nin):
                if below == RELU and z[ain + i] <= 0.0:
                    delta[ain + i] = 0.0
                    continue
                s = 0.0
                for j in range(nout):
                    s += params[wo + j * nin + i] * delta[aout + j]
                delta[ain + i] = s


@njit
def mlp_backward(params, sizes, acts, offs, aoff, a, z, dout, delta, grad):
    """Backpropagate dLoss/d(output activation) ``dout``."""
    L = acts.shape[0]
    top = aoff[L]
    n = sizes[L]
    act = acts[L - 1]
    if act == SOFTMAX:
        pg = 0.0
        for j in range(n):
            pg += a[top + j] * dout[j]
        for j in range(n):
            delta[top + j] = a[top + j] * (dout[j] - pg)
    elif act == RELU:
        for j in range(n):
            delta[top + j] = dout[j] if z[top + j] > 0.0 else 0.0
    else:
        for j in range(n):
            delta[top + j] = dout[j]
    mlp_backprop_delta(params, sizes, acts, offs, aoff, a, z, delta, grad)


@njit
def _apply_sgd(params, grad, lr):
    for k in range(grad.shape[0]):
        if not math.isfinite(grad[k]):
            return False
    for k in range(grad.shape[0]):
        params[k] -= lr * grad[k]
    return True


@njit(inline="always")
def train_batch(params, sizes, acts, offs, aoff, X, T, labels, W, idx, lr, nll, grad, a, z, delta):
    """One accumulated-gradient SGD step over rows ``idx``.

    Squared error uses targets ``T``; weighted negative log-likelihood uses
    ``labels`` and requires a softmax output.  Returns (pre-step mean loss, ok).
    """
    L = acts.shape[0]
    top = aoff[L]
    nout = sizes[L]
    B = idx.shape[0]
    for k in range(grad.shape[0]):
        grad[k] = 0.0
    loss = 0.0
    inv_b = 1.0 / B
    for r in range(B):
        s = idx[r]
        w = W[s]
        mlp_forward(params, sizes, acts, offs, aoff, X[s], a, z)
        if nll:
            lab = labels[s]
            p = a[top + lab]
            loss += -w * math.log(max(p, 1e-300))
            for j in range(nout):
                delta[top + j] = w * inv_b * a[top + j]
            delta[top + lab] -= w * inv_b
        else:
            act = acts[L - 1]
            pg = 0.0
            for j in range(nout):
                diff = a[top + j] - T[s, j]
                loss += w * diff * diff
                g = 2.0 * w * inv_b * diff
                if act == RELU and z[top + j] <= 0.0:
                    g = 0.0
                delta[top + j] = g
                pg += a[top + j] * g
            if act == SOFTMAX:
                for j in range(nout):
                    delta[top + j] = a[top + j] * (delta[top + j] - pg)
        mlp_backprop_delta(params, sizes, acts, offs, aoff, a, z, delta, grad)
    ok = math.isfinite(loss) and _apply_sgd(params, grad, lr)
    return loss * inv_b, ok


@njit
def shuffled(n, seed, epoch):
    """Deterministic Fisher-Yates permutation keyed by (seed, epoch)."""
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(hashed_uniform(epoch * 1000003 + i, 7, seed) * (i + 1))
        if j > i:
            j = i
        t = order[i]
        order[i] = order[j]
        order[j] = t
    return order


@njit
def train_epochs(params, sizes, acts, offs, aoff, X, T, labels, W, batch, rates, nll, seed, epoch0):
    """SGD over shuffled minibatches; ``rates[e]`` is the step size of epoch e.

    Returns (per-epoch mean loss, status); status is -1 on success or the
    first failing epoch index.
    """
    n = X.shape[0]
    grad = np.zeros(params.shape[0])
    tot = aoff[acts.shape[0]] + sizes[acts.shape[0]]
    a = np.zeros(tot)
    z = np.zeros(tot)
    delta = np.zeros(tot)
    losses = np.zeros(rates.shape[0])
    for e in range(rates.shape[0]):
        order = shuffled(n, seed, epoch0 + e)
        acc = 0.0
        nb = 0
        for s in range(0, n, batch):
            idx = order[s:min(s + batch, n)]
            l, ok = train_batch(params, sizes, acts, offs, aoff, X, T, labels, W, idx, rates[e], nll, grad, a, z, delta)
            if not ok:
                losses[e] = np.nan
                return losses, e
            acc += l
            nb += 1
        losses[e] = acc / max(nb, 1)
    return losses, -1


@njit
def forward_batch(params, sizes, acts, offs, aoff, X):
    L = acts.shape[0]
    tot = aoff[L] + sizes[L]
    a = np.zeros(tot)
    z = np.zeros(tot)
    out = np.zeros((X.shape[0], sizes[L]))
    for r in range(X.shape[0]):
        y = mlp_forward(params, sizes, acts, offs, aoff, X[r], a, z)
        for j in range(sizes[L]):
            out[r, j] = y[j]
    return out


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

def softmax(scores):
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def decayed_rate(base, step, total):
    """``base`` halved after every quarter of the ``total`` budget."""
    if total <= 0:
        return base
    return base * 0.5 ** min(3, int(4 * step / total))


@dataclass
class ForwardCache:
    a: np.ndarray
    z: np.ndarray
    net_id: int
    version: int


@dataclass
class MiniBatch:
    inputs: np.ndarray
    targets: np.ndarray = None  # (B, out) for squared error
    labels: np.ndarray = None  # (B,) class indices for weighted NLL
    weights: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(np.atleast_2d(self.inputs), dtype=np.float64)
        b = self.inputs.shape[0]
        if b == 0:
            raise ContractError("minibatch is empty")
        self.weights = np.ones(b) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (b,) or not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ContractError("minibatch weights must be finite, >= 0, one per sample")
        if self.targets is not None:
            self.targets = np.ascontiguousarray(np.atleast_2d(self.targets), dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)


class TinyMLP:
    """Fully connected network with explicit parameters."""

    def __init__(self, sizes, activations=None, seed=0, params=None, zero_output=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError("need at least input and output layer sizes")
        if activations is None:
            activations = ["relu"] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise ContractError("one activation per weight layer")
        if any(a not in _ACT_CODES for a in activations):
            raise ContractError(f"unknown activation in {activations}")
        if "softmax" in activations[:-1]:
            raise ContractError("softmax is only allowed on the output layer")
        self.sizes = sizes
        self.activations = list(activations)
        self._sizes = np.array(sizes, dtype=np.int64)
        self._acts = np.array([_ACT_CODES[a] for a in activations], dtype=np.int64)
        offs = []
        o = 0
        for nin, nout in zip(sizes[:-1], sizes[1:]):
            offs.append((o, o + nin * nout))
            o += nin * nout + nout
        self._offs = np.array(offs, dtype=np.int64)
        self._aoff = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_params = o
        self.version = 0
        if params is not None:
            params = np.array(params, dtype=np.float64)
            if params.shape != (o,):
                raise ContractError(f"expected {o} parameters, got {params.shape}")
            self.params = params
        else:
            self.params = self._init_params(seed, zero_output)

    def _init_params(self, seed, zero_output):
        rng = np.random.default_rng(seed)
        p = np.zeros(self.n_params)
        for l, (nin, nout) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if zero_output and l == len(self.sizes) - 2:
                continue
            lim = math.sqrt(6.0 / (nin + nout))
            wo = self._offs[l, 0]
            p[wo:wo + nin * nout] = rng.uniform(-lim, lim, nin * nout)
        return p

    # -- views ------------------------------------------------------------
    @property
    def weights(self):
        return [self.params[w:w + nout * nin].reshape(nout, nin)
                for (w, _), nin, nout in zip(self._offs, self.sizes[:-1], self.sizes[1:])]

    @property
    def biases(self):
        return [self.params[b:b + nout] for (_, b), nout in zip(self._offs, self.sizes[1:])]

    def kernel_args(self):
        return self.params, self._sizes, self._acts, self._offs, self._aoff

    def copy(self):
        return TinyMLP(self.sizes, self.activations, params=self.params.copy())

    # -- math -------------------------------------------------------------
    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.sizes[0],):
            raise ContractError(f"input arity {x.shape} does not match {self.sizes[0]}")
        a = np.zeros(self._aoff[-1])
        z = np.zeros(self._aoff[-1])
        out = mlp_forward(*self.kernel_args(), x, a, z)
        return np.array(out), ForwardCache(a, z, id(self), self.version)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.forward(x)[0]
        if x.shape[1] != self.sizes[0]:
            raise ContractError(f"input arity {x.shape[1]} does not match {self.sizes[0]}")
        return forward_batch(*self.kernel_args(), np.ascontiguousarray(x))

    def backward(self, cache, dout):
        if cache.net_id != id(self) or cache.version != self.version:
            raise ContractError("forward cache is stale or belongs to another network")
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != (self.sizes[-1],):
            raise ContractError("output gradient arity mismatch")
        grad = np.zeros(self.n_params)
        delta = np.zeros(self._aoff[-1])
        mlp_backward(*self.kernel_args(), cache.a, cache.z, dout, delta, grad)
        return grad

    def sgd_step(self, grads, rate):
        if not rate > 0:
            raise ContractError("learning rate must be positive")
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != self.params.shape:
            raise ContractError("gradient shape mismatch")
        if not _apply_sgd(self.params, grads, float(rate)):
            raise TrainingError("non-finite gradient; SGD step rejected")
        self.version += 1
        return self

    def _check_batch(self, batch, loss):
        if batch.inputs.shape[1] != self.sizes[0]:
            raise ContractError("batch input arity mismatch")
        if loss == "nll":
            if self.activations[-1] != "softmax":
                raise ContractError("weighted NLL needs a softmax output layer")
            if batch.labels is None or np.any(batch.labels < 0) or np.any(batch.labels >= self.sizes[-1]):
                raise ContractError("NLL batch needs labels in range")
            return np.zeros((1, 1)), batch.labels
        if loss != "squared":
            raise ContractError(f"unknown loss {loss!r}")
        if batch.targets is None or batch.targets.shape != (batch.inputs.shape[0], self.sizes[-1]):
            raise ContractError("squared-error batch needs (B, out) targets")
        return batch.targets, np.zeros(1, dtype=np.int64)

    def train_minibatch(self, batch, loss="squared", rate=1e-2):
        """One SGD step on the whole batch; returns the pre-step mean loss."""
        if not rate > 0:
            raise ContractError("learning rate must be positive")
        T, labels = self._check_batch(batch, loss)
        tot = self._aoff[-1]
        idx = np.arange(batch.inputs.shape[0])
        backup = self.params.copy()
        value, ok = train_batch(*self.kernel_args(), batch.inputs, T, labels, batch.weights, idx, float(rate),
                                loss == "nll", np.zeros(self.n_params), np.zeros(tot), np.zeros(tot), np.zeros(tot))
        if not ok:
            self.params[:] = backup
            raise TrainingError("non-finite loss or gradient; SGD step rejected")
        self.version += 1
        return float(value)

    def fit(self, batch, loss="squared", epochs=1, rate=1e-2, batch_size=64, seed=0, epoch0=0, decay=True):
        """Minibatch SGD over ``batch`` for ``epochs`` passes; returns per-epoch mean loss."""
        T, labels = self._check_batch(batch, loss)
        rates = np.array([decayed_rate(rate, e, epochs) if decay else rate for e in range(epochs)])
        losses, failed = train_epochs(*self.kernel_args(), batch.inputs, T, labels, batch.weights,
                                      int(batch_size), rates, loss == "nll", int(seed), int(epoch0))
        self.version += 1
        if failed >= 0:
            raise TrainingError(f"non-finite loss in epoch {failed}")
        return losses

    # -- serialization ----------------------------------------------------
    def to_bytes(self):
        n = len(self.sizes)
        header = _MAGIC + struct.pack(f"<II{n}I{n - 1}I", 1, n, *self.sizes, *self._acts.tolist())
        return header + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse one network blob; returns (net, bytes consumed)."""
        if buf[offset:offset + 4] != _MAGIC:
            raise ContractError("not a TinyMLP blob")
        version, n = struct.unpack_from("<II", buf, offset + 4)
        pos = offset + 12
        sizes = struct.unpack_from(f"<{n}I", buf, pos)
        pos += 4 * n
        codes = struct.unpack_from(f"<{n - 1}I", buf, pos)
        pos += 4 * (n - 1)
        count = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        params = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
        net = cls(sizes, [_ACT_NAMES[c] for c in codes], params=params)
        return net, pos + 8 * net.n_params - offset

    def metadata(self):
        return {"format": "tinymlp", "version": 1, "layer_sizes": self.sizes, "activations": self.activations,
                "dtype": "<f8", "parameter_count": self.n_params}

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())[0]
