"""Action loss with analytic gradients, a small tanh MLP trained by manual
backprop + SGD with momentum, and a central-difference gradient checker.

Loss per sample::

    total = |dx_hat - dx| + |dth_hat - dth| + BCE(g_hat, g) + lambda_d * |d(dx_hat) - d(dx)|
    d(x)  = x / (|x| + eps)

Gradients are taken with respect to ``(dx_hat, dth_hat, gripper_logit)``.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimMismatch
from .tensorio import Tensor, atomic_write, dump_json, load_tensor, save_tensor

EPS = 1e-6
BCE_CLAMP = 1e-7
OUT_DIM = 7


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


@dataclass(frozen=True)
class ActionPrediction:
    dx_hat: np.ndarray
    dtheta_hat: np.ndarray
    g_hat: float
    g_logit: float = None

    @classmethod
    def from_output(cls, out):
        out = np.asarray(out, dtype=np.float64)
        return cls(out[:3].copy(), out[3:6].copy(), float(sigmoid(out[6])), float(out[6]))


@dataclass(frozen=True)
class LossReport:
    l_t: float
    l_r: float
    l_g: float
    l_d: float
    total: float
    grad: np.ndarray


def _norm_unit(e):
    n = np.linalg.norm(e, axis=-1)
    safe = np.where(n > 0, n, 1.0)
    return n, np.where((n > 0)[..., None], e / safe[..., None], 0.0)


def direction(x, eps=EPS):
    x = np.asarray(x, dtype=np.float64)
    return x / (np.linalg.norm(x, axis=-1, keepdims=True) + eps)


def loss_terms(dx_hat, dth_hat, g_hat, dx, dth, g, lambda_d=1.0, eps=EPS):
    """Vectorized loss over a leading batch axis.

    Returns ``(l_t, l_r, l_g, l_d, total, grad)`` with ``grad`` of shape ``(B, 7)``.
    A zero residual contributes a zero (sub)gradient; a clamped gripper
    probability contributes zero logit gradient.
    """
    if eps <= 0 or lambda_d < 0:
        raise DataError("eps must be > 0 and lambda_d >= 0")
    dx_hat = np.atleast_2d(dx_hat)
    dth_hat = np.atleast_2d(dth_hat)
    dx = np.atleast_2d(dx)
    dth = np.atleast_2d(dth)
    g_hat = np.atleast_1d(np.asarray(g_hat, dtype=np.float64))
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))

    l_t, grad_t = _norm_unit(dx_hat - dx)
    l_r, grad_r = _norm_unit(dth_hat - dth)

    gc = np.clip(g_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    l_g = -(g * np.log(gc) + (1.0 - g) * np.log(1.0 - gc))
    clamped = (g_hat < BCE_CLAMP) | (g_hat > 1.0 - BCE_CLAMP)
    grad_logit = np.where(clamped, 0.0, g_hat - g)

    nh = np.linalg.norm(dx_hat, axis=-1)
    r = dx_hat / (nh + eps)[:, None] - direction(dx, eps)
    l_d, ur = _norm_unit(r)
    # J = I / (n + eps) - x x^T / (n (n + eps)^2), symmetric; second term -> 0 as n -> 0.
    safe = np.where(nh > 0, nh, 1.0)
    proj = np.where(nh > 0, np.sum(dx_hat * ur, axis=-1) / (safe * (nh + eps) ** 2), 0.0)
    grad_d = ur / (nh + eps)[:, None] - dx_hat * proj[:, None]

    total = l_t + l_r + l_g + lambda_d * l_d
    grad = np.concatenate(
        [grad_t + lambda_d * grad_d, grad_r, grad_logit[:, None]], axis=-1
    )
    return l_t, l_r, l_g, l_d, total, grad


def action_loss(pred, target, lambda_d=1.0, eps=EPS):
    terms = loss_terms(
        pred.dx_hat, pred.dtheta_hat, pred.g_hat, target.dx, target.dtheta, target.g, lambda_d, eps
    )
    l_t, l_r, l_g, l_d, total = (float(v[0]) for v in terms[:5])
    return LossReport(l_t, l_r, l_g, l_d, total, terms[5][0])


def action_loss_from_output(out, target, lambda_d=1.0, eps=EPS):
    """Loss as a function of the raw 7-vector ``(dx_hat, dth_hat, logit)``."""
    return action_loss(ActionPrediction.from_output(out), target, lambda_d, eps)


# --- MLP -----------------------------------------------------------------------


@dataclass(frozen=True)
class Mlp:
    """Affine layers with tanh between them; the last layer is linear with 7 outputs
    (3 dx, 3 dtheta, 1 gripper logit)."""

    layers: tuple

    def __post_init__(self):
        layers = tuple((np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)) for W, b in self.layers)
        if not layers:
            raise DimMismatch("MLP needs at least one layer")
        for i, (W, b) in enumerate(layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimMismatch(f"layer {i}: bias does not match weight rows")
            if i and W.shape[1] != layers[i - 1][0].shape[0]:
                raise DimMismatch(f"layer {i} input {W.shape[1]} != previous output")
        if layers[-1][0].shape[0] != OUT_DIM:
            raise DimMismatch(f"output layer must have {OUT_DIM} units")
        object.__setattr__(self, "layers", layers)

    @property
    def sizes(self):
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @classmethod
    def init(cls, sizes, rng):
        """Glorot-uniform weights from ``rng``, zero biases."""
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = (rng.uniform_array(fan_in * fan_out) * 2.0 - 1.0) * lim
            layers.append((W.reshape(fan_out, fan_in), np.zeros(fan_out)))
        return cls(tuple(layers))

    @classmethod
    def zeros(cls, sizes):
        return cls(tuple((np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes, sizes[1:])))


def mlp_forward_batch(net, X):
    """Forward a ``(B, in)`` batch; returns raw outputs ``(B, 7)`` and the activations."""
    a = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if a.shape[1] != net.sizes[0]:
        raise DimMismatch(f"input dim {a.shape[1]} != {net.sizes[0]}")
    acts = [a]
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        z = a @ W.T + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return a, acts


def mlp_forward(net, x):
    out, acts = mlp_forward_batch(net, np.asarray(x, dtype=np.float64)[None])
    return ActionPrediction.from_output(out[0]), acts


def mlp_backward(net, acts, grad_out):
    """Parameter gradients given ``dLoss/dOutput`` of shape ``(B, 7)``."""
    grads = [None] * len(net.layers)
    delta = grad_out
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i:
            delta = (delta @ W) * (1.0 - acts[i] ** 2)
    return grads


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    dx: np.ndarray
    dtheta: np.ndarray
    g: np.ndarray

    @classmethod
    def from_pairs(cls, pairs):
        xs, acts = zip(*pairs)
        return cls(
            np.stack([np.asarray(x, dtype=np.float64) for x in xs]),
            np.stack([a.dx for a in acts]),
            np.stack([a.dtheta for a in acts]),
            np.array([a.g for a in acts]),
        )

    def take(self, idx):
        return Batch(self.inputs[idx], self.dx[idx], self.dtheta[idx], self.g[idx])

    def __len__(self):
        return len(self.inputs)


def batch_loss(net, batch, lambda_d=1.0, eps=EPS):
    """Mean loss report over a batch plus the cached activations and per-sample grads."""
    out, acts = mlp_forward_batch(net, batch.inputs)
    terms = loss_terms(out[:, :3], out[:, 3:6], sigmoid(out[:, 6]), batch.dx, batch.dtheta, batch.g, lambda_d, eps)
    l_t, l_r, l_g, l_d, total, grad = terms
    report = LossReport(
        float(l_t.mean()), float(l_r.mean()), float(l_g.mean()), float(l_d.mean()),
        float(total.mean()), grad.mean(axis=0),
    )
    return report, acts, grad


def mlp_train_step(net, batch, lambda_d=1.0, eps=EPS, lr=1e-2, momentum=0.9, velocity=None):
    """One SGD-with-momentum step on the batch-mean loss.

    ``v <- momentum * v - lr * grad; w <- w + v``.  Returns
    ``(new_net, new_velocity, report)`` where the report is for the
    pre-update weights; the input network is left untouched.
    """
    if lr < 0 or not 0.0 <= momentum < 1.0:
        raise DataError("lr must be >= 0 and momentum in [0, 1)")
    if not isinstance(batch, Batch):
        batch = Batch.from_pairs(batch)
    report, acts, grad = batch_loss(net, batch, lambda_d, eps)
    grads = mlp_backward(net, acts, grad / len(batch))
    if velocity is None:
        velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.layers]
    new_v, new_layers = [], []
    for (W, b), (vW, vb), (gW, gb) in zip(net.layers, velocity, grads):
        vW = momentum * vW - lr * gW
        vb = momentum * vb - lr * gb
        new_v.append((vW, vb))
        new_layers.append((W + vW, b + vb))
    return Mlp(tuple(new_layers)), new_v, report


def mlp_param_vector(net):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in net.layers])


def mlp_from_vector(sizes, vec):
    layers, off = [], 0
    for i, o in zip(sizes, sizes[1:]):
        W = vec[off : off + i * o].reshape(o, i)
        off += i * o
        layers.append((W, vec[off : off + o]))
        off += o
    return Mlp(tuple(layers))


def grad_check(f, grad, x, h=1e-5):
    """Max relative error between ``grad(x)`` and central differences of ``f``.

    Relative error per component is ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad(x), dtype=np.float64)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        num = (f(x + e) - f(x - e)) / (2.0 * h)
        a = analytic.flat[i]
        worst = max(worst, abs(a - num) / (abs(a) + abs(num) + 1e-12))
    return worst


# --- persistence -------------------------------------------------------------------


def save_mlp(prefix, net):
    """Write ``<prefix>.json`` topology and one 4DTN file per weight/bias."""
    prefix = Path(prefix)
    files = []
    for i, (W, b) in enumerate(net.layers):
        for name, arr in (("W", W), ("b", b)):
            p = prefix.with_name(f"{prefix.name}.layer{i}.{name}.4dtn")
            save_tensor(p, Tensor.from_array(arr, "f64"))
            files.append(p.name)
    topo = {"sizes": net.sizes, "hidden_activation": "tanh", "gripper": "sigmoid", "files": files}
    atomic_write(prefix.with_name(prefix.name + ".json"), dump_json(topo))


def load_mlp(prefix):
    prefix = Path(prefix)
    topo = json.loads(prefix.with_name(prefix.name + ".json").read_text())
    arrays = [load_tensor(prefix.with_name(f)).array for f in topo["files"]]
    return Mlp(tuple(zip(arrays[0::2], arrays[1::2])))
