"""Minimal dense-network numerics for the anomaly-detection model.

Fixed MLP topology, hand-differentiated: dense layers (affine -> optional
batch norm -> ReLU/identity), squared-error and softmax cross-entropy
losses, and a bias-corrected Adam optimizer. float64 is used by the test
suite and gradient checks; training runs in float32.

The elementwise hot loops live in aegm._kernels (compiled backend with a
numpy fallback); matrix products stay with numpy/BLAS in both backends.
"""

import numpy as np

from . import _kernels as K
from .errors import BadTarget, NoForwardCache, ShapeMismatch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_CLIP = 1e-7

# When True, every layer forward validates that its output is finite.
CHECK_FINITE = False


def glorot_uniform(out_dim, in_dim, rng, dtype):
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)


class BatchNorm:
    """Per-feature batch normalization state (gamma, beta, running stats)."""

    def __init__(self, dim, dtype=np.float32, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.gamma = np.ones(dim, dtype=dtype)
        self.beta = np.zeros(dim, dtype=dtype)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.eps = eps
        self.momentum = momentum


class DenseLayer:
    """Affine layer W (out x in), bias, optional BN, ReLU or identity."""

    def __init__(self, in_dim, out_dim, activation="relu", batch_norm=False,
                 rng=None, dtype=np.float32):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.W = glorot_uniform(out_dim, in_dim, rng, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.bn = BatchNorm(out_dim, dtype=dtype) if batch_norm else None

    def forward(self, x, train=False, update_stats=True):
        """Run the layer; returns (output, cache) where cache feeds backward.

        Train mode normalizes with batch statistics (and, unless
        update_stats is False, folds them into the running stats); eval
        mode uses the stored running statistics and mutates nothing.
        """
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"dense forward: got input {x.shape}, expected (*, {self.in_dim})")
        a = x @ self.W.T + self.b
        if self.bn is not None:
            if train:
                pre, xhat, mean, var, invstd = K.bn_forward_train(
                    a, self.bn.gamma, self.bn.beta, self.bn.eps)
                if update_stats:
                    mom = self.bn.momentum
                    self.bn.running_mean += mom * (mean - self.bn.running_mean)
                    self.bn.running_var += mom * (var - self.bn.running_var)
            else:
                invstd_r = 1.0 / np.sqrt(self.bn.running_var + self.bn.eps)
                xhat = None
                invstd = None
                pre = self.bn.gamma * ((a - self.bn.running_mean) * invstd_r) + self.bn.beta
        else:
            pre, xhat, invstd = a, None, None
        out = K.relu_forward(pre) if self.activation == "relu" else pre
        if CHECK_FINITE and not np.isfinite(out).all():
            raise FloatingPointError("non-finite layer output")
        cache = (x, xhat, invstd, pre, train)
        return out, cache

    def backward(self, cache, dy):
        """Backprop through the layer; returns (dx, grads dict)."""
        if cache is None:
            raise NoForwardCache("backward called without a forward cache")
        x, xhat, invstd, pre, train = cache
        if dy.shape != (x.shape[0], self.out_dim):
            raise ShapeMismatch(
                f"dense backward: upstream grad {dy.shape}, expected ({x.shape[0]}, {self.out_dim})")
        grads = {}
        if self.activation == "relu":
            dy = K.relu_backward(dy, pre)
        if self.bn is not None:
            if not train:
                raise NoForwardCache("backward requires a train-mode forward cache")
            da, dgamma, dbeta = K.bn_backward_train(dy, xhat, self.bn.gamma, invstd)
            grads["gamma"] = dgamma
            grads["beta"] = dbeta
        else:
            da = dy
        grads["W"] = da.T @ x
        grads["b"] = da.sum(axis=0)
        dx = da @ self.W
        return dx, grads

    def params(self):
        out = [("W", self.W), ("b", self.b)]
        if self.bn is not None:
            out += [("gamma", self.bn.gamma), ("beta", self.bn.beta)]
        return out

    def buffers(self):
        if self.bn is None:
            return []
        return [("running_mean", self.bn.running_mean),
                ("running_var", self.bn.running_var)]


class Mlp:
    """A stack of DenseLayers with explicit cache passing."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, update_stats=True):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, update_stats=update_stats)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dout):
        """Returns (dx, per-layer grads list, last layer first reversed back)."""
        if caches is None or len(caches) != len(self.layers):
            raise NoForwardCache("mlp backward: missing or mismatched caches")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dout, grads[i] = self.layers[i].backward(caches[i], dout)
        return dout, grads


def mse_loss(pred, target, reduction="mean"):
    """Squared error summed over features; mean or sum over rows.

    Returns (loss, gradient wrt pred).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred - target
    per_row = np.einsum("ij,ij->i", diff, diff)
    if reduction == "mean":
        n = pred.shape[0]
        return float(per_row.mean()), (2.0 / n) * diff
    if reduction == "sum":
        return float(per_row.sum()), 2.0 * diff
    raise ValueError(f"unknown reduction {reduction!r}")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean cross entropy over one-hot targets; returns (loss, dlogits).

    Probabilities are floored at PROB_CLIP inside the log only; the
    gradient is the exact (softmax - target) / batch of the unclipped
    loss, so the floor never distorts descent directions.
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"cross entropy: {logits.shape} vs {targets.shape}")
    if logits.shape[1] < 2:
        raise ShapeMismatch("cross entropy needs at least 2 classes")
    is_binary = (targets == 0) | (targets == 1)
    if not is_binary.all() or not (targets.sum(axis=1) == 1).all():
        raise BadTarget("targets must be one-hot rows")
    p = softmax(logits)
    n = logits.shape[0]
    p_true = np.einsum("ij,ij->i", p, targets)
    loss = float(-np.log(np.maximum(p_true, PROB_CLIP)).mean())
    grad = (p - targets) / n
    return loss, grad


class AdamState:
    """Bias-corrected Adam over a named parameter group."""

    def __init__(self, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}
        self._views = {}  # name -> (param flat view, m flat view, v flat view)

    def step(self, params, grads):
        """Update every (name, array) in params using grads[name], in place."""
        self.t += 1
        for name, p in params:
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"adam: grad {g.shape} vs param {p.shape} for {name}")
            views = self._views.get(name)
            if views is None or views[0].base is not p:
                self.m.setdefault(name, np.zeros_like(p))
                self.v.setdefault(name, np.zeros_like(p))
                views = (p.reshape(-1), self.m[name].reshape(-1),
                         self.v[name].reshape(-1))
                self._views[name] = views
            g = np.ascontiguousarray(g)
            K.adam_update(views[0], g.reshape(-1), views[1], views[2],
                          self.lr, self.beta1, self.beta2, self.eps, self.t)
