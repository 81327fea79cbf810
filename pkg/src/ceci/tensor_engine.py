"""Dense float64 layers with hand-written backward passes, Adam, and a gradient checker.

Every layer follows the same small protocol: ``forward(x, ctx)`` caches what it
needs and returns the output, ``backward(grad)`` fills ``grads`` for its
parameters and returns the gradient with respect to ``x``. ``ctx`` carries the
batch-level state shared by all layers (adjacency, softmax groups, mode, rng).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteError, ShapeError


def normalize_adjacency(edges: Iterable[tuple[int, int]], n: int) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for an already symmetric edge list over ``n`` nodes."""
    edges = list(edges)
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise ShapeError(f"edge ({u},{v}) out of range for {n} nodes")
    pairs = {(u, v) for u, v in edges if u != v}
    pairs.update((i, i) for i in range(n))
    rows, cols = (np.array(v, dtype=np.int64) for v in zip(*sorted(pairs))) if pairs else (np.zeros(0, np.int64),) * 2
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    # one rounding per entry: 1 / sqrt(d_u * d_v) rather than a product of two roots
    values = 1.0 / np.sqrt(deg[rows] * deg[cols])
    out = sp.csr_matrix((values, (rows, cols)), shape=(n, n))
    out.sort_indices()
    return out


@dataclass
class Context:
    adj: sp.csr_matrix | None = None
    groups: Sequence[tuple[np.ndarray, range]] = ()
    train: bool = False
    rng: np.random.Generator | None = None


def _check_2d(name, x, cols=None):
    if x.ndim != 2 or (cols is not None and x.shape[1] != cols):
        want = f"(*, {cols})" if cols is not None else "2-D"
        raise ShapeError(f"{name}: expected {want}, got shape {x.shape}")


# --- functional kernels -------------------------------------------------------

def gcn_forward(adj, h, w):
    _check_2d("gcn input", h, w.shape[0])
    if adj.shape != (h.shape[0], h.shape[0]):
        raise ShapeError(f"gcn: adjacency {adj.shape} does not match {h.shape[0]} nodes")
    return adj @ (h @ w)


def gcn_backward(grad_out, adj, h, w):
    propagated = adj.T @ grad_out
    return propagated @ w.T, h.T @ propagated


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def dropout_mask(shape, p, rng):
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Returns (out, cache). In train mode the running buffers are updated in place."""
    if train:
        n = x.shape[0]
        # constant channels take their value as the mean so they normalize to exactly 0
        mean = np.where(np.ptp(x, axis=0) == 0, x[0], x.mean(axis=0)) if n else x.mean(axis=0)
        var = np.mean((x - mean) ** 2, axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, train)


def batchnorm_backward(grad_out, cache):
    xhat, inv_std, gamma, train = cache
    grad_gamma = np.sum(grad_out * xhat, axis=0)
    grad_beta = np.sum(grad_out, axis=0)
    dxhat = grad_out * gamma
    if not train:
        return dxhat * inv_std, grad_gamma, grad_beta
    n = grad_out.shape[0]
    grad_x = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return grad_x, grad_gamma, grad_beta


def group_softmax_forward(z, groups):
    """Softmax within each (rows, slot range) block; every other entry stays exactly 0."""
    out = np.zeros_like(z)
    for rows, slots in groups:
        if len(rows) == 0:
            continue
        block = z[rows, slots.start:slots.stop]
        block = block - block.max(axis=1, keepdims=True)
        e = np.exp(block)
        out[rows, slots.start:slots.stop] = e / e.sum(axis=1, keepdims=True)
    return out


def group_softmax_backward(grad_out, y, groups):
    grad = np.zeros_like(grad_out)
    for rows, slots in groups:
        if len(rows) == 0:
            continue
        g = grad_out[rows, slots.start:slots.stop]
        yb = y[rows, slots.start:slots.stop]
        grad[rows, slots.start:slots.stop] = yb * (g - np.sum(g * yb, axis=1, keepdims=True))
    return grad


def mse_loss(pred, target, mask):
    """Mean squared error over masked entries only; returns (loss, d loss / d pred)."""
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeError(f"mse: shapes {pred.shape}, {target.shape}, {mask.shape} differ")
    count = float(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(pred)
    diff = (pred - target) * mask
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


# --- layers -------------------------------------------------------------------

class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, ctx: Context):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


def glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GCNConv(Layer):
    def __init__(self, fan_in, fan_out, rng):
        super().__init__()
        self.params["W"] = glorot(rng, fan_in, fan_out)

    def forward(self, x, ctx):
        self._cache = (ctx.adj, x)
        return gcn_forward(ctx.adj, x, self.params["W"])

    def backward(self, grad):
        adj, x = self._cache
        grad_x, self.grads["W"] = gcn_backward(grad, adj, x, self.params["W"])
        return grad_x


class Linear(Layer):
    def __init__(self, fan_in, fan_out, rng):
        super().__init__()
        self.params["W"] = glorot(rng, fan_in, fan_out)
        self.params["b"] = np.zeros(fan_out)

    def forward(self, x, ctx):
        _check_2d("linear input", x, self.params["W"].shape[0])
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = self._x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T


class BatchNorm(Layer):
    def __init__(self, width, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(width)
        self.params["beta"] = np.zeros(width)
        self.buffers["running_mean"] = np.zeros(width)
        self.buffers["running_var"] = np.ones(width)

    def forward(self, x, ctx):
        _check_2d("batchnorm input", x, self.params["gamma"].shape[0])
        out, self._cache = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            ctx.train, self.momentum, self.eps,
        )
        return out

    def backward(self, grad):
        grad_x, self.grads["gamma"], self.grads["beta"] = batchnorm_backward(grad, self._cache)
        return grad_x


class ReLU(Layer):
    def forward(self, x, ctx):
        self._x = x
        return relu_forward(x)

    def backward(self, grad):
        return relu_backward(grad, self._x)

    def active(self):
        return self._x > 0


class Dropout(Layer):
    def __init__(self, p=0.5):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, ctx):
        if not ctx.train or self.p == 0:
            self._mask = None
            return x
        self._mask = dropout_mask(x.shape, self.p, ctx.rng)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class GroupSoftmax(Layer):
    def forward(self, x, ctx):
        self._groups = ctx.groups
        self._y = group_softmax_forward(x, ctx.groups)
        return self._y

    def backward(self, grad):
        return group_softmax_backward(grad, self._y, self._groups)


class Sequential(Layer):
    def __init__(self, layers: Sequence[tuple[str, Layer]]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, ctx):
        for _, layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, grad):
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named(self, attr):
        out = {}
        for prefix, layer in self.layers:
            for k, v in getattr(layer, attr).items():
                out[f"{prefix}.{k}"] = v
        return out

    def parameters(self):
        return self.named("params")

    def gradients(self):
        return self.named("grads")

    def state_buffers(self):
        return self.named("buffers")


# --- optimizer ----------------------------------------------------------------

@dataclass
class Adam:
    """Adam with bias correction.

    ``decay_mode="weight_decay"`` adds ``decay * param`` to each gradient;
    ``decay_mode="schedule"`` instead shrinks the step size as ``lr / (1 + decay * t)``.
    """

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 5e-6
    decay_mode: str = "weight_decay"
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decay_mode not in ("weight_decay", "schedule"):
            raise ValueError(f"unknown decay mode {self.decay_mode!r}")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"{name}: non-finite gradient, step refused")
        lr = self.lr
        if self.decay_mode == "schedule":
            lr = self.lr / (1.0 + self.decay * self.t)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if self.decay_mode == "weight_decay" and self.decay:
                g = g + self.decay * p
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --- gradient checking --------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str = ""

    def __float__(self):
        return self.max_rel_error


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], float],
    wrt: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
    signature: Callable[[], object] | None = None,
    floor: float = 1e-6,
) -> GradCheckResult:
    """Central differences of ``loss_fn`` against ``analytic`` for every entry of ``wrt``.

    Arrays in ``wrt`` are perturbed in place and restored. If ``signature`` is
    given (e.g. ReLU activity patterns), entries whose perturbation changes it
    straddle a kink and are skipped rather than compared.
    """
    base_sig = signature() if signature else None
    worst, where = 0.0, ""
    checked = skipped = 0
    for name, arr in wrt.items():
        grad = analytic[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            f_plus = loss_fn()
            sig_plus = signature() if signature else None
            flat[i] = old - eps
            f_minus = loss_fn()
            sig_minus = signature() if signature else None
            flat[i] = old
            if signature and not (_same(sig_plus, base_sig) and _same(sig_minus, base_sig)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            err = relative_error(float(grad.reshape(-1)[i]), numeric, floor)
            checked += 1
            if err > worst:
                worst, where = err, f"{name}[{i}]"
    return GradCheckResult(worst, checked, skipped, where)


def _same(a, b):
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def check_module(module: Layer, x: np.ndarray, ctx_factory: Callable[[], Context], seed=0, eps=1e-5, check_input=True):
    """Gradient-check ``module`` under the scalar loss sum(forward(x) * R) for a fixed random R.

    ``ctx_factory`` must return an equivalent context on every call (including a
    freshly seeded rng) so that stochastic layers repeat their masks.
    """
    x = np.array(x, dtype=np.float64)
    out = module.forward(x, ctx_factory())
    proj = np.random.default_rng(seed).standard_normal(out.shape)

    def loss():
        return float(np.sum(module.forward(x, ctx_factory()) * proj))

    loss()
    grad_x = module.backward(proj)
    wrt = dict(module.params) if not isinstance(module, Sequential) else module.parameters()
    analytic = dict(module.grads) if not isinstance(module, Sequential) else module.gradients()
    analytic = {k: v.copy() for k, v in analytic.items()}
    if check_input:
        wrt["input"] = x
        analytic["input"] = grad_x.copy()

    # reads the activity left behind by the most recent loss() call
    def signature():
        layers = module.layers if isinstance(module, Sequential) else [("", module)]
        return [l.active() for _, l in layers if isinstance(l, ReLU)]

    return grad_check(loss, wrt, analytic, eps=eps, signature=signature)
