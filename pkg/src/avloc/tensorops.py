"""Dense numeric kernels with hand-written backward passes.

Everything is float64. A "Tensor2D" is a 2-D, C-contiguous float64 ndarray
with finite entries; ParamSet is a named collection of such tensors with
shapes frozen at construction.

Forward kernels are pure functions; *_forward variants additionally return
the cache their *_backward counterpart consumes. There is no general
autograd: the network is small and fixed, and every hand gradient is
verified against central finite differences.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(ValueError):
    """A value that must be finite is NaN or infinite."""


def as_tensor2d(values, *, name: str = "tensor") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, copying only if needed."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


class ParamSet:
    """Named 2-D parameter tensors; names unique, shapes fixed after construction.

    Arrays that are already contiguous float64 are stored by reference, so a
    ParamSet can serve as a mutable view over tensors owned elsewhere (the
    training loop and the gradient checker rely on this).
    """

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._tensors: dict[str, np.ndarray] = {}
        for name, values in tensors.items():
            if name in self._tensors:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._tensors[name] = as_tensor2d(values, name=name)

    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def get(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def set(self, name: str, values: np.ndarray) -> None:
        current = self._tensors[name]
        arr = as_tensor2d(values, name=name)
        if arr.shape != current.shape:
            raise ShapeError(f"parameter {name!r} has shape {current.shape}, got {arr.shape}")
        self._tensors[name] = arr

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._tensors.items())

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._tensors.items()})

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)


# ---------------------------------------------------------------------------
# Elementwise and normalization kernels
# ---------------------------------------------------------------------------


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a vector: positive entries summing to 1."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError("softmax input contains non-finite entries")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a matrix."""
    if not np.isfinite(m).all():
        raise NonFiniteError("softmax input contains non-finite entries")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(d_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Gradient through row-wise softmax given upstream d(probs)."""
    inner = (d_probs * probs).sum(axis=1, keepdims=True)
    return probs * (d_probs - inner)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.tanh(x)
    return y, y


def tanh_backward(d_out: np.ndarray, cache: np.ndarray) -> np.ndarray:
    return d_out * (1.0 - cache * cache)


_LN_EPS = 1e-12


def layer_norm(x: np.ndarray) -> np.ndarray:
    """Normalize each row to mean 0 and unit variance (no affine parameters)."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS)


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Row layer norm with affine scale/shift; gamma and beta have shape (1, d)."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma)


def layer_norm_backward(d_out: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, gamma = cache
    d_gamma = (d_out * xhat).sum(axis=0, keepdims=True)
    d_beta = d_out.sum(axis=0, keepdims=True)
    d_xhat = d_out * gamma
    d_x = inv_std * (
        d_xhat
        - d_xhat.mean(axis=1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=1, keepdims=True)
    )
    return d_x, d_gamma, d_beta


# ---------------------------------------------------------------------------
# Linear and temporal-convolution kernels (features are columns: x is (d, T))
# ---------------------------------------------------------------------------


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = w @ x + b with x (d_in, T), w (d_out, d_in), b (d_out, 1)."""
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: weight {w.shape} incompatible with input {x.shape}")
    return w @ x + b, (x, w)


def linear_backward(d_out: np.ndarray, cache):
    x, w = cache
    d_w = d_out @ x.T
    d_b = d_out.sum(axis=1, keepdims=True)
    d_x = w.T @ d_out
    return d_x, d_w, d_b


def _im2col3(x: np.ndarray) -> np.ndarray:
    """Stack the t-1, t, t+1 columns (zero padded) into a (3*d, T) matrix."""
    d, t = x.shape
    col = np.zeros((3 * d, t), dtype=np.float64)
    col[d : 2 * d, :] = x
    col[0:d, 1:] = x[:, :-1]
    col[2 * d :, :-1] = x[:, 1:]
    return col


def conv1d3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Width-3 temporal convolution with same padding.

    x is (d_in, T); w is (d_out, 3*d_in) holding the three taps stacked
    [t-1 | t | t+1]; b is (d_out, 1).
    """
    if w.shape[1] != 3 * x.shape[0]:
        raise ShapeError(f"conv1d3: weight {w.shape} incompatible with input {x.shape}")
    col = _im2col3(x)
    return w @ col + b, (col, w, x.shape)


def conv1d3_backward(d_out: np.ndarray, cache):
    col, w, x_shape = cache
    d, t = x_shape
    d_w = d_out @ col.T
    d_b = d_out.sum(axis=1, keepdims=True)
    d_col = w.T @ d_out
    d_x = np.zeros((d, t), dtype=np.float64)
    d_x += d_col[d : 2 * d, :]
    d_x[:, :-1] += d_col[0:d, 1:]
    d_x[:, 1:] += d_col[2 * d :, :-1]
    return d_x, d_w, d_b


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Scaled dot-product attention; rows are sequence positions.

    q (n, d_k), k (m, d_k), v (m, d_v) -> context (n, d_v), weights (n, m).
    """
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: query dim {q.shape} != key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: key rows {k.shape} != value rows {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = (q @ k.T) * scale
    weights = softmax_rows(scores)
    context = weights @ v
    return context, weights, (q, k, v, weights, scale)


def attention_backward(d_context: np.ndarray, cache, d_weights: np.ndarray | None = None):
    q, k, v, weights, scale = cache
    d_v = weights.T @ d_context
    d_w = d_context @ v.T
    if d_weights is not None:
        d_w = d_w + d_weights
    d_scores = softmax_rows_backward(d_w, weights)
    d_q = (d_scores @ k) * scale
    d_k = (d_scores.T @ q) * scale
    return d_q, d_k, d_v


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Public single-shot attention: (context, row-stochastic weights)."""
    context, weights, _ = attention_forward(
        as_tensor2d(q, name="q"), as_tensor2d(k, name="k"), as_tensor2d(v, name="v")
    )
    return context, weights


def multi_head_attention_forward(
    x_q: np.ndarray,
    x_kv: np.ndarray,
    params: ParamSet,
    prefix: str,
    heads: int,
):
    """Blocked multi-head attention over row-major sequences.

    x_q (n, d) supplies queries, x_kv (m, d) supplies keys and values.
    Parameters {prefix}_wq/_wk/_wv/_wo are all (d, d); head h uses column
    block h of the projections. Returns (out (n, d), mean attention weights
    over heads (n, m), cache).
    """
    wq, wk, wv, wo = (params[f"{prefix}_{n}"] for n in ("wq", "wk", "wv", "wo"))
    d_model = x_q.shape[1]
    if d_model % heads != 0:
        raise ShapeError(f"model dim {d_model} not divisible by {heads} heads")
    q_all, k_all, v_all = x_q @ wq, x_kv @ wk, x_kv @ wv
    d_h = d_model // heads
    contexts, weight_sum, head_caches = [], None, []
    for h in range(heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        ctx, w, cache = attention_forward(q_all[:, sl], k_all[:, sl], v_all[:, sl])
        contexts.append(ctx)
        weight_sum = w if weight_sum is None else weight_sum + w
        head_caches.append(cache)
    concat = np.concatenate(contexts, axis=1)
    out = concat @ wo
    mean_weights = weight_sum / heads
    cache = (x_q, x_kv, concat, head_caches, params, prefix, heads, d_h)
    return out, mean_weights, cache


def multi_head_attention_backward(d_out: np.ndarray, cache):
    """Returns (d_x_q, d_x_kv, grads dict for the four projection matrices)."""
    x_q, x_kv, concat, head_caches, params, prefix, heads, d_h = cache
    wq, wk, wv, wo = (params[f"{prefix}_{n}"] for n in ("wq", "wk", "wv", "wo"))
    grads = {f"{prefix}_wo": concat.T @ d_out}
    d_concat = d_out @ wo.T
    d_q_all = np.zeros_like(x_q @ wq)
    d_k_all = np.zeros_like(x_kv @ wk)
    d_v_all = np.zeros_like(x_kv @ wv)
    for h in range(heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        d_q, d_k, d_v = attention_backward(d_concat[:, sl], head_caches[h])
        d_q_all[:, sl] = d_q
        d_k_all[:, sl] = d_k
        d_v_all[:, sl] = d_v
    grads[f"{prefix}_wq"] = x_q.T @ d_q_all
    grads[f"{prefix}_wk"] = x_kv.T @ d_k_all
    grads[f"{prefix}_wv"] = x_kv.T @ d_v_all
    d_x_q = d_q_all @ wq.T
    d_x_kv = d_k_all @ wk.T + d_v_all @ wv.T
    return d_x_q, d_x_kv, grads


# ---------------------------------------------------------------------------
# Initialization and gradient checking
# ---------------------------------------------------------------------------

_INIT_SCHEMES = ("zeros", "identity_like", "uniform_scaled")


def seeded_init(shape: tuple[int, int], seed: int, scheme: str = "uniform_scaled") -> np.ndarray:
    """Deterministic tensor initialization.

    uniform_scaled draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with
    fan_in = shape[1]; identity_like is a (possibly rectangular) identity.
    """
    rows, cols = int(shape[0]), int(shape[1])
    if rows < 1 or cols < 1:
        raise ShapeError(f"shape must be positive, got {shape}")
    if scheme == "zeros":
        return np.zeros((rows, cols), dtype=np.float64)
    if scheme == "identity_like":
        return np.eye(rows, cols, dtype=np.float64)
    if scheme == "uniform_scaled":
        bound = 1.0 / np.sqrt(cols)
        rng = np.random.default_rng(seed)
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float64)
    raise ValueError(f"unknown init scheme {scheme!r}; expected one of {_INIT_SCHEMES}")


LossFn = Callable[[ParamSet], "float | tuple[float, dict[str, np.ndarray]]"]


def finite_diff_grad_check(
    loss_fn: LossFn,
    params: ParamSet,
    epsilon: float = 1e-5,
    analytic_grads: dict[str, np.ndarray] | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    For every scalar parameter computes (f(t+eps) - f(t-eps)) / 2 eps and
    returns the worst relative error with denominator max(|ga|, |gn|, 1e-8).
    loss_fn may return a bare loss (then analytic_grads is required) or a
    (loss, grads) pair. It must be deterministic and smooth at this point.
    Parameters absent from the gradient dict are treated as zero gradient.
    """

    def evaluate(p: ParamSet) -> tuple[float, dict[str, np.ndarray] | None]:
        out = loss_fn(p)
        if isinstance(out, tuple):
            return float(out[0]), out[1]
        return float(out), None

    loss0, grads0 = evaluate(params)
    if not np.isfinite(loss0):
        raise NonFiniteError(f"loss is non-finite: {loss0}")
    grads = analytic_grads if analytic_grads is not None else grads0
    if grads is None:
        raise ValueError("need analytic gradients: pass analytic_grads or return (loss, grads)")
    worst = 0.0
    for name, tensor in params.items():
        analytic = grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            up, _ = evaluate(params)
            flat[i] = original - epsilon
            down, _ = evaluate(params)
            flat[i] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"perturbed loss non-finite at {name}[{i}]")
            numeric = (up - down) / (2.0 * epsilon)
            ga = float(analytic.reshape(-1)[i])
            denom = max(abs(ga), abs(numeric), 1e-8)
            worst = max(worst, abs(ga - numeric) / denom)
    return worst
