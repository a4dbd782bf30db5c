"""Neural building blocks on top of the tape: attention, encoder blocks,
parameter initialization, optimizer steps, and a central-difference
gradient checker.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted names;
insertion order is the canonical order for flattening and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import (
    ComputationRecord,
    DimensionError,
    NumericsError,
    Tensor,
    add,
    gelu,
    layer_norm_core,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

MASK_OFF = -1e30  # additive attention mask value; finite so forwards stay finite


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and masking contract for one attention site."""

    model_dim: int
    head_count: int
    causal: bool = False

    def __post_init__(self):
        if self.head_count < 1:
            raise DimensionError("head_count must be >= 1")
        if self.model_dim % self.head_count != 0:
            raise DimensionError(
                f"head_count {self.head_count} does not divide model_dim {self.model_dim}")


def causal_mask(n: int) -> np.ndarray:
    """Additive [n, n] mask: position i may attend to keys 0..i."""
    m = np.zeros((n, n), dtype=np.float64)
    m[np.triu_indices(n, k=1)] = MASK_OFF
    return m


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    dh = d // heads
    x = reshape(x, (*lead, t, heads, dh))
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(x, perm)  # [..., heads, t, dh]


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = transpose(x, perm)  # [..., t, h, dh]
    return reshape(x, (*lead, t, h * dh))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention over the last two axes ``[tokens, dim]``.

    ``q``/``k``/``v`` are already projected; leading axes batch.  ``mask``
    is an additive array broadcastable to the score shape.  Per-head
    score rows sum to one.  With ``cfg.causal`` queries never see later
    keys, exactly: masked scores are offset by a finite constant large
    enough that their softmax weight underflows to zero.
    """
    for t in (q, k, v):
        if t.shape[-1] != cfg.model_dim:
            raise DimensionError(
                f"attention input dim {t.shape[-1]} != model_dim {cfg.model_dim}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("key/value token counts differ")
    dh = cfg.model_dim // cfg.head_count
    qh = _split_heads(q, cfg.head_count)
    kh = _split_heads(k, cfg.head_count)
    vh = _split_heads(v, cfg.head_count)
    nd = kh.ndim
    scores = scale(matmul(qh, transpose(kh, tuple(range(nd - 2)) + (nd - 1, nd - 2))),
                   1.0 / np.sqrt(dh))
    total = None
    if cfg.causal:
        if q.shape[-2] != k.shape[-2]:
            raise DimensionError("causal attention requires square score matrix")
        total = causal_mask(q.shape[-2])
    if mask is not None:
        total = mask if total is None else total + mask
    if total is not None:
        scores = add(scores, Tensor(np.broadcast_to(total, scores.shape)))
    w = softmax(scores, axis=-1)
    out = _merge_heads(matmul(w, vh))
    if return_weights:
        return out, w.data.copy()
    return out


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return add(mul(layer_norm_core(x, eps), gain), bias)


def mlp(x: Tensor, params: dict, prefix: str, activation=relu) -> Tensor:
    """Two-layer perceptron ``w1/b1 -> activation -> w2/b2``."""
    h = activation(linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def attention_block(
    x: Tensor,
    params: dict,
    prefix: str,
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Pre-norm self-attention block with residuals: x + Att(LN(x)), then
    x + FF(LN(x)).  Zero weights reduce it to the identity."""
    p = params
    h = layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    q = linear(h, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = linear(h, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = linear(h, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    a = multi_head_attention(q, k, v, cfg, mask=mask)
    x = add(x, linear(a, p[f"{prefix}.wo"], p[f"{prefix}.bo"]))
    h2 = layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    f = linear(gelu(linear(h2, p[f"{prefix}.w1"], p[f"{prefix}.b1"])),
               p[f"{prefix}.w2"], p[f"{prefix}.b2"])
    return add(x, f)


def encoder(
    x: Tensor,
    params: dict,
    prefix: str,
    layers: int,
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Stack of pre-norm blocks followed by a final layer norm.

    With all block weights zero the output is exactly the layer-normed
    input (the residual path).
    """
    for i in range(layers):
        x = attention_block(x, params, f"{prefix}.layer{i}", cfg, mask=mask)
    return layer_norm(x, params[f"{prefix}.lnf.g"], params[f"{prefix}.lnf.b"])


# ---------------------------------------------------------------------------
# parameter initialization

def init_linear(params: dict, prefix: str, rng: np.random.Generator,
                n_in: int, n_out: int, bias: bool = True) -> None:
    params[f"{prefix}.w" if not prefix.endswith(".w") else prefix] = Tensor(
        rng.standard_normal((n_in, n_out)) / np.sqrt(n_in), requires_grad=True)
    if bias:
        params[f"{prefix}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def init_matrix(params: dict, name: str, rng: np.random.Generator,
                n_in: int, n_out: int) -> None:
    params[name] = Tensor(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in),
                          requires_grad=True)


def init_bias(params: dict, name: str, n: int) -> None:
    params[name] = Tensor(np.zeros(n), requires_grad=True)


def init_layer_norm(params: dict, prefix: str, dim: int) -> None:
    params[f"{prefix}.g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros(dim), requires_grad=True)


def init_attention_block(params: dict, prefix: str, rng: np.random.Generator,
                         dim: int, hidden: int) -> None:
    init_layer_norm(params, f"{prefix}.ln1", dim)
    for name in ("wq", "wk", "wv", "wo"):
        init_matrix(params, f"{prefix}.{name}", rng, dim, dim)
    for name in ("bq", "bk", "bv", "bo"):
        init_bias(params, f"{prefix}.{name}", dim)
    init_layer_norm(params, f"{prefix}.ln2", dim)
    init_matrix(params, f"{prefix}.w1", rng, dim, hidden)
    init_bias(params, f"{prefix}.b1", hidden)
    init_matrix(params, f"{prefix}.w2", rng, hidden, dim)
    init_bias(params, f"{prefix}.b2", dim)


def init_encoder(params: dict, prefix: str, rng: np.random.Generator,
                 dim: int, layers: int, hidden: int | None = None) -> None:
    hidden = 2 * dim if hidden is None else hidden
    for i in range(layers):
        init_attention_block(params, f"{prefix}.layer{i}", rng, dim, hidden)
    init_layer_norm(params, f"{prefix}.lnf", dim)


def init_mlp(params: dict, prefix: str, rng: np.random.Generator,
             n_in: int, n_hidden: int, n_out: int) -> None:
    init_matrix(params, f"{prefix}.w1", rng, n_in, n_hidden)
    init_bias(params, f"{prefix}.b1", n_hidden)
    init_matrix(params, f"{prefix}.w2", rng, n_hidden, n_out)
    init_bias(params, f"{prefix}.b2", n_out)


def zero_block_weights(params: dict, prefix: str) -> None:
    """Zero every attention/feed-forward weight of one block (test hook);
    layer norms keep their identity affine so the residual path survives."""
    for name in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo",
                 "w1", "b1", "w2", "b2"):
        key = f"{prefix}.{name}"
        if key in params:
            params[key].data[...] = 0.0


# ---------------------------------------------------------------------------
# optimizers


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.step = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def sgd_step(params: dict, grads: dict, lr: float) -> None:
    for name, tensor in params.items():
        g = grads.get(name)
        if g is not None:
            tensor.data -= lr * g


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, theta: Tensor, h: float = 1e-5,
               coords: np.ndarray | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps ``theta`` to a scalar Tensor.  The analytic gradient comes
    from one recorded forward/backward; each checked coordinate is then
    perturbed by ``+-h`` with ``f`` evaluated off-record.  The error for
    coordinate i is ``|analytic - numeric| / max(1, |analytic|)``.
    ``coords`` restricts the check to a subset of flat coordinates
    (the default checks all of them).
    """
    with ComputationRecord() as rec:
        out = f(theta)
    if out.data.size != 1:
        raise DimensionError("grad_check target must be scalar")
    if not np.all(np.isfinite(out.data)):
        raise NumericsError("grad_check target evaluated to a non-finite value")
    rec.backward(out)
    g = rec.grad(theta)
    if g is None:
        g = np.zeros_like(theta.data)
    flat = theta.data.reshape(-1)
    gflat = g.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    worst = 0.0
    for i in coords:
        keep = flat[i]
        flat[i] = keep + h
        fp = float(f(theta).data)
        flat[i] = keep - h
        fm = float(f(theta).data)
        flat[i] = keep
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericsError("grad_check: perturbed evaluation not finite")
        numeric = (fp - fm) / (2.0 * h)
        err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
        if err > worst:
            worst = err
    return worst
