"""Forecasting models with hand-written backward passes.

All models map a batch ``x`` of shape (B, L, m) to predictions (B, H, m).
Parameters live in ``model.params`` (name -> float64 array); the affine weight
matrices among them are wrapped as :class:`SparseLayerState` in
``model.layers`` and carry the masks the controllers edit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .numerics import DTYPE, DimensionError
from .sparsity import LayerMask, SparseLayerState


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "dlinear"
    lookback: int = 96
    horizon: int = 96
    n_vars: int = 1
    hidden: tuple = (64,)
    d_model: int = 32
    d_ff: int = 64
    moving_avg_kernel: int = 25
    fast_matmul: bool = False

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.n_vars) < 1:
            raise ValueError("lookback, horizon and n_vars must be >= 1")
        if self.moving_avg_kernel < 1 or self.moving_avg_kernel % 2 == 0:
            raise ValueError(f"moving average kernel must be odd, got {self.moving_avg_kernel}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- seasonal/trend decomposition ------------------------------------------

def _moving_average_matrix(length, kernel):
    """Row t averages x over [t - p, t + p] with edge replication, p = kernel // 2."""
    p = kernel // 2
    a = np.zeros((length, length), dtype=DTYPE)
    rows = np.arange(length)
    for off in range(-p, p + 1):
        np.add.at(a, (rows, np.clip(rows + off, 0, length - 1)), 1.0)
    return a / kernel


def series_decompose(x, kernel):
    """Splits ``x`` (..., L, m) into (trend, seasonal) along the time axis.

    The trend is a centred moving average with the first/last value repeated
    as padding; the seasonal part is the remainder.
    """
    x = np.asarray(x, dtype=DTYPE)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    p = kernel // 2
    L = x.shape[-2]
    idx = np.clip(np.arange(-p, L + p), 0, L - 1)
    padded = x[..., idx, :]
    trend = np.zeros_like(x)
    for off in range(kernel):
        trend += padded[..., off:off + L, :]
    trend /= kernel
    return trend, x - trend


class ForecastModel:
    """Shared parameter bookkeeping; subclasses provide forward/backward."""

    def __init__(self, config):
        self.config = config
        self.params = {}
        self.sparse_names = []
        self.aux_names = []
        self.layers = []
        self.grads = {}
        self._cache = None

    # parameter registration
    def _add(self, name, value, sparse=False):
        self.params[name] = np.ascontiguousarray(value, dtype=DTYPE)
        if sparse:
            self.sparse_names.append(name)
            w = self.params[name]
            self.layers.append(SparseLayerState(name, w, LayerMask(np.ones(w.shape, bool))))
        else:
            self.aux_names.append(name)

    def layer(self, name):
        return self.layers[self.sparse_names.index(name)]

    def apply_masks(self):
        for layer in self.layers:
            layer.weights[~layer.mask.bits] = 0.0

    def _store_grads(self, grads):
        self.grads = grads
        for layer in self.layers:
            layer.last_grad = grads[layer.name]
        return grads

    def predict(self, x, batch_size=None):
        """Forward pass without keeping a cache; optional chunking over the batch."""
        x = np.asarray(x, dtype=DTYPE)
        if batch_size is None or len(x) <= batch_size:
            out = self.forward(x)
        else:
            out = np.concatenate([self.forward(x[i:i + batch_size])
                                  for i in range(0, len(x), batch_size)])
        self._cache = None
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=DTYPE)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.lookback, c.n_vars):
            raise DimensionError(f"expected input (B, {c.lookback}, {c.n_vars}), got {x.shape}")
        return x

    def _check_grad_out(self, g, batch):
        c = self.config
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != (batch, c.horizon, c.n_vars):
            raise DimensionError(f"expected output gradient ({batch}, {c.horizon}, "
                                 f"{c.n_vars}), got {g.shape}")
        return g

    # state copies for best-checkpoint tracking
    def state_dict(self):
        return {
            "params": {k: v.copy() for k, v in self.params.items()},
            "masks": {l.name: l.mask.bits.copy() for l in self.layers},
        }

    def load_state_dict(self, state):
        for k, v in state["params"].items():
            if self.params[k].shape != v.shape:
                raise DimensionError(f"parameter {k!r}: checkpoint shape {v.shape}, "
                                     f"model shape {self.params[k].shape}")
            self.params[k][...] = v
        for layer in self.layers:
            layer.mask = LayerMask(state["masks"][layer.name].copy())

    def flops_per_sample(self):
        raise NotImplementedError


class DLinear(ForecastModel):
    """Decomposition-linear forecaster with channel-shared seasonal and trend maps."""

    def __init__(self, config, rng):
        super().__init__(config)
        L, H = config.lookback, config.horizon
        self._add("seasonal.weight", _uniform_init(rng, (H, L), L), sparse=True)
        self._add("seasonal.bias", _uniform_init(rng, (H,), L))
        self._add("trend.weight", _uniform_init(rng, (H, L), L), sparse=True)
        self._add("trend.bias", _uniform_init(rng, (H,), L))

    def forward(self, x):
        x = self._check_input(x)
        B, L, m = x.shape
        c = self.config
        trend, seasonal = series_decompose(x, c.moving_avg_kernel)
        # (B, L, m) -> (B*m, L): every channel is an independent row
        s_rows = seasonal.transpose(0, 2, 1).reshape(B * m, L)
        t_rows = trend.transpose(0, 2, 1).reshape(B * m, L)
        p = self.params
        y = (nx.affine_forward(s_rows, p["seasonal.weight"], p["seasonal.bias"], c.fast_matmul)
             + nx.affine_forward(t_rows, p["trend.weight"], p["trend.bias"], c.fast_matmul))
        self._cache = (B, s_rows, t_rows)
        return y.reshape(B, m, c.horizon).transpose(0, 2, 1)

    def backward(self, grad_out, need_input_grad=False):
        B, s_rows, t_rows = self._cache
        c = self.config
        g = self._check_grad_out(grad_out, B)
        g_rows = g.transpose(0, 2, 1).reshape(B * c.n_vars, c.horizon)
        p = self.params
        gs_x, gs_w, gs_b = nx.affine_backward(s_rows, p["seasonal.weight"], g_rows,
                                              need_input_grad, c.fast_matmul)
        gt_x, gt_w, gt_b = nx.affine_backward(t_rows, p["trend.weight"], g_rows,
                                              need_input_grad, c.fast_matmul)
        grads = self._store_grads({"seasonal.weight": gs_w, "seasonal.bias": gs_b,
                                   "trend.weight": gt_w, "trend.bias": gt_b})
        if need_input_grad:
            # seasonal = (I - A) x, trend = A x with A the moving-average operator
            a = _moving_average_matrix(c.lookback, c.moving_avg_kernel)
            gx_rows = gs_x + nx.matmul(gt_x - gs_x, a, c.fast_matmul)
            self.grad_input = gx_rows.reshape(B, c.n_vars, c.lookback).transpose(0, 2, 1)
        return grads

    def flops_per_sample(self):
        m = self.config.n_vars
        return sum(2 * l.mask.active_count * m for l in self.layers)


class MLP(ForecastModel):
    """Flattened-window MLP with ReLU hidden layers."""

    def __init__(self, config, rng):
        super().__init__(config)
        dims = [config.lookback * config.n_vars, *config.hidden, config.horizon * config.n_vars]
        self.n_affine = len(dims) - 1
        for i in range(self.n_affine):
            self._add(f"fc{i}.weight", _uniform_init(rng, (dims[i + 1], dims[i]), dims[i]), sparse=True)
            self._add(f"fc{i}.bias", _uniform_init(rng, (dims[i + 1],), dims[i]))

    def forward(self, x):
        x = self._check_input(x)
        B = x.shape[0]
        c = self.config
        h = x.reshape(B, -1)
        inputs, pre = [], []
        for i in range(self.n_affine):
            inputs.append(h)
            z = nx.affine_forward(h, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"],
                                  c.fast_matmul)
            pre.append(z)
            h = nx.relu_forward(z) if i < self.n_affine - 1 else z
        self._cache = (B, inputs, pre)
        return h.reshape(B, c.horizon, c.n_vars)

    def backward(self, grad_out, need_input_grad=False):
        B, inputs, pre = self._cache
        c = self.config
        g = self._check_grad_out(grad_out, B).reshape(B, -1)
        grads = {}
        for i in reversed(range(self.n_affine)):
            if i < self.n_affine - 1:
                g = nx.relu_backward(pre[i], g)
            need_x = i > 0 or need_input_grad
            g_x, grads[f"fc{i}.weight"], grads[f"fc{i}.bias"] = nx.affine_backward(
                inputs[i], self.params[f"fc{i}.weight"], g, need_x, c.fast_matmul)
            g = g_x
        if need_input_grad:
            self.grad_input = g.reshape(B, c.lookback, c.n_vars)
        return self._store_grads(grads)

    def flops_per_sample(self):
        return sum(2 * l.mask.active_count for l in self.layers)


class MiniTransformer(ForecastModel):
    """One encoder layer, single-head attention, last-token readout.

    tokens -> input projection + positional embedding -> self-attention ->
    residual + layernorm -> ReLU FFN -> residual + layernorm -> readout of the
    final token to H*m outputs.
    """

    _projections = ("in_proj", "q_proj", "k_proj", "v_proj", "out_proj", "ff1", "ff2", "readout")

    def __init__(self, config, rng):
        super().__init__(config)
        m, d, f, L = config.n_vars, config.d_model, config.d_ff, config.lookback
        shapes = {"in_proj": (d, m), "q_proj": (d, d), "k_proj": (d, d), "v_proj": (d, d),
                  "out_proj": (d, d), "ff1": (f, d), "ff2": (d, f),
                  "readout": (config.horizon * m, d)}
        for name in self._projections:
            out_dim, in_dim = shapes[name]
            self._add(f"{name}.weight", _uniform_init(rng, (out_dim, in_dim), in_dim), sparse=True)
            self._add(f"{name}.bias", _uniform_init(rng, (out_dim,), in_dim))
        self._add("pos_embedding", 0.02 * rng.standard_normal((L, d)))
        for ln in ("ln1", "ln2"):
            self._add(f"{ln}.gamma", np.ones(d))
            self._add(f"{ln}.beta", np.zeros(d))

    def _affine(self, name, x):
        p = self.params
        return nx.affine_forward(x, p[f"{name}.weight"], p[f"{name}.bias"], self.config.fast_matmul)

    def forward(self, x):
        x = self._check_input(x)
        B, L, m = x.shape
        c, p = self.config, self.params
        d = c.d_model
        tokens = x.reshape(B * L, m)
        h0 = self._affine("in_proj", tokens) + np.tile(p["pos_embedding"], (B, 1))
        q, k, v = (self._affine(n, h0) for n in ("q_proj", "k_proj", "v_proj"))
        scale = 1.0 / math.sqrt(d)
        attn = np.empty((B, L, L))
        ctx = np.empty((B * L, d))
        for b in range(B):
            rows = slice(b * L, (b + 1) * L)
            attn[b] = nx.softmax_forward(nx.matmul(q[rows], k[rows].T, c.fast_matmul) * scale)
            ctx[rows] = nx.matmul(attn[b], v[rows], c.fast_matmul)
        r1 = h0 + self._affine("out_proj", ctx)
        h1, ln1 = nx.layernorm_forward(r1, p["ln1.gamma"], p["ln1.beta"])
        f1 = self._affine("ff1", h1)
        a1 = nx.relu_forward(f1)
        r2 = h1 + self._affine("ff2", a1)
        h2, ln2 = nx.layernorm_forward(r2, p["ln2.gamma"], p["ln2.beta"])
        last = h2.reshape(B, L, d)[:, -1, :]
        out = self._affine("readout", last)
        self.attention = attn
        self._cache = (B, tokens, h0, q, k, v, attn, ctx, h1, ln1, f1, a1, ln2, last)
        return out.reshape(B, c.horizon, m)

    def backward(self, grad_out, need_input_grad=False):
        B, tokens, h0, q, k, v, attn, ctx, h1, ln1, f1, a1, ln2, last = self._cache
        c, p = self.config, self.params
        L, d = c.lookback, c.d_model
        fast = c.fast_matmul
        grads = {}

        def affine_back(name, x_in, g, need_x=True):
            g_x, grads[f"{name}.weight"], grads[f"{name}.bias"] = nx.affine_backward(
                x_in, p[f"{name}.weight"], g, need_x, fast)
            return g_x

        g = self._check_grad_out(grad_out, B).reshape(B, -1)
        g_last = affine_back("readout", last, g)
        g_h2 = np.zeros((B, L, d))
        g_h2[:, -1, :] = g_last
        g_r2, grads["ln2.gamma"], grads["ln2.beta"] = nx.layernorm_backward(
            g_h2.reshape(B * L, d), ln2)
        g_a1 = affine_back("ff2", a1, g_r2)
        g_h1 = g_r2 + affine_back("ff1", h1, nx.relu_backward(f1, g_a1))
        g_r1, grads["ln1.gamma"], grads["ln1.beta"] = nx.layernorm_backward(g_h1, ln1)
        g_ctx = affine_back("out_proj", ctx, g_r1)

        scale = 1.0 / math.sqrt(d)
        g_q = np.empty_like(q)
        g_k = np.empty_like(k)
        g_v = np.empty_like(v)
        for b in range(B):
            rows = slice(b * L, (b + 1) * L)
            g_attn = nx.matmul(g_ctx[rows], v[rows].T, fast)
            g_v[rows] = nx.matmul(attn[b].T, g_ctx[rows], fast)
            g_scores = nx.softmax_backward(attn[b], g_attn) * scale
            g_q[rows] = nx.matmul(g_scores, k[rows], fast)
            g_k[rows] = nx.matmul(g_scores.T, q[rows], fast)

        g_h0 = (g_r1 + affine_back("q_proj", h0, g_q) + affine_back("k_proj", h0, g_k)
                + affine_back("v_proj", h0, g_v))
        grads["pos_embedding"] = g_h0.reshape(B, L, d).sum(axis=0)
        g_tokens = affine_back("in_proj", tokens, g_h0, need_input_grad)
        if need_input_grad:
            self.grad_input = g_tokens.reshape(B, L, c.n_vars)
        return self._store_grads(grads)

    def flops_per_sample(self):
        c = self.config
        L, d = c.lookback, c.d_model
        total = 0
        for layer in self.layers:
            per_token = layer.name != "readout.weight"
            total += 2 * layer.mask.active_count * (L if per_token else 1)
        # scores, softmax (exp, sum, divide) and attention-weighted values, always dense
        total += 2 * L * L * d + 3 * L * L + 2 * L * L * d
        return total


MODEL_KINDS = {"dlinear": DLinear, "mlp": MLP, "mini_transformer": MiniTransformer}


def build_model(config, rng):
    try:
        cls = MODEL_KINDS[config.kind]
    except KeyError:
        raise ValueError(f"unknown model kind {config.kind!r}; "
                         f"choose from {sorted(MODEL_KINDS)}") from None
    return cls(config, rng)


def count_params(model, nonzero_only=False):
    """Sparsifiable weights (active ones only if ``nonzero_only``) plus all auxiliaries."""
    aux = sum(model.params[n].size for n in model.aux_names)
    if nonzero_only:
        return aux + sum(l.mask.active_count for l in model.layers)
    return aux + sum(l.size for l in model.layers)


def count_flops(model, n_samples):
    """Theoretical inference FLOPs: 2 per active multiply, times ``n_samples``."""
    return model.flops_per_sample() * int(n_samples)
