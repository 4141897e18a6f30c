"""Minimal CNN engine on (N, C, H, W) numpy arrays.

Layer set: 3x3 / 1x1 convolution (cross-correlation, stride 1, size
preserving), ReLU, batch norm, 2x2 max pool, 2x2 average unpool
(nearest-neighbor upsample), channel concat, MSE loss, and SGD with
momentum and weight decay. Every layer has an exact analytic backward.

A network is a NetworkSpec: an ordered list of LayerSpec nodes, each
naming its input layers ("input" refers to the network input). List order
is the topological order; skip connections are plain extra edges into
concat nodes.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import numpy_rng

_KINDS = {"conv3x3", "conv1x1", "relu", "batchnorm", "maxpool2",
          "avgunpool2", "concat"}


@dataclass
class LayerSpec:
    name: str
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    inputs: list = field(default_factory=lambda: ["input"])


@dataclass
class NetworkSpec:
    layers: list
    in_channels: int

    def __post_init__(self):
        seen = {"input": self.in_channels}
        for spec in self.layers:
            if spec.kind not in _KINDS:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            if spec.name in seen:
                raise ValueError(f"duplicate layer name {spec.name!r}")
            chans = []
            for src in spec.inputs:
                if src not in seen:
                    raise ValueError(
                        f"layer {spec.name!r} reads {src!r} before it exists")
                chans.append(seen[src])
            if spec.kind == "concat":
                expect = sum(chans)
            elif spec.kind in ("conv3x3", "conv1x1"):
                if spec.in_channels != chans[0]:
                    raise ValueError(
                        f"layer {spec.name!r}: in_channels {spec.in_channels}"
                        f" != upstream {chans[0]}")
                expect = spec.out_channels
            else:
                expect = chans[0]
            spec.in_channels = chans[0] if spec.kind != "concat" else sum(chans)
            spec.out_channels = expect
            seen[spec.name] = expect
        self.out_channels = seen[self.layers[-1].name] if self.layers else \
            self.in_channels


# ---------------------------------------------------------------------------
# layer primitives

def _win(x, k):
    """im2col view: (N, C, H, W, k, k) over a (k-1)//2-padded input."""
    p = (k - 1) // 2
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))


def conv2d(x, w, b):
    """Cross-correlation, stride 1, zero padding preserving spatial size."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("channel mismatch")
    k = w.shape[2]
    v = _win(x, k)
    y = np.einsum("nchwij,ocij->nohw", v, w, optimize=True)
    y += b[None, :, None, None]
    return y, (x, w, k)


def conv2d_backward(cache, dy):
    x, w, k = cache
    v = _win(x, k)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.einsum("nchwij,nohw->ocij", v, dy, optimize=True)
    dyv = _win(dy, k)
    dx = np.einsum("nohwij,ocij->nchw", dyv, w[:, :, ::-1, ::-1],
                   optimize=True)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0), (x > 0)


def relu_backward(cache, dy):
    return dy * cache


def batchnorm(x, gamma, beta, mode, running_mean, running_var,
              eps=1e-5, momentum=0.9):
    """Per-channel normalization. Train mode uses batch statistics and
    updates the running buffers in place; eval mode uses the buffers."""
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ValueError("train-mode batch norm needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv, gamma, mode)


def batchnorm_backward(cache, dy):
    xhat, inv, gamma, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    if mode == "train":
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        g = gamma[None, :, None, None] * inv[None, :, None, None]
        dx = g * (dy
                  - dbeta[None, :, None, None] / m
                  - xhat * dgamma[None, :, None, None] / m)
    else:
        dx = dy * gamma[None, :, None, None] * inv[None, :, None, None]
    return dx, dgamma, dbeta


def _blocks(x):
    n, c, h, w = x.shape
    return (x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4))


def maxpool2(x):
    """2x2 max pool; ties go to the first index in row-major block order."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError("maxpool2 requires even spatial dims")
    b = _blocks(x)
    arg = b.argmax(axis=4)
    y = np.take_along_axis(b, arg[..., None], axis=4)[..., 0]
    return y, (arg, x.shape)


def maxpool2_backward(cache, dy):
    arg, shape = cache
    n, c, h, w = shape
    db = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(db, arg[..., None], dy[..., None], axis=4)
    return (db.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w))


def avgunpool2(x):
    """Replicate each value into a 2x2 block (gain 4 vs the strict
    adjoint of average pooling; the following batch norm absorbs it)."""
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def avgunpool2_backward(cache, dy):
    # exact gradient of replication: each source cell collects the sum
    # over its 2x2 block
    n, c, h, w = cache
    return dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def concat(tensors):
    if len({t.shape[0] for t in tensors}) != 1 or \
       len({t.shape[2:] for t in tensors}) != 1:
        raise ValueError("concat inputs must share N, H, W")
    return np.concatenate(tensors, axis=1), [t.shape[1] for t in tensors]


def concat_backward(cache, dy):
    return np.split(dy, np.cumsum(cache)[:-1], axis=1)


def mse_loss(pred, target):
    d = pred - target
    loss = float(np.mean(d * d))
    grad = 2.0 * d / d.size
    return loss, grad


def sgd_step(params, grads, state, lr, momentum=0.9, weight_decay=1e-4):
    """In-place SGD: v <- mom*v + g + wd*p; p <- p - lr*v."""
    for name, p in params.items():
        for key, val in p.items():
            g = grads[name][key]
            if g.shape != val.shape:
                raise ValueError(f"gradient shape mismatch at {name}.{key}")
            v = state[name][key]
            v *= momentum
            v += g + weight_decay * val
            val -= lr * v


# ---------------------------------------------------------------------------
# graph execution

def init_params(net, seed, dtype=np.float64):
    """He-normal conv weights, identity batch norm; momentum buffers and
    batch-norm running stats to match."""
    params = {}
    state = {}
    bn_state = {}
    for i, spec in enumerate(net.layers):
        if spec.kind in ("conv3x3", "conv1x1"):
            k = 3 if spec.kind == "conv3x3" else 1
            fan_in = spec.in_channels * k * k
            rng = numpy_rng(seed, i)
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (spec.out_channels, spec.in_channels, k, k))
            params[spec.name] = {"w": w.astype(dtype),
                                 "b": np.zeros(spec.out_channels, dtype)}
        elif spec.kind == "batchnorm":
            c = spec.out_channels
            params[spec.name] = {"gamma": np.ones(c, dtype),
                                 "beta": np.zeros(c, dtype)}
            bn_state[spec.name] = {"mean": np.zeros(c, dtype),
                                   "var": np.ones(c, dtype)}
    for name, p in params.items():
        state[name] = {k: np.zeros_like(v) for k, v in p.items()}
    return params, state, bn_state


def forward(net, params, x, mode="eval", bn_state=None, keep_cache=None):
    """Topological execution. Returns (y, cache); cache is None in pure
    eval mode unless keep_cache is forced."""
    if x.shape[1] != net.in_channels:
        raise ValueError("input channel mismatch")
    if keep_cache is None:
        keep_cache = mode == "train"
    acts = {"input": x}
    cache = [] if keep_cache else None
    for spec in net.layers:
        ins = [acts[s] for s in spec.inputs]
        if spec.kind in ("conv3x3", "conv1x1"):
            y, c = conv2d(ins[0], params[spec.name]["w"],
                          params[spec.name]["b"])
        elif spec.kind == "relu":
            y, c = relu(ins[0])
        elif spec.kind == "batchnorm":
            bs = bn_state[spec.name]
            y, c = batchnorm(ins[0], params[spec.name]["gamma"],
                             params[spec.name]["beta"], mode,
                             bs["mean"], bs["var"])
        elif spec.kind == "maxpool2":
            y, c = maxpool2(ins[0])
        elif spec.kind == "avgunpool2":
            y, c = avgunpool2(ins[0])
        else:
            y, c = concat(ins)
        acts[spec.name] = y
        if keep_cache:
            cache.append(c)
    return acts[net.layers[-1].name], cache


def backward(net, params, cache, dy):
    """Reverse sweep; gradients accumulate across fan-out. Returns
    (grads dict, dx w.r.t. the network input)."""
    grads = {}
    dacc = {net.layers[-1].name: dy}
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        d = dacc.pop(spec.name, None)
        if d is None:
            continue  # dead branch
        c = cache[i]
        if spec.kind in ("conv3x3", "conv1x1"):
            dx, dw, db = conv2d_backward(c, d)
            grads[spec.name] = {"w": dw, "b": db}
            dins = [dx]
        elif spec.kind == "relu":
            dins = [relu_backward(c, d)]
        elif spec.kind == "batchnorm":
            dx, dg, dbta = batchnorm_backward(c, d)
            grads[spec.name] = {"gamma": dg, "beta": dbta}
            dins = [dx]
        elif spec.kind == "maxpool2":
            dins = [maxpool2_backward(c, d)]
        elif spec.kind == "avgunpool2":
            dins = [avgunpool2_backward(c, d)]
        else:
            dins = concat_backward(c, d)
        for src, dv in zip(spec.inputs, dins):
            if src in dacc:
                dacc[src] = dacc[src] + dv
            else:
                dacc[src] = dv
    return grads, dacc.get("input")
