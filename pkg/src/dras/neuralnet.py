"""Five-layer scheduling network: a 1x2 convolution shared across rows, two
leaky-ReLU dense layers and a policy (masked softmax) or Q (scalar) head.

Everything is float64 numpy. ``forward`` accepts one state ``(rows, 2)`` or
a batch ``(B, rows, 2)``; gradients from a batch are summed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation, FormatError, NumericError, ShapeError

BLOCKS = ("conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b", "out_w", "out_b")
HEADS = {"policy": 0, "q": 1}
MAGIC = b"DRAS"
VERSION = 1
_HEADER = struct.Struct("<4sII4Id")


@dataclass(eq=False)
class NetworkParams:
    conv_w: np.ndarray
    conv_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    head: str = "policy"
    leaky_slope: float = 0.01
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ShapeError(f"unknown head {self.head!r}")
        rows, h1 = self.fc1_w.shape
        h2 = self.fc2_w.shape[1]
        expected = {
            "conv_w": (2,), "conv_b": (1,), "fc1_w": (rows, h1), "fc1_b": (h1,),
            "fc2_w": (h1, h2), "fc2_b": (h2,), "out_w": (h2, self.n_out), "out_b": (self.n_out,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.head == "q" and self.n_out != 1:
            raise ShapeError("q head must have a single output")

    @property
    def dims(self):
        """(conv_rows, H1, H2, O)."""
        return (self.fc1_w.shape[0], self.fc1_w.shape[1], self.fc2_w.shape[1], self.n_out)

    @property
    def n_out(self):
        return self.out_w.shape[1]

    def blocks(self):
        return {name: getattr(self, name) for name in BLOCKS}

    def copy(self):
        return NetworkParams(**{k: v.copy() for k, v in self.blocks().items()},
                             head=self.head, leaky_slope=self.leaky_slope)

    def equals(self, other):
        return (self.head == other.head and self.leaky_slope == other.leaky_slope
                and all(np.array_equal(a, b) for a, b in zip(self.blocks().values(),
                                                            other.blocks().values())))


def init_params(rows, hidden1, hidden2, n_out, head="policy", seed=0, leaky_slope=0.01,
                scale=None):
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.

    ``scale`` overrides the per-layer bound (used by gradient checks).
    """
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in, fan_out):
        bound = scale if scale is not None else np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    if head == "q":
        n_out = 1
    return NetworkParams(
        conv_w=uniform((2,), 2, 1),
        conv_b=np.zeros(1) if scale is None else uniform((1,), 2, 1),
        fc1_w=uniform((rows, hidden1), rows, hidden1),
        fc1_b=np.zeros(hidden1) if scale is None else uniform((hidden1,), rows, hidden1),
        fc2_w=uniform((hidden1, hidden2), hidden1, hidden2),
        fc2_b=np.zeros(hidden2) if scale is None else uniform((hidden2,), hidden1, hidden2),
        out_w=uniform((hidden2, n_out), hidden2, n_out),
        out_b=np.zeros(n_out) if scale is None else uniform((n_out,), hidden2, n_out),
        head=head,
        leaky_slope=leaky_slope,
    )


def count_parameters(params):
    return int(sum(b.size for b in params.blocks().values()))


def count_parameters_for(rows, hidden1, hidden2, n_out):
    return 3 + rows * hidden1 + hidden1 + hidden1 * hidden2 + hidden2 + hidden2 * n_out + n_out


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _check_finite(name, x):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values after {name}")


@dataclass
class ForwardCache:
    params: NetworkParams
    version: int
    batched: bool
    x: np.ndarray
    z0: np.ndarray
    a0: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    logits: np.ndarray
    output: np.ndarray
    mask: np.ndarray | None


def masked_softmax(logits, mask=None):
    """Softmax over the entries where ``mask`` is true; others get exactly 0."""
    logits = np.atleast_2d(logits)
    if mask is None:
        mask = np.ones_like(logits, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=1).all():
        raise ContractViolation("valid mask has no true entry")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def forward(params, x, head=None, valid_mask=None):
    """Return ``(output, cache)``.

    Policy head output is a probability vector (``(B, O)`` for batches); q head
    output is the scalar Q value (``(B,)`` for batches).
    """
    if head is not None and head != params.head:
        raise ShapeError(f"network has a {params.head} head, {head} requested")
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 3
    xb = x if batched else x[None]
    rows = params.fc1_w.shape[0]
    if xb.ndim != 3 or xb.shape[2] != 2:
        raise ShapeError(f"input must be (rows, 2) or (B, rows, 2), got {x.shape}")
    if xb.shape[1] != rows:
        raise ShapeError(f"input has {xb.shape[1]} rows, network expects {rows}")
    s = params.leaky_slope
    z0 = xb @ params.conv_w + params.conv_b[0]
    a0 = _leaky(z0, s)
    z1 = a0 @ params.fc1_w + params.fc1_b
    a1 = _leaky(z1, s)
    _check_finite("fc1", a1)
    z2 = a1 @ params.fc2_w + params.fc2_b
    a2 = _leaky(z2, s)
    _check_finite("fc2", a2)
    logits = a2 @ params.out_w + params.out_b
    _check_finite("output layer", logits)
    mask = None
    if params.head == "policy":
        if valid_mask is not None:
            mask = np.asarray(valid_mask, dtype=bool)
            mask = np.broadcast_to(mask if mask.ndim == 2 else mask[None], logits.shape)
        out = masked_softmax(logits, mask)
    else:
        out = logits[:, 0]
    cache = ForwardCache(params, params.version, batched, xb, z0, a0, z1, a1, z2, a2, logits,
                         out, mask)
    return (out if batched else out[0]), cache


def backward(params, cache, output_grad=None, logits_grad=None):
    """Reverse-mode gradients of a scalar loss for every parameter block.

    Pass ``output_grad`` (dL/d output, same shape as ``forward``'s output) or,
    for the policy head, ``logits_grad`` (dL/d pre-softmax logits).
    """
    if cache.params is not params or cache.version != params.version:
        raise ContractViolation("forward cache is stale for these parameters")
    if (output_grad is None) == (logits_grad is None):
        raise ValueError("pass exactly one of output_grad and logits_grad")
    s = params.leaky_slope
    if logits_grad is not None:
        d_logits = np.asarray(logits_grad, dtype=float).reshape(cache.logits.shape)
    else:
        g = np.asarray(output_grad, dtype=float)
        if params.head == "policy":
            g = g.reshape(cache.output.shape)
            p = cache.output
            d_logits = p * (g - (p * g).sum(axis=1, keepdims=True))
        else:
            d_logits = g.reshape(-1, 1)
    grads = {}
    grads["out_w"] = cache.a2.T @ d_logits
    grads["out_b"] = d_logits.sum(axis=0)
    d_a2 = d_logits @ params.out_w.T
    d_z2 = d_a2 * np.where(cache.z2 > 0, 1.0, s)
    grads["fc2_w"] = cache.a1.T @ d_z2
    grads["fc2_b"] = d_z2.sum(axis=0)
    d_a1 = d_z2 @ params.fc2_w.T
    d_z1 = d_a1 * np.where(cache.z1 > 0, 1.0, s)
    grads["fc1_w"] = cache.a0.T @ d_z1
    grads["fc1_b"] = d_z1.sum(axis=0)
    d_a0 = d_z1 @ params.fc1_w.T
    d_z0 = d_a0 * np.where(cache.z0 > 0, 1.0, s)
    grads["conv_w"] = np.einsum("br,brk->k", d_z0, cache.x)
    grads["conv_b"] = np.array([d_z0.sum()])
    return {k: grads[k] for k in BLOCKS}


@dataclass(eq=False)
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls({k: np.zeros_like(b) for k, b in params.blocks().items()},
                   {k: np.zeros_like(b) for k, b in params.blocks().items()}, **kw)

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()},
                         self.step, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state, lr=0.001, direction="descend"):
    """One bias-corrected Adam update, in place. ``ascend`` maximizes."""
    if direction not in ("ascend", "descend"):
        raise ValueError(f"direction must be ascend or descend, got {direction!r}")
    for k in BLOCKS:
        if grads[k].shape != getattr(params, k).shape:
            raise ShapeError(f"gradient {k} has shape {grads[k].shape}")
        if not np.isfinite(grads[k]).all():
            raise NumericError(f"non-finite gradient in {k}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    sign = -1.0 if direction == "ascend" else 1.0
    for k in BLOCKS:
        g = sign * grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr != 0.0:
            p = getattr(params, k)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    params.version += 1
    return params, state


def save_model(params, state, path):
    rows, h1, h2, o = params.dims
    if state is None:
        state = AdamState.zeros_like(params)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, HEADS[params.head], rows, h1, h2, o,
                              params.leaky_slope))
        for k in BLOCKS:
            fh.write(np.ascontiguousarray(getattr(params, k), dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", state.step))
        for moments in (state.m, state.v):
            for k in BLOCKS:
                fh.write(np.ascontiguousarray(moments[k], dtype="<f8").tobytes())


def _block_shapes(rows, h1, h2, o):
    return {"conv_w": (2,), "conv_b": (1,), "fc1_w": (rows, h1), "fc1_b": (h1,),
            "fc2_w": (h1, h2), "fc2_b": (h2,), "out_w": (h2, o), "out_b": (o,)}


def load_model(path):
    """Return ``(params, adam_state)``; FormatError on any inconsistency."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for header")
    magic, version, head_kind, rows, h1, h2, o, slope = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    heads = {v: k for k, v in HEADS.items()}
    if head_kind not in heads:
        raise FormatError(f"unknown head kind {head_kind}")
    if min(rows, h1, h2, o) < 1 or (heads[head_kind] == "q" and o != 1):
        raise FormatError(f"invalid dims {(rows, h1, h2, o)}")
    shapes = _block_shapes(rows, h1, h2, o)
    n = sum(int(np.prod(s)) for s in shapes.values())
    expected = _HEADER.size + 8 * n + 8 + 16 * n
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(data)}")
    off = _HEADER.size

    def read_blocks():
        nonlocal off
        out = {}
        for k, shape in shapes.items():
            size = int(np.prod(shape))
            out[k] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
        return out

    blocks = read_blocks()
    (step,) = struct.unpack_from("<Q", data, off)
    off += 8
    m = read_blocks()
    v = read_blocks()
    params = NetworkParams(**blocks, head=heads[head_kind], leaky_slope=slope)
    return params, AdamState(m, v, step)


def _kinks(cache):
    return [np.sign(cache.z0), np.sign(cache.z1), np.sign(cache.z2)]


def gradient_check(params, x, output_grad, valid_mask=None, step=1e-5):
    """Compare ``backward`` with central differences of ``sum(output * output_grad)``.

    Returns ``{block: relative error}`` with the error of a block measured as
    ``max|a - n| / max(max|a|, max|n|, 1e-8)``. Entries whose +-step
    perturbation moves any pre-activation across a leaky-ReLU kink are
    skipped, since the loss is not differentiable there.
    """
    g = np.asarray(output_grad, dtype=float)
    out, cache = forward(params, x, valid_mask=valid_mask)
    analytic = backward(params, cache, output_grad=g)
    base = _kinks(cache)
    errors = {}
    for name in BLOCKS:
        block = getattr(params, name)
        flat = block.reshape(-1)
        a_vals, n_vals = [], []
        for i in range(flat.size):
            orig = flat[i]
            losses, smooth = [], True
            for delta in (step, -step):
                flat[i] = orig + delta
                o, c = forward(params, x, valid_mask=valid_mask)
                losses.append(float((o * g).sum()))
                smooth &= all(np.array_equal(s, t) for s, t in zip(base, _kinks(c)))
            flat[i] = orig
            if smooth:
                a_vals.append(analytic[name].reshape(-1)[i])
                n_vals.append((losses[0] - losses[1]) / (2 * step))
        if not a_vals:
            continue
        a, n = np.array(a_vals), np.array(n_vals)
        errors[name] = float(np.abs(a - n).max() / max(np.abs(a).max(), np.abs(n).max(), 1e-8))
    return errors
