"""Policy/value network and A2C updates in plain numpy.

Architecture: three 3x3 convolutions (16, 32, 64 filters, stride 1, same
padding, ReLU), flatten, a tanh dense layer, then a policy head (one logit
per destination cell plus the bomb action) and a scalar value head.  The
trunk is shared, so actor and critic gradients land on the same tensors.

Internally activations are NHWC; the public input is the CHW feature tensor
produced by :func:`combat.representation.encode`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = dict[str, np.ndarray]

PARAM_ORDER = (
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b",
    "fc.w", "fc.b", "pi.w", "pi.b", "v.w", "v.b",
)


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    board_size: int = 11
    in_channels: int = 11
    conv_channels: tuple[int, ...] = (16, 32, 64)
    hidden: int = 256

    @property
    def num_actions(self) -> int:
        return self.board_size * self.board_size + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        c_in = self.in_channels
        for k, c_out in enumerate(self.conv_channels, start=1):
            out[f"conv{k}.w"] = (c_out, c_in, 3, 3)
            out[f"conv{k}.b"] = (c_out,)
            c_in = c_out
        flat = c_in * self.board_size * self.board_size
        out["fc.w"] = (flat, self.hidden)
        out["fc.b"] = (self.hidden,)
        out["pi.w"] = (self.hidden, self.num_actions)
        out["pi.b"] = (self.num_actions,)
        out["v.w"] = (self.hidden, 1)
        out["v.b"] = (1,)
        return out


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> Params:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def infer_spec(params: Mapping[str, np.ndarray]) -> NetworkSpec:
    convs = []
    k = 1
    while f"conv{k}.w" in params:
        convs.append(params[f"conv{k}.w"].shape[0])
        k += 1
    n_act = params["pi.w"].shape[1]
    n = int(round(np.sqrt(n_act - 1)))
    in_ch = params["conv1.w"].shape[1] if convs else params["fc.w"].shape[0] // (n * n)
    spec = NetworkSpec(n, in_ch, tuple(convs), params["fc.w"].shape[1])
    check_shapes(params, spec)
    return spec


def check_shapes(params: Mapping[str, np.ndarray], spec: NetworkSpec) -> None:
    for name, shape in spec.shapes().items():
        if name not in params:
            raise ShapeError(f"missing tensor {name}")
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {tuple(params[name].shape)}")


# ---------------------------------------------------------------------------
# layers


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, C*9) patches under same padding."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    return win.reshape(b * h * w, c * 9)


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    b, h, w, c = shape
    d = dcols.reshape(b, h, w, c, 3, 3)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += d[..., i, j]
    return dxp[:, 1:-1, 1:-1, :]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def _forward(params: Params, x: np.ndarray, keep: bool):
    if x.ndim == 3:
        x = x[None]
    n = x.shape[-1]
    depth = _depth(params)
    if depth:
        spec_in, c_last = params["conv1.w"].shape[1], params[f"conv{depth}.w"].shape[0]
    else:  # no conv trunk: the dense layer reads the input directly
        spec_in = c_last = x.shape[1] if x.ndim == 4 else -1
    if x.ndim != 4 or x.shape[1] != spec_in or x.shape[2] != n:
        raise ShapeError(f"input shape {x.shape} does not match {spec_in} channels")
    if params["fc.w"].shape[0] != c_last * n * n:
        raise ShapeError(f"network was built for a different board than {n}x{n}")
    dtype = params["fc.w"].dtype
    h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=dtype)
    cache = []
    for k in range(1, depth + 1):
        w = params[f"conv{k}.w"]
        cols = _im2col(h)
        z = cols @ w.reshape(w.shape[0], -1).T + params[f"conv{k}.b"]
        z = z.reshape(h.shape[0], n, n, w.shape[0])
        if keep:
            cache.append((cols, h.shape, z))
        h = np.maximum(z, 0)
    flat = h.reshape(h.shape[0], -1)
    hid = np.tanh(flat @ params["fc.w"] + params["fc.b"])
    logits = hid @ params["pi.w"] + params["pi.b"]
    value = (hid @ params["v.w"] + params["v.b"])[:, 0]
    if keep:
        cache.append((flat, hid))
    return logits, value, cache


def _depth(params) -> int:
    k = 0
    while f"conv{k + 1}.w" in params:
        k += 1
    return k


def forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and value for one CHW tensor, or a batch stacked on axis 0.

    A single input gives ``(logits[A], value scalar)``.
    """
    single = x.ndim == 3
    logits, value, _ = _forward(params, x, keep=False)
    if single:
        return logits[0], value[0]
    return logits, value


def _backward(params: Params, cache, dlogits: np.ndarray, dvalue: np.ndarray) -> Params:
    flat, hid = cache[-1]
    g: Params = {}
    g["pi.w"] = hid.T @ dlogits
    g["pi.b"] = dlogits.sum(axis=0)
    g["v.w"] = hid.T @ dvalue[:, None]
    g["v.b"] = np.array([dvalue.sum()])
    dhid = dlogits @ params["pi.w"].T + dvalue[:, None] @ params["v.w"].T
    dpre = dhid * (1.0 - hid * hid)
    g["fc.w"] = flat.T @ dpre
    g["fc.b"] = dpre.sum(axis=0)
    dh = (dpre @ params["fc.w"].T)
    depth = _depth(params)
    for k in range(depth, 0, -1):
        cols, in_shape, z = cache[k - 1]
        w = params[f"conv{k}.w"]
        dz = dh.reshape(z.shape) * (z > 0)
        dz2 = dz.reshape(-1, w.shape[0])
        g[f"conv{k}.w"] = (cols.T @ dz2).T.reshape(w.shape)
        g[f"conv{k}.b"] = dz2.sum(axis=0)
        if k > 1:
            dh = _col2im(dz2 @ w.reshape(w.shape[0], -1), in_shape)
    return {name: g[name].astype(params[name].dtype, copy=False) for name in params}


# ---------------------------------------------------------------------------
# A2C


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.5
    learning_rate: float = 0.0005
    value_coeff: float = 0.5
    entropy_start: float = 0.01
    entropy_end: float = 0.05
    entropy_steps: int = 10_000
    minibatch_horizon: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if min(self.value_coeff, self.entropy_start, self.entropy_end, self.learning_rate) < 0:
            raise ValueError("coefficients must be non-negative")

    def entropy_coeff(self, update: int) -> float:
        """Linear schedule from ``entropy_start`` to ``entropy_end``; set the two
        endpoints to choose the direction."""
        if self.entropy_steps <= 0:
            return self.entropy_end
        frac = min(max(update, 0) / self.entropy_steps, 1.0)
        return self.entropy_start + frac * (self.entropy_end - self.entropy_start)


@dataclass
class Trajectory:
    states: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    bootstrap_value: float
    terminal: bool
    gamma: float
    agent_id: str = ""
    version: int = 0

    def __post_init__(self):
        if not self.states:
            raise ValueError("a trajectory holds at least one step")
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise ValueError("states, actions and rewards must have equal length")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ValueError("terminal segments bootstrap from 0")

    def __len__(self) -> int:
        return len(self.states)


def td_error(reward: float, gamma: float, v_next: float, v: float) -> float:
    return reward + gamma * v_next - v


def _batch_arrays(batch: Sequence[Trajectory]):
    if not batch:
        raise ValueError("empty batch")
    x = np.stack([s for t in batch for s in t.states])
    actions = np.array([a for t in batch for a in t.actions], dtype=np.int64)
    rewards = np.array([r for t in batch for r in t.rewards], dtype=np.float64)
    return x, actions, rewards


def _targets(batch: Sequence[Trajectory], values: np.ndarray, rewards: np.ndarray):
    """One-step targets r + gamma * V(s'), V(s') from the next row or the bootstrap."""
    v = values.astype(np.float64)
    v_next = np.empty_like(v)
    gammas = np.empty_like(v)
    i = 0
    for t in batch:
        m = len(t)
        v_next[i:i + m - 1] = v[i + 1:i + m]
        v_next[i + m - 1] = t.bootstrap_value
        gammas[i:i + m] = t.gamma
        i += m
    return rewards + gammas * v_next


def a2c_gradients(params: Params, batch: Sequence[Trajectory], hyper: Hyperparams, update: int = 0) -> Params:
    """Ascent direction of the A2C objective over ``batch``.

    With M total steps and TD error d = r + gamma V(s') - V(s) held constant:

    * actor:   (1/M) sum d * grad log pi(a|s)
    * critic:  value_coeff * (1/M) sum d * grad V(s)   (semi-gradient of -d^2/2)
    * entropy: entropy_coeff * (1/M) sum grad H(pi(.|s))

    Callers minimising a loss pass the negation to :func:`adam_update`.
    """
    x, actions, rewards = _batch_arrays(batch)
    logits, values, cache = _forward(params, x, keep=True)
    target = _targets(batch, values, rewards)
    delta = target - values
    m = len(actions)
    logp = log_softmax(logits.astype(np.float64))
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1, keepdims=True)
    c_ent = hyper.entropy_coeff(update)

    onehot = np.zeros_like(p)
    onehot[np.arange(m), actions] = 1.0
    dlogits = delta[:, None] * (onehot - p) + c_ent * (-p * (logp + h))
    dlogits /= m
    dvalue = hyper.value_coeff * delta / m
    dtype = params["fc.w"].dtype
    return _backward(params, cache, dlogits.astype(dtype), dvalue.astype(dtype))


def surrogate_objective(params: Params, batch: Sequence[Trajectory], hyper: Hyperparams,
                        target: np.ndarray, delta: np.ndarray, update: int = 0) -> float:
    """Scalar whose gradient (with ``target``/``delta`` frozen) is the A2C ascent direction."""
    x, actions, _ = _batch_arrays(batch)
    logits, values, _ = _forward(params, x, keep=False)
    m = len(actions)
    logp = log_softmax(logits.astype(np.float64))
    ent = -(np.exp(logp) * logp).sum(axis=1)
    actor = (delta * logp[np.arange(m), actions]).sum()
    critic = -0.5 * ((target - values) ** 2).sum()
    return float((actor + hyper.value_coeff * critic + hyper.entropy_coeff(update) * ent.sum()) / m)


def frozen_targets(params: Params, batch: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    x, _, rewards = _batch_arrays(batch)
    _, values, _ = _forward(params, x, keep=False)
    target = _targets(batch, values, rewards)
    return target, target - values


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_update(params: Params, grads: Params, state: AdamState, hyper: Hyperparams) -> tuple[Params, AdamState]:
    """One bias-corrected Adam descent step on ``grads``.  Inputs are left untouched."""
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ShapeError(f"gradient {name} does not match its parameter")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if g is None:
            new_p[name], new_m[name], new_v[name] = p, m, v
            continue
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        new_p[name] = (p - step).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# acting


def sample_action(logits: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> int:
    if greedy:
        return int(np.argmax(logits))
    p = softmax(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)
