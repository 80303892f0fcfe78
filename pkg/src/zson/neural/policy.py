r"""Recurrent goal-conditioned actor-critic.

observation -> 2-layer tanh MLP ----\
goal embedding (pass-through) -------+-> concat -> 2-layer LSTM -> action logits
previous action -> embedding table --/                          \-> value
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int
    goal_dim: int = 64
    encoder_hidden: int = 128
    hidden: int = 128
    action_embed: int = 32
    n_layers: int = 2
    n_actions: int = 4

    @property
    def n_action_tokens(self) -> int:
        # every action plus the start-of-episode token
        return self.n_actions + 1

    @property
    def core_input(self) -> int:
        return self.encoder_hidden + self.goal_dim + self.action_embed

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class RecurrentState:
    h: np.ndarray  # (layers, batch, hidden)
    c: np.ndarray

    @classmethod
    def zeros(cls, cfg: PolicyConfig, batch: int, dtype=np.float32) -> RecurrentState:
        shape = (cfg.n_layers, batch, cfg.hidden)
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))

    def copy(self) -> RecurrentState:
        return RecurrentState(self.h.copy(), self.c.copy())

    def reset(self, rows) -> None:
        self.h[:, rows] = 0
        self.c[:, rows] = 0

    def select(self, rows) -> RecurrentState:
        return RecurrentState(self.h[:, rows].copy(), self.c[:, rows].copy())


def _orthogonal(rng, n, m, dtype):
    a = rng.standard_normal((max(n, m), min(n, m)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n < m:
        q = q.T
    return q[:n, :m].astype(dtype)


def _uniform(rng, fan_in, shape, dtype, scale=1.0):
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class PolicyNetwork:
    def __init__(self, cfg: PolicyConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        H, E, D = cfg.hidden, cfg.encoder_hidden, cfg.goal_dim
        p: OrderedDict[str, Parameter] = OrderedDict()

        def add(name, arr):
            p[name] = Parameter(np.asarray(arr, dtype=self.dtype), name)

        add("enc1.W", _uniform(rng, cfg.obs_dim, (cfg.obs_dim, E), dtype))
        add("enc1.b", np.zeros(E))
        add("enc2.W", _uniform(rng, E, (E, E), dtype))
        add("enc2.b", np.zeros(E))
        add("act_embed", rng.standard_normal((cfg.n_action_tokens, cfg.action_embed)) * 0.1)
        d_in = cfg.core_input
        for layer in range(cfg.n_layers):
            add(f"lstm{layer}.W_ih", _uniform(rng, d_in, (d_in, 4 * H), dtype))
            W_hh = np.concatenate([_orthogonal(rng, H, H, dtype) for _ in range(4)], axis=1)
            add(f"lstm{layer}.W_hh", W_hh)
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            add(f"lstm{layer}.b", b)
            d_in = H
        add("pi.W", _uniform(rng, H, (H, cfg.n_actions), dtype, scale=0.01))
        add("pi.b", np.zeros(cfg.n_actions))
        add("v.W", _uniform(rng, H, (H, 1), dtype))
        add("v.b", np.zeros(1))
        self.params = p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for q in self.params.values():
            q.zero_grad()

    def initial_state(self, batch: int) -> RecurrentState:
        return RecurrentState.zeros(self.cfg, batch, self.dtype)

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, sd) -> None:
        for k, v in self.params.items():
            arr = np.asarray(sd[k])
            if arr.shape != v.data.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {v.data.shape}")
            v.data = arr.astype(self.dtype, copy=True)
            v.grad = np.zeros_like(v.data)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.data).tobytes())
        return h.hexdigest()

    def forward(self, obs, goal, prev_action, state: RecurrentState, masks=None):
        """Run ``T`` steps for ``B`` parallel sequences.

        ``obs`` (T*B, obs_dim), ``goal`` (T*B, goal_dim) and ``prev_action``
        (T*B,) are time-major; ``masks`` (T, B) zeroes the carried state where
        an episode begins (default: a single step, no resets).
        Returns (logits Tensor (T*B, A), value Tensor (T*B,), new state).
        """
        cfg = self.cfg
        obs = np.asarray(obs, dtype=self.dtype)
        goal = np.asarray(goal, dtype=self.dtype)
        prev_action = np.asarray(prev_action, dtype=np.int64)
        if obs.ndim != 2 or obs.shape[1] != cfg.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != configured obs_dim {cfg.obs_dim}")
        if goal.ndim != 2 or goal.shape[1] != cfg.goal_dim:
            raise ValueError(f"goal width {goal.shape[-1]} != configured goal_dim {cfg.goal_dim}")
        n = obs.shape[0]
        if goal.shape[0] != n or prev_action.shape != (n,):
            raise ValueError("obs, goal and prev_action must have the same leading length")
        B = state.h.shape[1]
        if masks is None:
            masks = np.ones((n // B, B), dtype=self.dtype)
        masks = np.asarray(masks)
        if masks.shape[0] * B != n or masks.shape[1] != B:
            raise ValueError(f"masks shape {masks.shape} inconsistent with {n} rows and batch {B}")
        if prev_action.min(initial=0) < 0 or prev_action.max(initial=0) >= cfg.n_action_tokens:
            raise ValueError("prev_action out of range")
        p = self.params
        e = ad.tanh(ad.linear(Tensor(obs), p["enc1.W"], p["enc1.b"]))
        e = ad.tanh(ad.linear(e, p["enc2.W"], p["enc2.b"]))
        a = ad.embedding(p["act_embed"], prev_action)
        x = ad.concat([e, Tensor(goal), a], axis=-1)
        hs, cs = [], []
        for layer in range(cfg.n_layers):
            xp = ad.linear(x, p[f"lstm{layer}.W_ih"], p[f"lstm{layer}.b"])
            x, (h, c) = ad.lstm_layer(xp, state.h[layer], state.c[layer], p[f"lstm{layer}.W_hh"], masks)
            hs.append(h)
            cs.append(c)
        logits = ad.linear(x, p["pi.W"], p["pi.b"])
        value = ad.linear(x, p["v.W"], p["v.b"])
        value = _squeeze_last(value)
        return logits, value, RecurrentState(np.stack(hs), np.stack(cs))


def _squeeze_last(t: Tensor) -> Tensor:
    shape = t.shape
    return ad._make(t.data[:, 0], (t,), lambda g: (g.reshape(shape),))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(net: PolicyNetwork, obs, goal, prev_action, state: RecurrentState):
    """Single step without gradient tracking: (logits, value, new_state) as arrays."""
    obs = np.atleast_2d(obs)
    goal = np.atleast_2d(goal)
    prev_action = np.atleast_1d(prev_action)
    with ad.no_grad():
        logits, value, new_state = net.forward(obs, goal, prev_action, state)
    return logits.data, value.data, new_state
