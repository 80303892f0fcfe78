"""On-policy training: vectorized rollouts, GAE, clipped-surrogate PPO and Adam."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .episodes import IMAGE, Episode, EpisodeDataset
from .navenv import DEFAULT_STEP_CAP, NavEnv, sample_actions
from .neural import autodiff as ad
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.policy import PolicyConfig, PolicyNetwork, RecurrentState
from .reward import RewardConfig
from .worldsim import START, STOP, GridWorld, KinematicsConfig, observation_dim

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "updates", "mean_reward", "train_sr", "policy_loss", "value_loss", "entropy", "grad_norm")


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    n_envs: int = 8
    rollout_len: int = 64
    ppo_epochs: int = 2
    minibatches: int = 2
    clip: float = 0.2
    gamma: float = 0.99
    tau: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.2
    lr: float = 2.25e-4
    weight_decay: float = 1e-6
    adam_eps: float = 1e-5
    total_steps: int = 100_000
    seed: int = 0
    normalize_advantages: bool = True
    step_cap: int = DEFAULT_STEP_CAP
    checkpoint_interval: int = 50
    hidden: int = 128
    encoder_hidden: int = 128
    action_embed: int = 32
    reward: RewardConfig = field(default_factory=RewardConfig)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)

    def __post_init__(self):
        for name in ("n_envs", "rollout_len", "ppo_epochs", "minibatches", "step_cap", "checkpoint_interval",
                     "hidden", "encoder_hidden", "action_embed"):
            if getattr(self, name) < 1:
                raise ConfigError(f"trainer.{name}: must be >= 1")
        for name in ("clip", "adam_eps", "max_grad_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"trainer.{name}: must be > 0")
        for name in ("lr", "weight_decay", "value_coef", "entropy_coef", "total_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"trainer.{name}: must be >= 0")
        for name in ("gamma", "tau"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"trainer.{name}: must be in [0, 1]")
        if self.n_envs % self.minibatches:
            raise ConfigError(f"trainer.minibatches: {self.minibatches} does not divide n_envs={self.n_envs}")

    @property
    def steps_per_update(self) -> int:
        return self.n_envs * self.rollout_len

    @property
    def n_updates(self) -> int:
        return self.total_steps // self.steps_per_update

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    def digest(self, exclude: Sequence[str] = ()) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: Mapping, path: str = "trainer") -> TrainerConfig:
        if not isinstance(d, Mapping):
            raise ConfigError(f"{path}: expected an object")
        kw = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for k, v in d.items():
            if k not in fields:
                raise ConfigError(f"{path}.{k}: unknown field")
            if k in ("reward", "kinematics"):
                sub = RewardConfig if k == "reward" else KinematicsConfig
                kw[k] = _sub_config(sub, v, f"{path}.{k}")
                continue
            default = fields[k].default
            kw[k] = _coerce(v, default, f"{path}.{k}")
        try:
            return cls(**kw)
        except ConfigError as e:
            raise ConfigError(str(e).replace("trainer.", f"{path}.", 1)) from None


def _coerce(v, default, where: str):
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected a boolean, got {v!r}")
        return v
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {v!r}")
        return float(v)
    return v


def _sub_config(cls, v, where: str):
    if not isinstance(v, Mapping):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, x in v.items():
        if k not in fields:
            raise ConfigError(f"{where}.{k}: unknown field")
        kw[k] = _coerce(x, fields[k].default, f"{where}.{k}")
    try:
        return cls(**kw)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def policy_config_for(dataset: EpisodeDataset, vocab, cfg: TrainerConfig) -> PolicyConfig:
    goal_dim = dataset.episodes[0].goal_embedding.dim
    return PolicyConfig(obs_dim=observation_dim(vocab, cfg.kinematics), goal_dim=goal_dim,
                        encoder_hidden=cfg.encoder_hidden, hidden=cfg.hidden, action_embed=cfg.action_embed)


# --------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: Mapping[str, ad.Parameter], lr: float, eps: float = 1e-8,
                 weight_decay: float = 0.0, betas: tuple[float, float] = (0.9, 0.999)):
        self.params = params
        self.lr = lr
        self.eps = eps
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.b1 ** t
        c2 = 1 - self.b2 ** t
        for k, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (self.lr * upd).astype(p.data.dtype)
            if not np.all(np.isfinite(p.data)):
                raise TrainingDivergedError(f"parameter {k} became non-finite at optimizer step {t}")

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, st: Mapping) -> None:
        self.step_count = int(st["step"])
        for k in self.params:
            self.m[k] = np.array(st["m"][k], dtype=self.m[k].dtype)
            self.v[k] = np.array(st["v"][k], dtype=self.v[k].dtype)


def clip_grad_norm(params: Sequence[ad.Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            p.grad *= scale
    return total


# --------------------------------------------------------------------------
# rollouts


class VecNavEnv:
    """``n`` independent environments stepping in lockstep.

    Environment ``i`` draws episodes and actions from generators keyed by
    ``(seed, env_index)``, so a run with a single environment of index ``i``
    reproduces that environment's trajectory in a batched run.
    """

    def __init__(self, worlds: Mapping[str, GridWorld], episodes: Sequence[Episode], cfg: TrainerConfig,
                 env_indices: Sequence[int] | None = None):
        if not episodes:
            raise ValueError("no episodes to train on")
        self.cfg = cfg
        self.episodes = list(episodes)
        self.env_indices = list(range(cfg.n_envs)) if env_indices is None else list(env_indices)
        self.n = len(self.env_indices)
        self.envs = [NavEnv(worlds, cfg.kinematics, cfg.reward, cfg.step_cap) for _ in range(self.n)]
        self.ep_rngs = [np.random.default_rng(np.random.SeedSequence([cfg.seed, i, 0])) for i in self.env_indices]
        self.act_rngs = [np.random.default_rng(np.random.SeedSequence([cfg.seed, i, 1])) for i in self.env_indices]
        self._orders = [[] for _ in range(self.n)]
        self.obs = np.stack([self.envs[i].reset(self._next_episode(i)) for i in range(self.n)])
        self.prev_action = np.full(self.n, START, dtype=np.int64)
        self.state: RecurrentState | None = None
        self.recent = deque(maxlen=100)
        self.episodes_done = 0

    def _next_episode(self, i: int) -> Episode:
        if not self._orders[i]:
            self._orders[i] = list(self.ep_rngs[i].permutation(len(self.episodes))[::-1])
        return self.episodes[self._orders[i].pop()]

    def goals(self) -> np.ndarray:
        return np.stack([e.goal for e in self.envs])

    def step(self, actions: np.ndarray):
        rewards = np.zeros(self.n)
        dones = np.zeros(self.n, dtype=bool)
        finished = []
        for i, env in enumerate(self.envs):
            r, done, res = env.step(int(actions[i]))
            rewards[i] = r
            dones[i] = done
            if done:
                finished.append(res)
                self.recent.append(res.success)
                self.episodes_done += 1
                self.obs[i] = env.reset(self._next_episode(i))
                self.prev_action[i] = START
            else:
                self.obs[i] = env.observation()
                self.prev_action[i] = actions[i]
        return rewards, dones, finished


@dataclass
class RolloutBuffer:
    n_envs: int
    rollout_len: int
    obs_dim: int
    goal_dim: int

    def __post_init__(self):
        T, N = self.rollout_len, self.n_envs
        self.obs = np.zeros((T, N, self.obs_dim), dtype=np.float32)
        self.goal = np.zeros((T, N, self.goal_dim), dtype=np.float32)
        self.prev_action = np.zeros((T, N), dtype=np.int64)
        self.action = np.zeros((T, N), dtype=np.int64)
        self.logp = np.zeros((T, N), dtype=np.float64)
        self.value = np.zeros((T, N), dtype=np.float64)
        self.reward = np.zeros((T, N), dtype=np.float64)
        self.done = np.zeros((T, N), dtype=np.float64)
        self.bootstrap = np.zeros(N, dtype=np.float64)
        self.init_state: RecurrentState | None = None
        self.size = 0

    def clear(self) -> None:
        self.size = 0
        self.init_state = None

    def masks(self) -> np.ndarray:
        """(T, N) multipliers for the carried recurrent state before each step."""
        m = np.ones((self.rollout_len, self.n_envs))
        m[1:] = 1.0 - self.done[:-1]
        return m


def collect_rollouts(envs: VecNavEnv, net: PolicyNetwork, buffer: RolloutBuffer, cfg: TrainerConfig,
                     forced_action: int | None = None):
    """Fill ``buffer`` with ``rollout_len`` transitions per environment.

    Returns the list of episodes that finished during collection.
    """
    if envs.state is None:
        envs.state = net.initial_state(envs.n)
    buffer.clear()
    buffer.init_state = envs.state.copy()
    finished = []
    state = envs.state
    for t in range(buffer.rollout_len):
        goal = envs.goals()
        with ad.no_grad():
            logits, value, state = net.forward(envs.obs, goal, envs.prev_action, state)
            logp_all = ad.log_softmax(logits).data
        probs = np.exp(logp_all.astype(np.float64))
        if forced_action is None:
            actions = sample_actions(probs, envs.act_rngs)
        else:
            actions = np.full(envs.n, forced_action, dtype=np.int64)
        buffer.obs[t] = envs.obs
        buffer.goal[t] = goal
        buffer.prev_action[t] = envs.prev_action
        buffer.action[t] = actions
        buffer.logp[t] = logp_all[np.arange(envs.n), actions]
        buffer.value[t] = value.data
        rewards, dones, done_eps = envs.step(actions)
        buffer.reward[t] = rewards
        buffer.done[t] = dones
        finished.extend(done_eps)
        if dones.any():
            state.reset(np.flatnonzero(dones))
    with ad.no_grad():
        _, value, _ = net.forward(envs.obs, envs.goals(), envs.prev_action, state)
    buffer.bootstrap[:] = value.data
    buffer.size = buffer.rollout_len * envs.n
    envs.state = state
    return finished


def compute_gae(buffer: RolloutBuffer, gamma: float, tau: float, bootstrap_values=None, normalize: bool = True):
    """Returns (advantages, returns); advantages optionally normalized over the whole batch."""
    boot = buffer.bootstrap if bootstrap_values is None else np.asarray(bootstrap_values, dtype=np.float64)
    adv = kernels.gae(buffer.reward, buffer.value, buffer.done, boot, float(gamma), float(tau))
    returns = adv + buffer.value
    if normalize and adv.size > 1:
        std = adv.std()
        adv = (adv - adv.mean()) / (std if std > 0 else 1.0)
    return adv, returns


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    approx_kl: float = 0.0


def ppo_loss(net: PolicyNetwork, buffer: RolloutBuffer, envs_idx: np.ndarray, advantages, returns,
             cfg: TrainerConfig):
    """Loss tensors for the sequences of environments ``envs_idx``."""
    T = buffer.rollout_len
    B = len(envs_idx)
    obs = buffer.obs[:, envs_idx].reshape(T * B, -1)
    goal = buffer.goal[:, envs_idx].reshape(T * B, -1)
    pa = buffer.prev_action[:, envs_idx].reshape(T * B)
    masks = buffer.masks()[:, envs_idx]
    state = buffer.init_state.select(envs_idx)
    logits, value, _ = net.forward(obs, goal, pa, state, masks)
    dt = net.dtype
    act = buffer.action[:, envs_idx].reshape(T * B)
    adv = ad.Tensor(np.asarray(advantages[:, envs_idx].reshape(T * B), dtype=dt))
    ret = ad.Tensor(np.asarray(returns[:, envs_idx].reshape(T * B), dtype=dt))
    old = ad.Tensor(np.asarray(buffer.logp[:, envs_idx].reshape(T * B), dtype=dt))
    logp_all = ad.log_softmax(logits)
    logp = ad.take_along(logp_all, act)
    ratio = ad.exp(logp - old)
    surr1 = ratio * adv
    surr2 = ad.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -ad.mean(ad.minimum(surr1, surr2))
    value_loss = 0.5 * ad.mean(ad.square(value - ret))
    probs = ad.exp(logp_all)
    entropy = -ad.mean(ad.sum_(probs * logp_all, axis=1))
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    return total, policy_loss, value_loss, entropy, ratio


def ppo_update(net: PolicyNetwork, optimizer: Adam, buffer: RolloutBuffer, advantages, returns,
               cfg: TrainerConfig, rng: np.random.Generator, update_index: int = 0) -> UpdateStats:
    params = net.parameters()
    stats = []
    N = buffer.n_envs
    per = N // cfg.minibatches
    for epoch in range(cfg.ppo_epochs):
        order = rng.permutation(N)
        for mb in range(cfg.minibatches):
            idx = np.sort(order[mb * per:(mb + 1) * per])
            net.zero_grad()
            total, pl, vl, ent, _ = ppo_loss(net, buffer, idx, advantages, returns, cfg)
            for name, t in (("total", total), ("policy", pl), ("value", vl), ("entropy", ent)):
                if not np.isfinite(t.item()):
                    raise TrainingDivergedError(
                        f"non-finite {name} loss at update {update_index}, epoch {epoch}, minibatch {mb}")
            ad.backward(total)
            gn = clip_grad_norm(params, cfg.max_grad_norm)
            if not math.isfinite(gn):
                raise TrainingDivergedError(
                    f"non-finite gradient norm at update {update_index}, epoch {epoch}, minibatch {mb}")
            optimizer.step()
            stats.append((pl.item(), vl.item(), ent.item(), gn))
    s = np.mean(np.array(stats), axis=0)
    return UpdateStats(float(s[0]), float(s[1]), float(s[2]), float(s[3]))


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    net: PolicyNetwork
    metrics: list[dict]
    checkpoints: list[Path]
    best_checkpoint: Path | None = None
    validation: dict = field(default_factory=dict)
    steps: int = 0


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def metrics_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in METRICS_HEADER])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(v) if k in ("step", "updates") else float(v)) for k, v in r.items()} for r in rows]


def train(worlds: Mapping[str, GridWorld] | Sequence[GridWorld], dataset: EpisodeDataset, cfg: TrainerConfig,
          out_dir=None, val_dataset: EpisodeDataset | None = None, resume=None,
          net: PolicyNetwork | None = None, extra_meta: Mapping | None = None,
          val_greedy: bool = False) -> TrainResult:
    """Alternate rollout collection and PPO updates until ``cfg.total_steps``.

    Writes ``metrics.csv`` and checkpoints (every ``checkpoint_interval``
    updates plus the final one) into ``out_dir`` when given. With
    ``val_dataset`` each checkpoint is scored by validation success rate and
    the best is copied to ``best.ckpt`` (sampled actions, one trial; greedy
    actions with ``val_greedy``).
    """
    if not isinstance(worlds, Mapping):
        worlds = {w.id: w for w in worlds}
    eps = [e for e in dataset.episodes if e.goal_kind == IMAGE]
    if not eps:
        raise ValueError("training needs IMAGE episodes")
    missing = sorted({e.world_id for e in eps} - set(worlds))
    if missing:
        raise ValueError(f"dataset refers to worlds not provided: {missing[:5]}")
    vocab = next(iter(worlds.values())).vocab
    pcfg = policy_config_for(dataset, vocab, cfg)
    if net is None:
        net = PolicyNetwork(pcfg, seed=cfg.seed)
    optimizer = Adam(net.params, cfg.lr, cfg.adam_eps, cfg.weight_decay)
    step = 0
    updates = 0
    rows: list[dict] = []
    if resume is not None:
        net, meta = load_checkpoint(resume, net, optimizer)
        step = int(meta.get("step", 0))
        updates = int(meta.get("updates", 0))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is not None and (out / "metrics.csv").exists():
            rows = [r for r in read_metrics(out / "metrics.csv") if r["updates"] <= updates]
    train_world_ids = sorted({e.world_id for e in eps})
    meta_base = {"trainer_config": cfg.to_dict(), "train_world_ids": train_world_ids,
                 "vocab": vocab.to_dict(), **(extra_meta or {})}
    envs = VecNavEnv(worlds, eps, cfg)
    buffer = RolloutBuffer(cfg.n_envs, cfg.rollout_len, pcfg.obs_dim, pcfg.goal_dim)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2 ** 20, updates]))
    checkpoints: list[Path] = []
    target_updates = cfg.n_updates
    while updates < target_updates:
        collect_rollouts(envs, net, buffer, cfg)
        adv, ret = compute_gae(buffer, cfg.gamma, cfg.tau, normalize=cfg.normalize_advantages)
        st = ppo_update(net, optimizer, buffer, adv, ret, cfg, rng, updates)
        updates += 1
        step += cfg.steps_per_update
        sr = float(np.mean(envs.recent)) if envs.recent else 0.0
        row = {"step": step, "updates": updates, "mean_reward": float(buffer.reward.mean()), "train_sr": sr,
               "policy_loss": st.policy_loss, "value_loss": st.value_loss, "entropy": st.entropy,
               "grad_norm": st.grad_norm}
        rows.append(row)
        log.info("update %d step %d reward %.4f sr %.3f ent %.3f", updates, step, row["mean_reward"], sr, st.entropy)
        if out is not None and (updates % cfg.checkpoint_interval == 0 or updates == target_updates):
            p = out / f"ckpt_{updates:06d}.ckpt"
            save_checkpoint(p, net, optimizer, {**meta_base, "step": step, "updates": updates})
            checkpoints.append(p)
            (out / "metrics.csv").write_text(metrics_csv(rows))
    if out is not None:
        (out / "metrics.csv").write_text(metrics_csv(rows))
    result = TrainResult(net, rows, checkpoints, steps=step)
    if val_dataset is not None and checkpoints:
        from .evaluation import evaluate

        best = None
        for p in checkpoints:
            cnet, _ = load_checkpoint(p)
            rep = evaluate(cnet, val_dataset, worlds, base_seed=cfg.seed, trials=1, kin=cfg.kinematics,
                           step_cap=cfg.step_cap, greedy=val_greedy)
            result.validation[p.name] = rep.sr_mean
            if best is None or rep.sr_mean > result.validation[best.name]:
                best = p
        result.best_checkpoint = out / "best.ckpt"
        result.best_checkpoint.write_bytes(best.read_bytes())
    return result
