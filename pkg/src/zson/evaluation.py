"""Success rate / SPL evaluation, the zero-shot protocol and the diversity ablation."""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import EncoderParams
from .episodes import OBJECT, Episode, EpisodeDataset, imagenav_for_worlds, objectnav_for_worlds
from .navenv import DEFAULT_STEP_CAP, NavEnv, sample_actions
from .neural.policy import PolicyNetwork, policy_forward, softmax
from .worldsim import START, STOP, AgentPose, GridWorld, KinematicsConfig

EVAL_TRIALS = 3
REPORT_SCHEMA_VERSION = 1
ABLATION_COLUMNS = ("n_worlds", "seed", "sr", "spl", "sr_std", "spl_std")


class LeakError(ValueError):
    """Evaluation worlds overlap the worlds a checkpoint was trained on."""


# --------------------------------------------------------------------------
# agents


class PolicyAgent:
    """Wraps a network; samples from its action distribution (or takes the argmax when ``greedy``)."""

    def __init__(self, net: PolicyNetwork, greedy: bool = False):
        self.net = net
        self.greedy = greedy

    def reset(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.state = self.net.initial_state(1)

    def act(self, obs: np.ndarray, goal: np.ndarray, prev_action: int) -> int:
        logits, _, self.state = policy_forward(self.net, obs, goal, prev_action, self.state)
        if self.greedy:
            return int(np.argmax(logits[0]))
        return int(sample_actions(softmax(logits.astype(np.float64)), [self.rng])[0])


class ConstantAgent:
    """Always emits the same action (e.g. STOP)."""

    def __init__(self, action: int = STOP):
        self.action = action

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, obs, goal, prev_action) -> int:
        return self.action


class RandomAgent:
    """Uniform over all actions, STOP included."""

    def __init__(self, n_actions: int = 4):
        self.n_actions = n_actions

    def reset(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def act(self, obs, goal, prev_action) -> int:
        return int(self.rng.integers(self.n_actions))


def as_agent(net_or_agent, greedy: bool = False):
    if isinstance(net_or_agent, PolicyNetwork):
        return PolicyAgent(net_or_agent, greedy)
    return net_or_agent


# --------------------------------------------------------------------------
# episodes and metrics


@dataclass
class EpisodeRecord:
    episode_id: str
    trial: int
    success: bool
    spl: float
    shortest_path: float
    path_length: float
    steps: int
    stop_pose: AgentPose
    stopped: bool
    room: str | None
    goal_room: str | None = None
    category: str | None = None
    tier: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop_pose"] = {"x": self.stop_pose.x, "y": self.stop_pose.y, "h": self.stop_pose.heading}
        return d


def spl(success: bool, shortest: float, path: float) -> float:
    """Success weighted by shortest / max(path, shortest)."""
    if shortest < 0 or path < 0:
        raise ValueError(f"path lengths must be non-negative (shortest={shortest}, path={path})")
    if not success:
        return 0.0
    denom = max(path, shortest)
    if denom == 0:
        return 1.0
    return shortest / denom


def episode_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Action-sampling stream for the ``index``-th episode of a pass.

    Keyed by position rather than episode id so that two datasets listing
    matched episodes in the same order share their random streams.
    """
    return np.random.SeedSequence([int(base_seed), int(index)])


def run_episode(agent, world: GridWorld | Mapping[str, GridWorld], episode: Episode, seed: int,
                kin: KinematicsConfig | None = None, step_cap: int = DEFAULT_STEP_CAP, trace: list | None = None,
                index: int = 0):
    """Play one episode with a fresh recurrent state; returns the environment's ``EpisodeResult``.

    ``trace`` (if given) receives one ``(pose, action)`` pair per step.
    """
    worlds = world if isinstance(world, Mapping) else {world.id: world}
    env = NavEnv(worlds, kin, step_cap=step_cap)
    agent = as_agent(agent)
    obs = env.reset(episode)
    agent.reset(np.random.default_rng(episode_seed(seed, index)))
    prev = START
    while True:
        a = agent.act(obs, env.goal, prev)
        if trace is not None:
            trace.append((env.pose, a))
        _, done, res = env.step(a)
        if done:
            return res
        obs = env.observation()
        prev = a


def _category(ep: Episode) -> str | None:
    if ep.goal_kind != OBJECT:
        return None
    return "+".join(sorted(ep.goal_concepts))


def _goal_room(ep: Episode, vocab) -> str | None:
    if ep.goal_kind != OBJECT:
        return None
    rooms = [c for c in ep.goal_concepts if vocab.is_room(c)]
    return rooms[0] if rooms else None


def _std(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


@dataclass
class EvalReport:
    task: str
    n_episodes: int
    trials: int
    sr_mean: float
    sr_std: float
    spl_mean: float
    spl_std: float
    sr_per_trial: list[float]
    spl_per_trial: list[float]
    per_category: dict = field(default_factory=dict)
    per_tier: dict = field(default_factory=dict)
    room_correct_rate: float | None = None
    room_correct_n: int = 0
    base_seed: int = 0
    records: list[EpisodeRecord] = field(default_factory=list, repr=False)

    def to_dict(self, include_records: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "records"}
        d["v"] = REPORT_SCHEMA_VERSION
        if include_records:
            d["records"] = [r.to_dict() for r in self.records]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        """One row per group: the overall row, then per category and per tier."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("task", "group", "key", "n", "sr_mean", "sr_std", "spl_mean", "spl_std"))
        w.writerow((self.task, "all", "", self.n_episodes, _f(self.sr_mean), _f(self.sr_std), _f(self.spl_mean),
                    _f(self.spl_std)))
        for group, table in (("category", self.per_category), ("tier", self.per_tier)):
            for k, v in sorted(table.items()):
                w.writerow((self.task, group, k, v["n"], _f(v["sr_mean"]), _f(v["sr_std"]), _f(v["spl_mean"]),
                            _f(v["spl_std"])))
        return buf.getvalue()

    def traces_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)


def _f(x: float) -> str:
    return format(float(x), ".10g")


def _group_stats(records: Sequence[EpisodeRecord], key, trials: int) -> dict:
    groups: dict[str, list[EpisodeRecord]] = {}
    for r in records:
        k = key(r)
        if k is not None:
            groups.setdefault(k, []).append(r)
    out = {}
    for k, rs in groups.items():
        sr = [np.mean([r.success for r in rs if r.trial == t]) for t in range(trials)]
        sp = [np.mean([r.spl for r in rs if r.trial == t]) for t in range(trials)]
        out[k] = {"n": len(rs) // trials, "sr_mean": float(np.mean(sr)), "sr_std": _std(sr),
                  "spl_mean": float(np.mean(sp)), "spl_std": _std(sp)}
    return out


def aggregate(records: Sequence[EpisodeRecord], task: str, trials: int, base_seed: int = 0) -> EvalReport:
    """Build a report from per-episode records (order-independent)."""
    if not records:
        raise ValueError("no episode records to aggregate")
    sr_t, spl_t = [], []
    for t in range(trials):
        rs = [r for r in records if r.trial == t]
        sr_t.append(float(np.mean([r.success for r in rs])))
        spl_t.append(float(np.mean([r.spl for r in rs])))
    compound = [r for r in records if r.goal_room is not None and r.success]
    rcr = float(np.mean([r.room == r.goal_room for r in compound])) if compound else None
    return EvalReport(
        task=task, n_episodes=len(records) // trials, trials=trials,
        sr_mean=float(np.mean(sr_t)), sr_std=_std(sr_t), spl_mean=float(np.mean(spl_t)), spl_std=_std(spl_t),
        sr_per_trial=sr_t, spl_per_trial=spl_t,
        per_category=_group_stats(records, lambda r: r.category, trials),
        per_tier=_group_stats(records, lambda r: r.tier, trials),
        room_correct_rate=rcr, room_correct_n=len(compound), base_seed=int(base_seed), records=list(records))


def _run_batch(agent, episodes: Sequence[Episode], worlds: Mapping[str, GridWorld], seed: int,
               kin: KinematicsConfig | None, step_cap: int):
    """Play every episode to completion, stepping all unfinished ones together.

    A network agent evaluates the unfinished episodes as one batch; each
    episode keeps its own generator, so outcomes do not depend on which other
    episodes share the batch (up to float rounding of the batched forward).
    """
    n = len(episodes)
    envs = [NavEnv(worlds, kin, step_cap=step_cap) for _ in range(n)]
    obs = [env.reset(ep) for env, ep in zip(envs, episodes)]
    rngs = [np.random.default_rng(episode_seed(seed, i)) for i in range(n)]
    prev = np.full(n, START, dtype=np.int64)
    results = [None] * n
    active = list(range(n))
    if isinstance(agent, PolicyAgent):
        net = agent.net
        state = net.initial_state(n)
        while active:
            idx = np.asarray(active)
            goals = np.stack([envs[i].goal for i in active])
            logits, _, st = policy_forward(net, np.stack([obs[i] for i in active]), goals, prev[idx],
                                           state.select(idx))
            state.h[:, idx] = st.h
            state.c[:, idx] = st.c
            if agent.greedy:
                actions = np.argmax(logits, axis=1)
            else:
                actions = sample_actions(softmax(logits.astype(np.float64)), [rngs[i] for i in active])
            active = _advance(envs, obs, prev, results, active, actions)
    else:
        for i in range(n):
            agent.reset(rngs[i])
        while active:
            actions = [agent.act(obs[i], envs[i].goal, int(prev[i])) for i in active]
            active = _advance(envs, obs, prev, results, active, actions)
    return results


def _advance(envs, obs, prev, results, active, actions):
    still = []
    for i, a in zip(active, actions):
        _, done, res = envs[i].step(int(a))
        if done:
            results[i] = res
        else:
            obs[i] = envs[i].observation()
            prev[i] = int(a)
            still.append(i)
    return still


def evaluate(net_or_agent, dataset: EpisodeDataset | Sequence[Episode], worlds, base_seed: int = 0,
             trials: int = EVAL_TRIALS, kin: KinematicsConfig | None = None, step_cap: int = DEFAULT_STEP_CAP,
             greedy: bool = False) -> EvalReport:
    """Run ``trials`` passes over the dataset with seeds ``base_seed + t``."""
    episodes = dataset.episodes if isinstance(dataset, EpisodeDataset) else list(dataset)
    if not episodes:
        raise ValueError("cannot evaluate an empty dataset")
    kinds = {e.goal_kind for e in episodes}
    if len(kinds) != 1:
        raise ValueError(f"dataset mixes goal kinds {sorted(kinds)}")
    if not isinstance(worlds, Mapping):
        worlds = {w.id: w for w in worlds}
    missing = sorted({e.world_id for e in episodes} - set(worlds))
    if missing:
        raise ValueError(f"dataset refers to worlds not provided: {missing[:5]}")
    agent = as_agent(net_or_agent, greedy)
    records = []
    for t in range(trials):
        results = _run_batch(agent, episodes, worlds, base_seed + t, kin, step_cap)
        for ep, res in zip(episodes, results):
            world = worlds[ep.world_id]
            records.append(EpisodeRecord(
                ep.id, t, res.success, spl(res.success, ep.shortest_path, res.path_length), ep.shortest_path,
                res.path_length, res.steps, res.stop_pose, res.stopped, res.room,
                goal_room=_goal_room(ep, world.vocab), category=_category(ep),
                tier=ep.tier.lower() if ep.tier else None))
    return aggregate(records, kinds.pop(), trials, base_seed)


# --------------------------------------------------------------------------
# zero-shot protocol


@dataclass
class ZeroShotResult:
    imagenav: EvalReport
    objectnav: EvalReport

    @property
    def transfer_gap(self) -> float:
        return self.imagenav.sr_mean - self.objectnav.sr_mean

    def to_dict(self) -> dict:
        return {"v": REPORT_SCHEMA_VERSION, "imagenav": self.imagenav.to_dict(),
                "objectnav": self.objectnav.to_dict(), "transfer_gap": self.transfer_gap}


def check_leak(train_world_ids: Sequence[str], eval_world_ids: Sequence[str]) -> None:
    overlap = sorted(set(train_world_ids) & set(eval_world_ids))
    if overlap:
        raise LeakError(f"evaluation worlds overlap training worlds: {overlap}")


def zero_shot_protocol(net: PolicyNetwork, train_world_ids: Sequence[str], held_out: Sequence[GridWorld],
                       params: EncoderParams, categories=None, n_per_tier: int = 4, n_object: int = 48,
                       seed: int = 0, base_seed: int = 0, kin: KinematicsConfig | None = None,
                       step_cap: int = DEFAULT_STEP_CAP, greedy: bool = False) -> ZeroShotResult:
    """Evaluate ImageNav and ObjectNav on worlds never seen in training."""
    check_leak(train_world_ids, [w.id for w in held_out])
    img = imagenav_for_worlds(held_out, n_per_tier, params, seed, kin)
    obj = objectnav_for_worlds(held_out, n_object, params, seed, categories, kin)
    return ZeroShotResult(evaluate(net, img, held_out, base_seed, kin=kin, step_cap=step_cap, greedy=greedy),
                          evaluate(net, obj, held_out, base_seed, kin=kin, step_cap=step_cap, greedy=greedy))


# --------------------------------------------------------------------------
# diversity ablation


def ablation_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([int(r["n_worlds"]), int(r["seed"]), _f(r["sr"]), _f(r["spl"]), _f(r["sr_std"]),
                    _f(r["spl_std"])])
    return buf.getvalue()


def ablation_summary(rows: Sequence[Mapping]) -> list[dict]:
    """Mean and across-training-seed std of SR and SPL per world count."""
    out = []
    for n in sorted({int(r["n_worlds"]) for r in rows}):
        rs = [r for r in rows if int(r["n_worlds"]) == n]
        sr = [float(r["sr"]) for r in rs]
        sp = [float(r["spl"]) for r in rs]
        out.append({"n_worlds": n, "n_seeds": len(rs), "sr_mean": float(np.mean(sr)), "sr_seed_std": _std(sr),
                    "spl_mean": float(np.mean(sp)), "spl_seed_std": _std(sp)})
    return out


def trend_holds(summary: Sequence[Mapping]) -> bool:
    """True when mean zero-shot SR does not decrease with more training worlds."""
    srs = [s["sr_mean"] for s in sorted(summary, key=lambda s: s["n_worlds"])]
    return all(b >= a for a, b in zip(srs, srs[1:]))


def diversity_ablation(world_counts: Sequence[int], train_pool: Sequence[GridWorld], held_out: Sequence[GridWorld],
                       params: EncoderParams, cfg, seeds: Sequence[int] = (0, 1, 2), n_per_tier: int = 4,
                       n_object: int = 48, categories=None, base_seed: int = 0, progress=None) -> list[dict]:
    """Train one agent per (world count, seed) under an identical budget and
    evaluate each zero-shot on the shared held-out ObjectNav set.

    The first ``n`` worlds of ``train_pool`` form the training set for count ``n``.
    """
    from .trainer import train

    counts = list(world_counts)
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ValueError(f"world counts must be strictly ascending, got {counts}")
    if counts and counts[-1] > len(train_pool):
        raise ValueError(f"need {counts[-1]} training worlds, pool has {len(train_pool)}")
    check_leak([w.id for w in train_pool], [w.id for w in held_out])
    obj = objectnav_for_worlds(held_out, n_object, params, base_seed, categories, cfg.kinematics)
    rows = []
    for n in counts:
        pool = list(train_pool[:n])
        ds = imagenav_for_worlds(pool, n_per_tier, params, base_seed, cfg.kinematics)
        for s in seeds:
            run_cfg = _with_seed(cfg, s)
            res = train(pool, ds, run_cfg)
            rep = evaluate(res.net, obj, held_out, base_seed, kin=cfg.kinematics, step_cap=cfg.step_cap)
            row = {"n_worlds": n, "seed": s, "sr": rep.sr_mean, "spl": rep.spl_mean, "sr_std": rep.sr_std,
                   "spl_std": rep.spl_std, "config_digest": run_cfg.digest(exclude=("seed",))}
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def _with_seed(cfg, seed: int):
    import dataclasses

    return dataclasses.replace(cfg, seed=int(seed))


def binomial_p_value(successes: int, n: int, p: float = 0.5) -> float:
    """One-sided P(X >= successes) under Binomial(n, p)."""
    from scipy.stats import binomtest

    return float(binomtest(successes, n, p, alternative="greater").pvalue)


def random_baseline(dataset: EpisodeDataset, worlds, base_seed: int = 0, trials: int = EVAL_TRIALS,
                    kin: KinematicsConfig | None = None, step_cap: int = DEFAULT_STEP_CAP) -> EvalReport:
    return evaluate(RandomAgent(), dataset, worlds, base_seed, trials, kin, step_cap)


__all__ = [
    "ABLATION_COLUMNS", "ConstantAgent", "EVAL_TRIALS", "EpisodeRecord", "EvalReport", "LeakError", "PolicyAgent",
    "RandomAgent", "ZeroShotResult", "ablation_csv", "ablation_summary", "aggregate", "binomial_p_value",
    "check_leak", "diversity_ablation", "evaluate", "random_baseline", "run_episode", "spl", "trend_holds",
    "zero_shot_protocol",
]
