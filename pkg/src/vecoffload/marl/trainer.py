"""Centralised-critic multi-agent PPO with decentralised Gaussian actors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..env import VecEnv
from ..rollout import EPISODE_COLUMNS, summarize_episode
from .nets import Adam, GaussianPolicy, Mlp, clip_by_norm
from .ppo import compute_gae, critic_loss, normalize, ppo_actor_loss

log = logging.getLogger(__name__)

TRAINING_COLUMNS = EPISODE_COLUMNS + ("actor_loss", "critic_loss", "entropy")


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 8e-5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    batch_size: int = 512
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip_norm: float = 0.5
    max_episodes: int = 1800
    episodes_per_update: int = 5
    hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = -0.5
    share_actor: bool = False
    normalize_reward: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        for name in ("epochs", "batch_size", "max_episodes", "episodes_per_update"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if min(self.entropy_coef, self.value_coef, self.grad_clip_norm) < 0:
            raise ValueError("coefficients must be >= 0")


@dataclass
class PolicyParams:
    """Flat parameter vectors: one per actor (a single shared one when sharing) and the critic."""

    actor: GaussianPolicy
    critic: Mlp
    actor_params: list[np.ndarray]
    critic_params: np.ndarray
    shared: bool = False

    def actor_for(self, agent: int) -> np.ndarray:
        return self.actor_params[0 if self.shared else agent]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.actor, self.critic, [p.copy() for p in self.actor_params],
                            self.critic_params.copy(), self.shared)


def init_params(obs_dim: int, state_dim: int, act_dim: int, num_agents: int, tcfg: TrainerConfig,
                rng: np.random.Generator) -> PolicyParams:
    actor = GaussianPolicy.build(obs_dim, act_dim, tcfg.hidden)
    critic = Mlp((state_dim, *tcfg.hidden, 1))
    count = 1 if tcfg.share_actor else num_agents
    actors = [actor.init(rng, tcfg.log_std_init) for _ in range(count)]
    return PolicyParams(actor, critic, actors, critic.init(rng, out_scale=1.0), tcfg.share_actor)


class TrainedPolicy:
    """Decentralised execution: each agent maps only its own observation to an action."""

    def __init__(self, params: PolicyParams, deterministic: bool = False):
        self.params = params
        self.deterministic = deterministic
        self.name = "trained"

    def sample(self, observations: np.ndarray, rng: np.random.Generator):
        acts, logps = [], []
        for i, o in enumerate(observations):
            theta = self.params.actor_for(i)
            if self.deterministic:
                a = self.params.actor.mean(theta, o)[0]
                acts.append(a)
                logps.append(float(self.params.actor.log_prob(theta, o, a)[0]))
            else:
                a, lp = self.params.actor.sample(theta, o[None, :], rng)
                acts.append(a[0])
                logps.append(float(lp[0]))
        return np.array(acts), np.array(logps)

    def act(self, env: VecEnv, rng: np.random.Generator) -> np.ndarray:
        return self.sample(env.observe(), rng)[0]


class TrainingDivergence(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass
class _Batch:
    obs: list = field(default_factory=list)  # per step (N, D)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    states: list = field(default_factory=list)
    advantages: list = field(default_factory=list)
    returns: list = field(default_factory=list)

    def arrays(self):
        return (np.array(self.obs), np.array(self.actions), np.array(self.logps), np.array(self.states),
                np.concatenate(self.advantages), np.concatenate(self.returns))


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    local_backlog: list[np.ndarray] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


class MappoTrainer:
    """Collect episodes, compute advantages once, then run minibatch epochs per update."""

    def __init__(self, tcfg: TrainerConfig, env: VecEnv):
        self.tcfg = tcfg
        self.env = env
        self.rng = np.random.default_rng([tcfg.seed, 7])
        self.params = init_params(env.obs_dim, env.state_dim, env.action_dim, env.num_agents, tcfg, self.rng)
        self.actor_opt = [Adam(p.size, tcfg.learning_rate) for p in self.params.actor_params]
        self.critic_opt = Adam(self.params.critic_params.size, tcfg.learning_rate)
        self.reward_scale = 0.0
        self.policy = TrainedPolicy(self.params)
        self._last = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": self._entropy()}

    def _entropy(self) -> float:
        return float(np.mean([self.params.actor.entropy(p) for p in self.params.actor_params]))

    def value(self, states: np.ndarray) -> np.ndarray:
        return self.params.critic.forward(self.params.critic_params, np.atleast_2d(states))[:, 0]

    def collect_episode(self, batch: _Batch):
        """Play one episode with the current policy and append it to ``batch``."""
        obs, state = self.env.reset()
        outcomes, rewards, states = [], [], []
        done = False
        while not done:
            actions, logps = self.policy.sample(obs, self.rng)
            result = self.env.step(actions)
            batch.obs.append(obs)
            batch.actions.append(actions)
            batch.logps.append(logps)
            states.append(state)
            reward = float(result.rewards[0])
            if self.tcfg.normalize_reward:
                self.reward_scale = max(self.reward_scale, abs(reward))
                reward = reward / self.reward_scale if self.reward_scale > 0 else 0.0
            rewards.append(reward)
            outcomes.append(result.outcome)
            obs, state, done = result.observations, result.state, result.done
        states = np.array(states)
        values = self.value(states)
        dones = np.zeros(len(rewards))
        dones[-1] = 1.0
        adv, ret = compute_gae(rewards, values, dones, self.tcfg.gamma, self.tcfg.gae_lambda)
        batch.states.extend(states)
        batch.advantages.append(adv)
        batch.returns.append(ret)
        return summarize_episode(self.env.episode, outcomes)

    def _check(self, what: str, value, **context):
        if not np.all(np.isfinite(value)):
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            raise TrainingDivergence(f"non-finite {what} after {len(self.log.rows)} episodes ({details})")

    def update(self, batch: _Batch) -> dict:
        tcfg = self.tcfg
        obs, actions, logp_old, states, adv, ret = batch.arrays()
        adv = normalize(adv)
        steps = len(adv)
        size = min(tcfg.batch_size, steps)
        actor_losses, critic_losses = [], []
        for _ in range(tcfg.epochs):
            order = self.rng.permutation(steps)
            for start in range(0, steps, size):
                idx = order[start : start + size]
                grads = [np.zeros_like(p) for p in self.params.actor_params]
                for i in range(self.env.num_agents):
                    slot = 0 if self.params.shared else i
                    theta = self.params.actor_params[slot]
                    logp = self.params.actor.log_prob(theta, obs[idx, i], actions[idx, i])
                    loss, dlogp, _ = ppo_actor_loss(logp, logp_old[idx, i], adv[idx], tcfg.clip_eps)
                    loss -= tcfg.entropy_coef * self.params.actor.entropy(theta)
                    _, g = self.params.actor.log_prob_and_grad(theta, obs[idx, i], actions[idx, i], dlogp,
                                                               -tcfg.entropy_coef)
                    self._check("actor loss", loss, agent=i, logp_min=float(logp.min()))
                    self._check("actor gradient", g, agent=i)
                    grads[slot] += g
                    actor_losses.append(loss)
                for slot, g in enumerate(grads):
                    g, _ = clip_by_norm(g, tcfg.grad_clip_norm)
                    self.params.actor_params[slot] = self.actor_opt[slot].step(self.params.actor_params[slot], g)

                pred, acts = self.params.critic.forward(self.params.critic_params, states[idx], keep=True)
                loss, dpred = critic_loss(pred[:, 0], ret[idx])
                self._check("critic loss", loss, max_return=float(np.abs(ret).max()))
                g = self.params.critic.backward(self.params.critic_params, acts, tcfg.value_coef * dpred[:, None])
                g, _ = clip_by_norm(g, tcfg.grad_clip_norm)
                self.params.critic_params = self.critic_opt.step(self.params.critic_params, g)
                critic_losses.append(loss)
        return {"actor_loss": float(np.mean(actor_losses)), "critic_loss": float(np.mean(critic_losses)),
                "entropy": self._entropy()}

    def train(self, episodes: int | None = None, on_episode: Callable | None = None) -> TrainingLog:
        total = self.tcfg.max_episodes if episodes is None else episodes
        self.log = TrainingLog()
        batch = _Batch()
        pending = []
        for ep in range(total):
            stats = self.collect_episode(batch)
            pending.append(stats)
            if len(pending) == self.tcfg.episodes_per_update or ep == total - 1:
                self._last = self.update(batch)
                batch = _Batch()
                for s in pending:
                    self._record(s)
                pending = []
            if on_episode is not None:
                on_episode(ep)
        return self.log

    def _record(self, stats):
        row = stats.row()
        row.update(self._last)
        self.log.rows.append(row)
        self.log.local_backlog.append(stats.local_backlog)
        log.debug("episode %d reward %.3f", stats.episode, stats.mean_reward)


def train(tcfg: TrainerConfig, env_factory: Callable[[bool], VecEnv], dt_enabled: bool = True):
    """Train from scratch; returns (PolicyParams, TrainingLog)."""
    trainer = MappoTrainer(tcfg, env_factory(dt_enabled))
    log_ = trainer.train()
    return trainer.params, log_
