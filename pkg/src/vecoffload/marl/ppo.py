"""Advantage estimation and the clipped PPO and critic losses with their gradients."""

from __future__ import annotations

import numpy as np


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalised advantage estimates and returns for one trajectory.

    ``values[t]`` is V(s_t); ``dones[t]`` marks s_{t+1} as terminal, in which
    case nothing is bootstrapped past it. ``last_value`` is V(s_T) for a
    trajectory cut without a terminal flag.

    Returns:
        (advantages, returns) with returns = advantages + values.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not (len(r) == len(v) == len(d)):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros_like(r)
    running = 0.0
    next_value = last_value
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def ppo_actor_loss(logp_new, logp_old, advantages, clip_eps: float):
    """Negated clipped surrogate and its gradient with respect to ``logp_new``.

    Returns:
        (loss, dloss_dlogp, clip_fraction)
    """
    logp_new = np.asarray(logp_new, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    ratio = np.exp(logp_new - np.asarray(logp_old, dtype=float))
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    objective = np.minimum(unclipped_obj, clipped_obj)
    n = len(adv)
    # gradient flows only where the unclipped term is the one selected
    live = unclipped_obj <= clipped_obj
    grad = np.where(live, -adv * ratio / n, 0.0)
    return -float(objective.mean()), grad, float(np.mean(clipped != ratio))


def clipped_objective(ratio, advantages, clip_eps: float) -> np.ndarray:
    """Per-sample clipped surrogate ``min(r A, clip(r) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def critic_loss(values_pred, returns):
    """Mean squared error and its gradient with respect to the predictions."""
    pred = np.asarray(values_pred, dtype=float)
    diff = pred - np.asarray(returns, dtype=float)
    return float(np.mean(diff * diff)), 2.0 * diff / len(diff)


def normalize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - x.mean()) / (x.std() + eps)
