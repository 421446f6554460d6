"""Small numpy networks with hand-written backprop, a Gaussian policy head and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Mlp:
    """Fully connected net with ReLU hidden layers and a linear output.

    Parameters live in one flat vector laid out layer by layer as
    ``W (in x out)`` row-major followed by ``b (out)``.
    """

    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) < 2 or any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")

    @property
    def num_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def unpack(self, params: np.ndarray):
        if params.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {params.shape}")
        layers, at = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = params[at : at + a * b].reshape(a, b)
            at += a * b
            layers.append((w, params[at : at + b]))
            at += b
        return layers

    def init(self, rng: np.random.Generator, out_scale: float = 0.01) -> np.ndarray:
        """He-normal hidden weights, a small output layer, zero biases."""
        parts = []
        last = len(self.sizes) - 2
        for j, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            std = out_scale / math.sqrt(a) if j == last else math.sqrt(2.0 / a)
            parts += [rng.normal(0.0, std, size=a * b), np.zeros(b)]
        return np.concatenate(parts)

    def forward(self, params: np.ndarray, x: np.ndarray, keep: bool = False):
        """Evaluate a batch (B, in) -> (B, out); with ``keep`` also return the activations."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input shape {x.shape} does not match width {self.sizes[0]}")
        acts = [x]
        layers = self.unpack(params)
        h = x
        for j, (w, b) in enumerate(layers):
            h = h @ w + b
            if j < len(layers) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, params: np.ndarray, acts, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` with respect to the flat parameters."""
        layers = self.unpack(params)
        grads = []
        g = np.asarray(grad_out, dtype=float)
        for j in range(len(layers) - 1, -1, -1):
            w, _ = layers[j]
            inp = acts[j]
            grads.append((g.sum(axis=0), inp.T @ g))
            if j > 0:
                g = (g @ w.T) * (acts[j] > 0)
        flat = []
        for gb, gw in reversed(grads):
            flat += [gw.ravel(), gb]
        return np.concatenate(flat)


@dataclass(frozen=True)
class GaussianPolicy:
    """Diagonal Gaussian whose mean is an Mlp and whose log-std is a free vector.

    The flat parameter vector is the Mlp parameters followed by ``log_std``.
    """

    mlp: Mlp

    @classmethod
    def build(cls, obs_dim: int, act_dim: int, hidden=(64, 64)) -> "GaussianPolicy":
        return cls(Mlp((obs_dim, *hidden, act_dim)))

    @property
    def act_dim(self) -> int:
        return self.mlp.sizes[-1]

    @property
    def num_params(self) -> int:
        return self.mlp.num_params + self.act_dim

    def init(self, rng: np.random.Generator, log_std: float = -0.5) -> np.ndarray:
        return np.concatenate([self.mlp.init(rng), np.full(self.act_dim, log_std)])

    def split(self, theta: np.ndarray):
        return theta[: self.mlp.num_params], theta[self.mlp.num_params :]

    def mean(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray:
        w, _ = self.split(theta)
        return self.mlp.forward(w, np.atleast_2d(obs))

    def sample(self, theta: np.ndarray, obs: np.ndarray, rng: np.random.Generator):
        """Draw actions for a batch of observations; returns (actions, log-probs)."""
        mu = self.mean(theta, obs)
        _, log_std = self.split(theta)
        eps = rng.standard_normal(mu.shape)
        action = mu + np.exp(log_std) * eps
        return action, self._log_prob(mu, log_std, action)

    @staticmethod
    def _log_prob(mu, log_std, action) -> np.ndarray:
        z = (action - mu) * np.exp(-log_std)
        return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=-1)

    def log_prob(self, theta: np.ndarray, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        _, log_std = self.split(theta)
        return self._log_prob(self.mean(theta, obs), log_std, np.atleast_2d(action))

    def entropy(self, theta: np.ndarray) -> float:
        _, log_std = self.split(theta)
        return float((log_std + 0.5 * (LOG_2PI + 1.0)).sum())

    def log_prob_and_grad(self, theta: np.ndarray, obs, action, dlogp: np.ndarray, dentropy: float = 0.0):
        """Log-probs and the gradient of ``sum(dlogp * logp) + dentropy * entropy``."""
        w, log_std = self.split(theta)
        mu, acts = self.mlp.forward(w, np.atleast_2d(obs), keep=True)
        action = np.atleast_2d(action)
        inv_var = np.exp(-2.0 * log_std)
        diff = action - mu
        logp = self._log_prob(mu, log_std, action)
        d = np.asarray(dlogp, dtype=float)[:, None]
        g_mu = d * diff * inv_var
        g_log_std = (d * (diff * diff * inv_var - 1.0)).sum(axis=0) + dentropy
        return logp, np.concatenate([self.mlp.backward(w, acts, g_mu), g_log_std])


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameters for a loss gradient (descent direction)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_by_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """Rescale ``grad`` to at most ``max_norm`` in Euclidean norm; returns (grad, original norm)."""
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm
