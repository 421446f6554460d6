"""Versioned checkpoints: flat parameter blocks with their shape metadata in one ``.npz``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nets import GaussianPolicy, Mlp
from .trainer import PolicyParams

FORMAT = "vecoffload-policy"
VERSION = 1


def save_checkpoint(path: str | Path, params: PolicyParams, metadata: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "actor_sizes": list(params.actor.mlp.sizes),
        "critic_sizes": list(params.critic.sizes),
        "shared": params.shared,
        "num_actors": len(params.actor_params),
        "metadata": metadata or {},
    }
    blocks = {f"actor_{i}": p for i, p in enumerate(params.actor_params)}
    blocks["critic"] = params.critic_params
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **blocks)
    return path


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    """Read a checkpoint; returns (params, metadata). Raises ValueError on a foreign or newer file."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a policy checkpoint")
        if header["version"] > VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer than {VERSION}")
        actor = GaussianPolicy(Mlp(tuple(header["actor_sizes"])))
        critic = Mlp(tuple(header["critic_sizes"]))
        actors = [np.array(data[f"actor_{i}"]) for i in range(header["num_actors"])]
        critic_params = np.array(data["critic"])
    for p in actors:
        if p.shape != (actor.num_params,):
            raise ValueError(f"{path}: actor block has shape {p.shape}, expected ({actor.num_params},)")
    if critic_params.shape != (critic.num_params,):
        raise ValueError(f"{path}: critic block has shape {critic_params.shape}")
    return PolicyParams(actor, critic, actors, critic_params, bool(header["shared"])), header["metadata"]
