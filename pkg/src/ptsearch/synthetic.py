"""Desk-scale synthetic bot/human follow graphs.

Every class signal is scaled by ``separation``; at ``separation=0`` bots and
humans are drawn from identical distributions.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .graph import (
    Dataset,
    DatasetError,
    DatasetMeta,
    FeatureBundle,
    HeteroGraph,
    stratified_split,
    write_dataset,
)

BASE_RELATIONS = ("following", "follower")
NUMERICAL_COLUMNS = ("followers", "followings", "favorites", "statuses", "active_days", "screen_name_length")
N_CATEGORICAL = 11


def relation_names(count: int) -> tuple[str, ...]:
    if count < 1:
        raise ValueError("relation_count must be >= 1")
    names = list(BASE_RELATIONS[:count])
    names += [f"rel{i}" for i in range(len(names), count)]
    return tuple(names)


def _gaussian_block(rng, is_bot, dim, separation):
    # class means sit at +-separation/2 along a random unit direction
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    sign = np.where(is_bot, 0.5, -0.5)[:, None]
    return rng.normal(size=(len(is_bot), dim)) + sign * separation * direction


def _follow_edges(rng, is_bot, separation, mean_out=6.0):
    """Sample directed follow edges (u follows v) without self-loops or repeats."""
    n = len(is_bot)
    # bots follow many, are followed by few; same-class links are favoured
    out_rate = np.where(is_bot, mean_out * (1.0 + 0.5 * separation), mean_out)
    out_deg = np.minimum(rng.poisson(out_rate), n - 1)
    popularity = np.where(is_bot, 1.0, 1.0 + separation)
    homophily = 1.0 + separation
    src, dst = [], []
    for u in range(n):
        k = int(out_deg[u])
        if k == 0:
            continue
        w = popularity * np.where(is_bot == is_bot[u], homophily, 1.0)
        w[u] = 0.0
        targets = rng.choice(n, size=k, replace=False, p=w / w.sum())
        targets.sort()
        src.append(np.full(k, u))
        dst.append(targets)
    if not src:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)


def make_synthetic(
    n_nodes: int = 1000,
    bot_fraction: float = 0.5,
    relation_count: int = 2,
    separation: float = 3.0,
    seed: int = 0,
    embed_dim: int = 16,
    unlabeled_fraction: float = 0.0,
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
) -> Dataset:
    """Build an in-memory synthetic dataset; see :func:`generate_synthetic`."""
    if n_nodes < 20:
        raise ValueError("n_nodes must be >= 20")
    if not 0.0 < bot_fraction < 1.0:
        raise ValueError("bot_fraction must lie in (0, 1)")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    if not 0.0 <= unlabeled_fraction < 1.0:
        raise ValueError("unlabeled_fraction must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    n_bots = int(round(n_nodes * bot_fraction))
    is_bot = rng.permutation(np.arange(n_nodes) < n_bots)

    desc = _gaussian_block(rng, is_bot, embed_dim, separation)
    tweet = _gaussian_block(rng, is_bot, embed_dim, separation)

    relations = relation_names(relation_count)
    edges = {}
    for i, r in enumerate(relations):
        u, v = _follow_edges(rng, is_bot, separation)
        # odd relations store the reverse direction ("v has follower u")
        edges[r] = (u, v) if i % 2 == 0 else (v, u)

    f_src, f_dst = edges[relations[0]]
    followers = np.bincount(f_dst, minlength=n_nodes)
    followings = np.bincount(f_src, minlength=n_nodes)
    b = is_bot.astype(float)
    numerical = np.column_stack([
        followers,
        followings,
        rng.poisson(50.0 * np.exp(-0.3 * separation * b)),
        rng.poisson(200.0 * (1.0 + 0.3 * separation * b)),
        rng.poisson(1000.0 / (1.0 + 0.3 * separation * b)),
        rng.integers(4, 13, size=n_nodes) + np.round(rng.poisson(separation * b)),
    ]).astype(np.float64)

    base = rng.uniform(0.2, 0.8, size=N_CATEGORICAL)
    shift = rng.choice([-1.0, 1.0], size=N_CATEGORICAL) * 0.08 * separation
    p = np.clip(base + np.where(is_bot[:, None], shift, 0.0), 0.02, 0.98)
    categorical = (rng.random((n_nodes, N_CATEGORICAL)) < p).astype(np.float64)

    labels = is_bot.astype(np.int64)
    if unlabeled_fraction > 0:
        hidden = rng.random(n_nodes) < unlabeled_fraction
        labels[hidden] = -1

    features = FeatureBundle(desc, tweet, numerical, categorical, labels)
    graph = HeteroGraph(n_nodes, relations, edges)
    split = stratified_split(labels, ratios, seed=seed)
    meta = DatasetMeta(n_nodes, relations, features.dims())
    return Dataset(graph, features, split, meta)


def generate_synthetic(
    n_nodes: int,
    bot_fraction: float,
    relation_count: int,
    separation: float,
    seed: int,
    out_dir: str | os.PathLike,
    **kwargs,
) -> Path:
    """Write a synthetic dataset to ``out_dir``; byte-identical for a fixed seed."""
    ds = make_synthetic(n_nodes, bot_fraction, relation_count, separation, seed, **kwargs)
    out = Path(out_dir)
    if out.exists() and not out.is_dir():
        raise DatasetError(f"{out}: exists and is not a directory")
    try:
        return write_dataset(ds, out)
    except OSError as e:
        raise DatasetError(f"{out}: unwritable ({e})") from e
