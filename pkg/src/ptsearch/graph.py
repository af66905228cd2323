"""Heterogeneous follow graph, per-node feature blocks, splits and dataset I/O.

Dataset directory layout (CSV, UTF-8, header row required)::

    meta.json                 {"version":1,"num_nodes":N,"relations":[...],
                               "dims":{"desc":..,"tweet":..,"numerical":..,"categorical":..}}
    features_<block>.csv      node_id,f0,f1,...   (rows in node order)
    edges_<relation>.csv      src,dst
    labels.csv                node_id,label       (0 human, 1 bot, -1 unlabeled)
    splits.csv (optional)     node_id,split       (train | val | test)
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

FORMAT_VERSION = 1
BLOCKS = ("desc", "tweet", "numerical", "categorical")
LABEL_NAMES = {0: "human", 1: "bot"}
SPLIT_NAMES = ("train", "val", "test")
UNASSIGNED = -1


class DatasetError(ValueError):
    """Malformed or inconsistent dataset directory."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Directed multi-relation graph over ``num_nodes`` nodes.

    ``edges[r]`` is a pair of (src, dst) arrays. In-neighbour structure is
    derived lazily and cached; nothing here is mutable after construction.
    """

    num_nodes: int
    relations: tuple[str, ...]
    edges: dict[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.relations:
            raise ValueError("a graph needs at least one relation")
        if len(set(self.relations)) != len(self.relations):
            raise ValueError(f"duplicate relation names: {self.relations}")
        if set(self.edges) != set(self.relations):
            raise ValueError("edges must be given for exactly the declared relations")
        frozen = {}
        for r in self.relations:
            src, dst = (np.asarray(a, dtype=np.int64) for a in self.edges[r])
            if src.shape != dst.shape or src.ndim != 1:
                raise ValueError(f"relation {r!r}: src/dst must be equal-length vectors")
            for a in (src, dst):
                if a.size and (a.min() < 0 or a.max() >= self.num_nodes):
                    raise ValueError(f"relation {r!r}: edge endpoint out of range [0, {self.num_nodes})")
            frozen[r] = (_frozen(src), _frozen(dst))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "edges", frozen)

    @property
    def num_edges(self) -> int:
        return sum(len(self.edges[r][0]) for r in self.relations)

    @cached_property
    def _in_csr(self) -> dict[str, sp.csr_matrix]:
        n = self.num_nodes
        out = {}
        for r in self.relations:
            src, dst = self.edges[r]
            m = sp.csr_matrix((np.ones(len(src)), (dst, src)), shape=(n, n))
            m.sum_duplicates()
            m.sort_indices()
            out[r] = m
        return out

    def in_degree(self, relation: str) -> np.ndarray:
        """|N_i^r| for every node i, counting parallel edges."""
        return np.asarray(self._in_csr[relation].sum(axis=1)).ravel()

    def in_neighbors(self, relation: str, i: int) -> np.ndarray:
        """Sorted sources j of edges j -> i under ``relation`` (with repeats)."""
        m = self._in_csr[relation]
        lo, hi = m.indptr[i], m.indptr[i + 1]
        return np.repeat(m.indices[lo:hi], m.data[lo:hi].astype(np.int64))

    def mean_adjacency(self, relation: str, dtype=np.float64) -> sp.csr_matrix:
        """Row-normalised in-adjacency: row i averages over N_i^r; empty rows stay zero."""
        return self._mean_adjacency[relation].astype(dtype)

    @cached_property
    def _mean_adjacency(self) -> dict[str, sp.csr_matrix]:
        out = {}
        for r in self.relations:
            m = self._in_csr[r]
            deg = np.asarray(m.sum(axis=1)).ravel()
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            out[r] = sp.diags(inv) @ m
            out[r] = out[r].tocsr()
        return out


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    desc: np.ndarray
    tweet: np.ndarray
    numerical: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        for name in BLOCKS:
            block = np.asarray(getattr(self, name), dtype=np.float64)
            if block.ndim != 2 or block.shape[0] != n:
                raise ValueError(f"feature block {name!r} must have {n} rows, got shape {block.shape}")
            object.__setattr__(self, name, _frozen(block))
        if not np.isin(self.categorical, (0.0, 1.0)).all():
            raise ValueError("categorical entries must be 0 or 1")
        labels = np.asarray(self.labels, dtype=np.int64)
        if not np.isin(labels, (-1, 0, 1)).all():
            raise ValueError("labels must lie in {-1, 0, 1}")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    def block(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def dims(self) -> dict[str, int]:
        return {b: self.block(b).shape[1] for b in BLOCKS}


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Per-node split code: 0 train, 1 val, 2 test, -1 unassigned (unlabeled)."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if not np.isin(codes, (UNASSIGNED, 0, 1, 2)).all():
            raise ValueError("split codes must lie in {-1, 0, 1, 2}")
        object.__setattr__(self, "codes", _frozen(codes))

    @property
    def train(self) -> np.ndarray:
        return self.codes == 0

    @property
    def val(self) -> np.ndarray:
        return self.codes == 1

    @property
    def test(self) -> np.ndarray:
        return self.codes == 2

    def mask(self, name: str) -> np.ndarray:
        return self.codes == SPLIT_NAMES.index(name)

    def sizes(self) -> dict[str, int]:
        return {name: int(self.mask(name).sum()) for name in SPLIT_NAMES}


@dataclass(frozen=True)
class DatasetMeta:
    num_nodes: int
    relations: tuple[str, ...]
    dims: dict[str, int]
    label_names: tuple[str, ...] = ("human", "bot")
    version: int = FORMAT_VERSION

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "num_nodes": self.num_nodes,
            "relations": list(self.relations),
            "dims": {b: int(self.dims[b]) for b in BLOCKS},
        }


class Dataset(NamedTuple):
    graph: HeteroGraph
    features: FeatureBundle
    split: SplitAssignment
    meta: DatasetMeta

    def normalized(self) -> "Dataset":
        return self._replace(features=normalize_numerical(self.features, self.split))


# --------------------------------------------------------------------------
# preprocessing


def normalize_numerical(bundle: FeatureBundle, split: SplitAssignment) -> FeatureBundle:
    """Z-score numerical columns with train-row statistics (population std).

    Columns that are constant on the train rows map to all zeros.
    """
    x = bundle.numerical
    if x.shape[1] == 0:
        raise ValueError("numerical block is empty")
    train = split.train
    if not train.any():
        raise ValueError("no train rows to compute statistics from")
    mu = x[train].mean(axis=0)
    sigma = x[train].std(axis=0)
    const = (np.ptp(x[train], axis=0) == 0) | (sigma == 0)
    z = (x - mu) / np.where(const, 1.0, sigma)
    z[:, const] = 0.0
    return FeatureBundle(bundle.desc, bundle.tweet, z, bundle.categorical, bundle.labels)


def stratified_split(
    labels: np.ndarray,
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Per-class shuffled split of labeled nodes; unlabeled nodes stay unassigned."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    codes = np.full(len(labels), UNASSIGNED, dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        if idx.size < 3:
            raise ValueError(f"class {cls} has {idx.size} labeled nodes; at least 3 are needed to stratify")
        idx = rng.permutation(idx)
        n_train = int(round(idx.size * ratios[0]))
        n_val = int(round(idx.size * ratios[1]))
        n_val = min(n_val, idx.size - n_train)
        codes[idx[:n_train]] = 0
        codes[idx[n_train : n_train + n_val]] = 1
        codes[idx[n_train + n_val :]] = 2
    return SplitAssignment(codes)


# --------------------------------------------------------------------------
# on-disk format


def _read_csv(path: Path, columns: list[str] | None, dtype=None) -> pd.DataFrame:
    if not path.exists():
        raise DatasetError(f"{path}: missing file")
    try:
        df = pd.read_csv(path, dtype=dtype, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError) as e:
        raise DatasetError(f"{path}: {e}") from e
    if columns is not None and list(df.columns[: len(columns)]) != columns:
        raise DatasetError(f"{path}:1: expected header starting with {columns}, got {list(df.columns)}")
    return df


def _check_node_ids(path: Path, ids: np.ndarray, n: int) -> None:
    if len(ids) != n:
        raise DatasetError(f"{path}: expected {n} rows, found {len(ids)}")
    bad = np.flatnonzero(ids != np.arange(n))
    if bad.size:
        raise DatasetError(f"{path}:{bad[0] + 2}: node_id {ids[bad[0]]} out of order (expected {bad[0]})")


def _read_matrix(path: Path, n: int, width: int) -> np.ndarray:
    df = _read_csv(path, ["node_id"])
    if df.shape[1] - 1 != width:
        raise DatasetError(f"{path}:1: {df.shape[1] - 1} feature columns, meta.json declares {width}")
    nan_rows = np.flatnonzero(df.isna().any(axis=1).to_numpy())
    if nan_rows.size:
        raise DatasetError(f"{path}:{nan_rows[0] + 2}: missing or non-numeric value")
    try:
        values = df.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DatasetError(f"{path}: non-numeric value ({e})") from e
    _check_node_ids(path, values[:, 0].astype(np.int64), n)
    return values[:, 1:]


def read_meta(path: Path) -> DatasetMeta:
    if not path.exists():
        raise DatasetError(f"{path}: missing file")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        meta = DatasetMeta(
            num_nodes=int(raw["num_nodes"]),
            relations=tuple(raw["relations"]),
            dims={b: int(raw["dims"][b]) for b in BLOCKS},
            version=int(raw.get("version", FORMAT_VERSION)),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: malformed meta ({e!r})") from e
    if meta.version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format version {meta.version}")
    if not meta.relations or len(set(meta.relations)) != len(meta.relations):
        raise DatasetError(f"{path}: relation list must be non-empty and duplicate-free")
    return meta


def load_dataset(dir_path: str | os.PathLike, split_seed: int = 0) -> Dataset:
    """Read a dataset directory, validating it against its meta.json.

    When ``splits.csv`` is absent a stratified 70/20/10 split seeded with
    ``split_seed`` is generated.
    """
    root = Path(dir_path)
    meta = read_meta(root / "meta.json")
    n = meta.num_nodes

    blocks = {b: _read_matrix(root / f"features_{b}.csv", n, meta.dims[b]) for b in BLOCKS}
    cat_bad = np.argwhere(~np.isin(blocks["categorical"], (0.0, 1.0)))
    if cat_bad.size:
        raise DatasetError(f"{root / 'features_categorical.csv'}:{cat_bad[0][0] + 2}: categorical value not in {{0,1}}")

    lab_path = root / "labels.csv"
    lab = _read_csv(lab_path, ["node_id", "label"])
    if lab.isna().any(axis=None):
        raise DatasetError(f"{lab_path}:{int(np.flatnonzero(lab.isna().any(axis=1))[0]) + 2}: missing value")
    _check_node_ids(lab_path, lab["node_id"].to_numpy(np.int64), n)
    labels = lab["label"].to_numpy()
    bad = np.flatnonzero(~np.isin(labels, (-1, 0, 1)))
    if bad.size:
        raise DatasetError(f"{lab_path}:{bad[0] + 2}: label out of range ({labels[bad[0]]})")
    labels = labels.astype(np.int64)

    edges = {}
    for r in meta.relations:
        path = root / f"edges_{r}.csv"
        df = _read_csv(path, ["src", "dst"])
        if df.isna().any(axis=None):
            raise DatasetError(f"{path}:{int(np.flatnonzero(df.isna().any(axis=1))[0]) + 2}: missing value")
        e = df[["src", "dst"]].to_numpy(np.int64)
        bad = np.flatnonzero((e < 0).any(axis=1) | (e >= n).any(axis=1))
        if bad.size:
            raise DatasetError(f"{path}:{bad[0] + 2}: edge endpoint out of range [0, {n})")
        edges[r] = (e[:, 0], e[:, 1])
    graph = HeteroGraph(n, meta.relations, edges)

    features = FeatureBundle(labels=labels, **blocks)
    split_path = root / "splits.csv"
    if split_path.exists():
        df = _read_csv(split_path, ["node_id", "split"], dtype={"split": str})
        _check_node_ids(split_path, df["node_id"].to_numpy(np.int64), n)
        names = df["split"].fillna("").to_numpy()
        codes = np.full(n, UNASSIGNED, dtype=np.int64)
        for i, name in enumerate(SPLIT_NAMES):
            codes[names == name] = i
        bad = np.flatnonzero((codes == UNASSIGNED) & (labels != -1))
        if bad.size:
            raise DatasetError(f"{split_path}:{bad[0] + 2}: labeled node without a train/val/test split")
        codes[labels == -1] = UNASSIGNED
        split = SplitAssignment(codes)
    else:
        split = stratified_split(labels, seed=split_seed)
    return Dataset(graph, features, split, meta)


def validate_dataset(dir_path: str | os.PathLike) -> Dataset:
    """Load and return the dataset, raising :class:`DatasetError` on any defect."""
    return load_dataset(dir_path)


def _write_matrix(path: Path, values: np.ndarray, fmt: str) -> None:
    n, d = values.shape
    header = ",".join(["node_id"] + [f"f{i}" for i in range(d)])
    table = np.column_stack([np.arange(n), values]) if d else np.arange(n)[:, None]
    np.savetxt(path, table, fmt=["%d"] + [fmt] * d, delimiter=",", header=header, comments="", encoding="utf-8")


def write_dataset(dataset: Dataset, dir_path: str | os.PathLike, write_splits: bool = True) -> Path:
    """Write ``dataset`` in the directory format; floats round-trip exactly."""
    root = Path(dir_path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"{root}: cannot create output directory ({e})") from e
    graph, feats, split, meta = dataset
    (root / "meta.json").write_text(json.dumps(meta.to_json(), indent=2) + "\n", encoding="utf-8")
    for b in BLOCKS:
        fmt = "%d" if b == "categorical" else "%.17g"
        _write_matrix(root / f"features_{b}.csv", feats.block(b), fmt)
    for r in graph.relations:
        src, dst = graph.edges[r]
        np.savetxt(root / f"edges_{r}.csv", np.column_stack([src, dst]), fmt="%d",
                   delimiter=",", header="src,dst", comments="", encoding="utf-8")
    n = graph.num_nodes
    np.savetxt(root / "labels.csv", np.column_stack([np.arange(n), feats.labels]), fmt="%d",
               delimiter=",", header="node_id,label", comments="", encoding="utf-8")
    if write_splits:
        names = np.array([""] + list(SPLIT_NAMES), dtype=object)[split.codes + 1]
        with open(root / "splits.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("node_id,split\n")
            fh.writelines(f"{i},{s}\n" for i, s in enumerate(names))
    return root
