"""Compile a P/T genotype into a relational GNN and run it.

Layer ``l`` (1-based) of a genotype reads ``o[l-1]`` and writes ``o[l]``;
``o[0]`` is the encoded node features. P layers average neighbours per
relation and are mixed by a node-adaptive softmax gate whenever a T (or the
classifier head) follows. T layers read their predecessor plus the outputs of
earlier T layers (skip-connections) and apply root + relation weights.
"""
from __future__ import annotations

import io
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import DTYPES, ParamStore, Tape, Tensor
from .graph import BLOCKS, DatasetMeta, FeatureBundle, HeteroGraph

OPS = frozenset("PT")
P_WEIGHT_MODES = ("identity", "relational")


class GenotypeError(ValueError):
    pass


def parse_genotype(text: str) -> str:
    """Validate a genotype string such as ``"PPTPT"``."""
    if not isinstance(text, str) or not text:
        raise GenotypeError("invalid genotype: must be a non-empty string of 'P'/'T'")
    if not set(text) <= OPS:
        raise GenotypeError(f"invalid genotype {text!r}: only 'P' and 'T' are allowed")
    return text


def p_layers(genotype: str) -> list[int]:
    """1-based indices of P layers (L_P)."""
    return [i + 1 for i, op in enumerate(genotype) if op == "P"]


def t_layers(genotype: str) -> list[int]:
    """1-based indices of T layers (L_T)."""
    return [i + 1 for i, op in enumerate(genotype) if op == "T"]


def skip_sources(genotype: str, l: int) -> list[int]:
    """Indices of earlier T outputs summed into the input of T layer ``l``.

    These are the T layers strictly before ``m(l)``, the last T preceding
    ``l``. The immediate predecessor ``o[l-1]`` is added separately.
    """
    if genotype[l - 1] != "T":
        raise ValueError(f"layer {l} of {genotype!r} is not a T layer")
    prior = [i for i in t_layers(genotype) if i < l]
    if not prior:
        return []
    last = prior[-1]
    return [i for i in prior if i < last]


def gated(genotype: str, l: int) -> bool:
    """Whether P layer ``l`` mixes all earlier P outputs (next op is T or the head)."""
    return l == len(genotype) or genotype[l] == "T"


@dataclass
class ArchConfig:
    hidden: int = 32
    gate: bool = True
    skip: bool = True
    p_weights: str = "identity"
    feature_mask: tuple[str, ...] = BLOCKS
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.hidden <= 0 or self.hidden % 4:
            raise ValueError(f"hidden dimension must be a positive multiple of 4, got {self.hidden}")
        if self.p_weights not in P_WEIGHT_MODES:
            raise ValueError(f"p_weights must be one of {P_WEIGHT_MODES}")
        self.feature_mask = tuple(b for b in BLOCKS if b in set(self.feature_mask))
        if not self.feature_mask:
            raise ValueError("feature_mask must keep at least one feature block")


@dataclass
class PipelineModel:
    genotype: str
    arch: ArchConfig
    dims: dict[str, int]
    relations: tuple[str, ...]
    seed: int
    params: ParamStore
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def hidden(self) -> int:
        return self.arch.hidden


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def compile_model(genotype: str, meta: DatasetMeta, arch: ArchConfig | None = None, seed: int = 0) -> PipelineModel:
    """Initialise all parameters for ``genotype`` (fan-in scaled uniform, seeded)."""
    genotype = parse_genotype(genotype)
    arch = arch or ArchConfig()
    d = arch.hidden
    q = d // 4
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for b in BLOCKS:
        fan = max(meta.dims[b], 1)
        store.add(f"enc.{b}.W", _uniform(rng, fan, (meta.dims[b], q)))
        store.add(f"enc.{b}.b", _uniform(rng, fan, (1, q)))
    store.add("gate.s", _uniform(rng, d, (d, 1)))
    for l, op in enumerate(genotype, start=1):
        if op == "T":
            store.add(f"layer{l}.root.W", _uniform(rng, d, (d, d)))
            for r in meta.relations:
                store.add(f"layer{l}.{r}.W", _uniform(rng, d, (d, d)))
            store.add(f"layer{l}.b", _uniform(rng, d, (1, d)))
        elif arch.p_weights == "relational":
            for r in meta.relations:
                store.add(f"layer{l}.{r}.W", _uniform(rng, d, (d, d)))
    store.add("head.0.W", _uniform(rng, d, (d, d)))
    store.add("head.0.b", _uniform(rng, d, (1, d)))
    store.add("head.1.W", _uniform(rng, d, (d, 2)))
    store.add("head.1.b", _uniform(rng, d, (1, 2)))
    return PipelineModel(genotype, arch, dict(meta.dims), tuple(meta.relations), seed, store)


# --------------------------------------------------------------------------
# building blocks


def encode_features(
    tape: Tape,
    model: PipelineModel,
    bundle: FeatureBundle,
    dtype=np.float64,
) -> Tensor:
    """Project each kept block to hidden/4 dims with leaky-ReLU and concatenate.

    Blocks outside ``arch.feature_mask`` contribute an all-zero segment, so
    the hidden width never changes across ablation arms.
    """
    n = bundle.num_nodes
    q = model.hidden // 4
    parts = []
    for b in BLOCKS:
        if b in model.arch.feature_mask:
            x = tape.constant(bundle.block(b).astype(dtype, copy=False))
            h = tape.affine(x, tape.param(model.params, f"enc.{b}.W"), tape.param(model.params, f"enc.{b}.b"))
            parts.append(tape.leaky_relu(h, model.arch.leaky_slope))
        else:
            parts.append(tape.constant(np.zeros((n, q), dtype=dtype)))
    return tape.concat(parts)


def propagate(tape: Tape, h: Tensor, graph: HeteroGraph, model: PipelineModel | None = None, layer: int | None = None) -> Tensor:
    """Sum over relations of the per-relation neighbour mean.

    In relational mode each relation's mean is multiplied by its own weight.
    """
    dtype = h.value.dtype
    relational = model is not None and model.arch.p_weights == "relational"
    terms = []
    for r in graph.relations:
        agg = tape.spmm(graph.mean_adjacency(r, dtype), h)
        if relational:
            agg = tape.matmul(agg, tape.param(model.params, f"layer{layer}.{r}.W"))
        terms.append(agg)
    return tape.add(*terms)


def gate_combine(tape: Tape, zs: list[Tensor], scores_from: list[Tensor], s: Tensor) -> tuple[Tensor, Tensor]:
    """Node-adaptive mixture of P outputs.

    Scores are ``sigmoid(o_i @ s)`` from ``scores_from``; the softmax over
    those scores weights ``zs``. Returns (mixture, weights N x len(zs)).
    """
    if not zs or len(zs) != len(scores_from):
        raise ValueError("gate_combine needs one score source per P output")
    scores = tape.concat([tape.sigmoid(tape.matmul(o, s)) for o in scores_from])
    weights = tape.softmax_rows(scores)
    return tape.mix(weights, zs), weights


def transform(tape: Tape, z: Tensor, model: PipelineModel, layer: int) -> Tensor:
    """leaky_relu(z W_root + sum_r z W_r + b)."""
    p = model.params
    terms = [tape.affine(z, tape.param(p, f"layer{layer}.root.W"), tape.param(p, f"layer{layer}.b"))]
    terms += [tape.matmul(z, tape.param(p, f"layer{layer}.{r}.W")) for r in model.relations]
    return tape.leaky_relu(tape.add(*terms), model.arch.leaky_slope)


def head(tape: Tape, h: Tensor, model: PipelineModel) -> Tensor:
    p = model.params
    x = tape.affine(h, tape.param(p, "head.0.W"), tape.param(p, "head.0.b"))
    x = tape.leaky_relu(x, model.arch.leaky_slope)
    return tape.affine(x, tape.param(p, "head.1.W"), tape.param(p, "head.1.b"))


# --------------------------------------------------------------------------
# full network


def forward(
    model: PipelineModel,
    graph: HeteroGraph,
    bundle: FeatureBundle,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
    dropout_feature: float = 0.5,
    dropout_gnn: float = 0.8,
) -> Tensor:
    """Logits (N x 2) for every node.

    Dropout is only active when ``training`` is set; it then needs ``rng``.
    Layer outputs are left in ``model.cache`` as numpy arrays.
    """
    if set(model.relations) != set(graph.relations) or model.dims != bundle.dims():
        raise ValueError("model was compiled for a different dataset layout")
    if training and rng is None and (dropout_feature > 0 or dropout_gnn > 0):
        raise ValueError("training-mode dropout needs an rng")
    tape = tape if tape is not None else Tape(grad=False)
    dtype = next(iter(model.params.params.values())).dtype
    genotype, arch = model.genotype, model.arch

    h0 = encode_features(tape, model, bundle, dtype)
    h0 = tape.dropout(h0, dropout_feature, training, rng)
    o: list[Tensor] = [h0]
    z: dict[int, Tensor] = {}
    s = tape.param(model.params, "gate.s")
    gate_weights = {}

    for l, op in enumerate(genotype, start=1):
        if op == "P":
            z[l] = propagate(tape, o[l - 1], graph, model, l)
            if arch.gate and gated(genotype, l):
                idx = [i for i in p_layers(genotype) if i <= l]
                # o[l] is what is being defined, so layer l scores from its own z
                sources = [o[i] if i < l else z[l] for i in idx]
                out, w = gate_combine(tape, [z[i] for i in idx], sources, s)
                gate_weights[l] = w.value
            else:
                out = z[l]
        else:
            inputs = [o[l - 1]]
            if arch.skip:
                inputs += [o[i] for i in skip_sources(genotype, l)]
            z[l] = tape.add(*inputs)
            out = transform(tape, z[l], model, l)
            out = tape.dropout(out, dropout_gnn, training, rng)
        o.append(out)

    logits = head(tape, o[-1], model)
    model.cache = {
        "o": [t.value for t in o],
        "z": {l: t.value for l, t in z.items()},
        "gate_weights": gate_weights,
    }
    return logits


def predict_logits(model: PipelineModel, graph: HeteroGraph, bundle: FeatureBundle) -> np.ndarray:
    """Inference-mode logits as a plain array."""
    return forward(model, graph, bundle, training=False).value


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: PipelineModel, path: str | os.PathLike) -> None:
    meta = {
        "genotype": model.genotype,
        "arch": {**asdict(model.arch), "feature_mask": list(model.arch.feature_mask)},
        "dims": model.dims,
        "relations": list(model.relations),
        "seed": model.seed,
        "dtype": str(next(iter(model.params.params.values())).dtype),
    }
    arrays = {f"param:{k}": v for k, v in model.params.params.items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> PipelineModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        store = ParamStore()
        for key in data.files:
            if key.startswith("param:"):
                store.add(key[len("param:"):], data[key])
    arch = ArchConfig(**{**meta["arch"], "feature_mask": tuple(meta["arch"]["feature_mask"])})
    if meta["dtype"] not in DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {meta['dtype']}")
    return PipelineModel(meta["genotype"], arch, meta["dims"], tuple(meta["relations"]), meta["seed"], store)
