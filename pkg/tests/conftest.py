import numpy as np
import pytest

from ptsearch.graph import Dataset, DatasetMeta, FeatureBundle, HeteroGraph, SplitAssignment
from ptsearch.synthetic import make_synthetic

_ACCEPTANCE: list[tuple[str, str]] = []


def tiny_dataset(n=6, dims=(3, 3, 2, 2), relations=("following", "follower"), seed=0) -> Dataset:
    """Small random graph with every node labeled and split 4/1/1-ish."""
    rng = np.random.default_rng(seed)
    edges = {}
    for r in relations:
        src, dst = [], []
        for i in range(n):
            for j in range(n):
                if i != j and rng.random() < 0.4:
                    src.append(i)
                    dst.append(j)
        edges[r] = (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
    labels = np.array([i % 2 for i in range(n)])
    feats = FeatureBundle(
        desc=rng.normal(size=(n, dims[0])),
        tweet=rng.normal(size=(n, dims[1])),
        numerical=rng.normal(size=(n, dims[2])),
        categorical=(rng.random((n, dims[3])) < 0.5).astype(float),
        labels=labels,
    )
    codes = np.zeros(n, dtype=np.int64)
    codes[-2] = 1
    codes[-1] = 2
    graph = HeteroGraph(n, tuple(relations), edges)
    meta = DatasetMeta(n, tuple(relations), feats.dims())
    return Dataset(graph, feats, SplitAssignment(codes), meta)


@pytest.fixture
def tiny():
    return tiny_dataset()


@pytest.fixture(scope="session")
def desk_small():
    return make_synthetic(200, 0.5, 2, 3.0, seed=3).normalized()


@pytest.fixture(scope="session")
def desk_1000():
    return make_synthetic(1000, 0.5, 2, 3.0, seed=7).normalized()


def logistic_probe(dataset: Dataset) -> float:
    """Validation accuracy of a logistic regression on raw concatenated features."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    f = dataset.features
    x = np.hstack([f.desc, f.tweet, f.numerical, f.categorical])
    tr, va = dataset.split.train, dataset.split.val
    scaler = StandardScaler().fit(x[tr])
    clf = LogisticRegression(max_iter=5000).fit(scaler.transform(x[tr]), f.labels[tr])
    return float(clf.score(scaler.transform(x[va]), f.labels[va]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__.endswith("test_acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _ACCEPTANCE.append(("PASS" if rep.passed else "FAIL", doc))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, doc in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {doc}")


def model_fragment(model, dataset, dropout=True, seed=0):
    """Scalar training loss of ``model`` as a grad_check fragment.

    The dropout rng is rebuilt on every call so each evaluation sees the same masks.
    """
    from ptsearch.pipeline import forward

    graph, feats, split, _ = dataset
    mask = feats.labels >= 0

    def frag(tape, store):
        assert store is model.params
        rate_f, rate_g = (0.5, 0.8) if dropout else (0.0, 0.0)
        logits = forward(model, graph, feats, training=True, rng=np.random.default_rng(seed), tape=tape,
                         dropout_feature=rate_f, dropout_gnn=rate_g)
        return tape.cross_entropy(logits, feats.labels, mask)

    return frag


def dense_adjacency(graph, relation):
    """Mean in-adjacency built directly from the edge list (independent of HeteroGraph caches)."""
    n = graph.num_nodes
    a = np.zeros((n, n))
    for s, d in zip(*graph.edges[relation]):
        a[d, s] += 1
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)
