import numpy as np
import pytest
from hypothesis import given, strategies as st

from revealkit.embed import UNK, TokenEmbedding, featurize_graph, featurize_vertex, train_skipgram
from revealkit.graph import DEFAULT_VERTEX_TYPES, DEFAULT_VERTEX_VOCAB, CodeGraph, Vertex


def _cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


@pytest.fixture(scope="module")
def cooccur_corpus():
    # "a" and "b" always appear together; "z" lives in a disjoint set of sentences
    rng = np.random.default_rng(0)
    left = ["c", "d", "e", "f"]
    right = ["w", "x", "y", "z"]
    corpus = []
    for _ in range(300):
        corpus.append(["a", "b"] + list(rng.choice(left, 3)))
        corpus.append(list(rng.choice(right, 5)))
    return corpus


@pytest.fixture(scope="module")
def trained(cooccur_corpus):
    return train_skipgram(cooccur_corpus, window=2, dim=20, epochs=5, seed=3)


def test_dimension_contract():
    emb = train_skipgram([["x", "y", "z"]] * 5, dim=100, epochs=1)
    assert emb.vectors.shape == (len(emb.vocab), 100)
    assert all(emb[t].shape == (100,) for t in emb.vocab)


def test_cooccurring_tokens_are_closer(trained):
    assert _cos(trained["a"], trained["b"]) > _cos(trained["a"], trained["z"])


def test_loss_decreases(trained):
    assert trained.epoch_losses[-1] < trained.epoch_losses[0]


def test_deterministic(cooccur_corpus):
    a = train_skipgram(cooccur_corpus[:50], window=3, dim=8, epochs=2, seed=11)
    b = train_skipgram(cooccur_corpus[:50], window=3, dim=8, epochs=2, seed=11)
    assert a.vocab == b.vocab
    assert np.array_equal(a.vectors, b.vectors)
    c = train_skipgram(cooccur_corpus[:50], window=3, dim=8, epochs=2, seed=12)
    assert not np.array_equal(a.vectors, c.vectors)


def test_unknown_tokens_map_to_zero_unk_row(trained):
    assert trained.vocab[UNK] == 0
    assert np.all(trained["never-seen"] == 0)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty corpus"):
        train_skipgram([])
    with pytest.raises(ValueError, match="empty corpus"):
        train_skipgram([[], []])


def test_bad_window_rejected():
    with pytest.raises(ValueError):
        train_skipgram([["a"]], window=0)


def test_json_round_trip(tmp_path, trained):
    p = tmp_path / "emb.json"
    trained.save(p)
    back = TokenEmbedding.load(p)
    assert back.vocab == trained.vocab
    assert np.array_equal(back.vectors, trained.vectors)
    assert (back.window, back.dim) == (trained.window, trained.dim)


def test_featurize_empty_code(trained):
    f = featurize_vertex(Vertex(0, "CallStatement", ""), trained)
    k = DEFAULT_VERTEX_TYPES.index("CallStatement")
    assert f.shape == (69 + 20,)
    assert f[k] == 1 and f[:69].sum() == 1
    assert np.all(f[69:] == 0)


def test_featurize_single_token(trained):
    f = featurize_vertex(Vertex(0, "Identifier", "a"), trained)
    assert np.array_equal(f[69:], trained["a"])


def test_featurize_mean_of_tokens(trained):
    f = featurize_vertex(Vertex(0, "Identifier", "a b a"), trained)
    expect = (2 * trained["a"] + trained["b"]) / 3
    assert np.allclose(f[69:], expect, atol=1e-15)


def test_default_feature_length_is_169():
    emb = train_skipgram([["int", "x", ";"]] * 3, epochs=1)
    assert featurize_vertex(Vertex(0, "Identifier", "x"), emb).shape == (169,)


def test_unknown_vertex_type(trained):
    with pytest.raises(KeyError, match="Nope"):
        featurize_vertex(Vertex(0, "Nope", "a"), trained)


@given(st.lists(st.tuples(st.sampled_from(DEFAULT_VERTEX_TYPES),
                          st.text(alphabet="abxyz+;() ", max_size=10)), min_size=1, max_size=6))
def test_one_hot_block_has_a_single_one(trained, vs):
    g = CodeGraph("g", 0, "", [Vertex(i, t, c) for i, (t, c) in enumerate(vs)])
    F = featurize_graph(g, trained)
    assert F.shape == (len(vs), len(DEFAULT_VERTEX_VOCAB) + trained.dim)
    onehot = F[:, :69]
    assert np.all(onehot.sum(axis=1) == 1)
    assert set(np.unique(onehot)) <= {0.0, 1.0}
    assert np.array_equal(F, featurize_graph(g, trained))
