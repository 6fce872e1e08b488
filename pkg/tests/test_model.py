import numpy as np
import pytest

import cqarank.nn_core as nn
from cqarank.dataset import binarize
from cqarank.model import (
    MtlModel,
    PairModel,
    apply_word_vectors,
    compute_pair_features,
    compute_triple_features,
    load_word_vectors,
    rank_bin,
)
from cqarank.synthetic import gradcheck_corpus, vocabulary_for
from cqarank.training import joint_loss


@pytest.fixture(scope="module")
def corpus():
    return gradcheck_corpus()


@pytest.fixture(scope="module")
def vocab(corpus):
    return vocabulary_for(corpus)


def small_mtl(vocab, seed=0, dtype=np.float32):
    return MtlModel(vocab, m=6, d_w=8, d_feat=3, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# rank discretization
# ---------------------------------------------------------------------------


def test_rank_bin_boundaries():
    assert rank_bin(1) == 0
    assert rank_bin(2) == 1
    assert rank_bin(4) == 1
    assert rank_bin(5) == 2
    assert rank_bin(9) == 2
    assert rank_bin(10) == 3
    assert rank_bin(24) == 3
    assert rank_bin(25) == 4
    assert rank_bin(10_000) == 4


def test_rank_bin_total_and_monotone():
    previous = 0
    seen = set()
    for rank in range(1, 10_001):
        b = rank_bin(rank)
        assert 0 <= b < 5
        assert b >= previous
        previous = b
        seen.add(b)
    assert seen == {0, 1, 2, 3, 4}
    with pytest.raises(ValueError):
        rank_bin(0)


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------


def test_triple_features_use_union_overlaps(corpus, vocab):
    feats = compute_triple_features(corpus[0], vocab)
    # "wifi" occurs in all three texts, so it overlaps from every side
    for text in (feats.q_new, feats.q_rel, feats.c_rel):
        assert text.ids is not None and text.overlaps is not None
        idx = text.tokens.index("wifi")
        assert text.overlaps[idx] == 1
    # "pizza" appears only in q_rel of corpus[1]
    feats = compute_triple_features(corpus[1], vocab)
    idx = feats.q_rel.tokens.index("pizza")
    assert feats.q_rel.overlaps[idx] == 0
    assert feats.rank_bin == rank_bin(corpus[1].google_rank)


def test_pair_features_select_task_texts(corpus, vocab):
    t = corpus[0]
    a = compute_pair_features(t, "A", vocab)
    b = compute_pair_features(t, "B", vocab)
    c = compute_pair_features(t, "C", vocab)
    assert a.left.tokens[:2] == ("wifi", "drops")  # q_rel subject first
    assert b.left.tokens[:2] == ("upgrade", "breaks")  # q_new
    assert b.right.tokens[:2] == ("wifi", "drops")  # q_rel
    assert c.right.tokens == a.right.tokens  # both use the comment
    with pytest.raises(ValueError):
        compute_pair_features(t, "D", vocab)


def test_pair_overlaps_are_pairwise_not_union(corpus, vocab):
    t = corpus[1]  # pizza question, comment about a place on fifth street
    b = compute_pair_features(t, "B", vocab)
    # "pizza" is not in q_new, so in the (q_new, q_rel) pair it has no overlap
    idx = b.right.tokens.index("pizza")
    assert b.right.overlaps[idx] == 0


def test_empty_text_falls_back_to_pad(vocab):
    from cqarank.dataset import Triple

    t = Triple(
        id="e", group="g", q_new_subject=None, q_new_body="", q_rel_subject="s",
        q_rel_body="b", c_rel="c", google_rank=1,
        label_A="good", label_B="relevant", label_C="good",
    )
    feats = compute_triple_features(t, vocab)
    assert feats.q_new.tokens == ("<pad>",)
    assert feats.q_new.ids == (0,)
    model = small_mtl(vocab)
    preds = model.predict(feats)
    for tensor in preds.values():
        assert np.isfinite(tensor.data).all()


# ---------------------------------------------------------------------------
# parameter sharing
# ---------------------------------------------------------------------------


def test_mtl_question_encoder_is_shared(corpus, vocab):
    model = small_mtl(vocab)
    params = model.parameters()
    names = [p.name for p in params]
    assert len(names) == len(set(names))  # no duplicates
    assert len(params) == len({id(p) for p in params})  # each stored once
    # 4 per encoder, rank table, joint layer (2), 3 heads of 4
    assert len(params) == 4 + 4 + 1 + 2 + 12

    # perturbing the single question-encoder table changes both question
    # encodings but not the comment encoding
    feats = model.featurize(corpus[0])
    before = model.predict(feats)
    model.q_encoder.word_emb.data[:] += 0.5
    after = model.predict(feats)
    for task in ("A", "B", "C"):
        assert before[task].data[0] != after[task].data[0]


def test_mtl_shared_encoder_receives_gradients_from_both_questions(corpus, vocab):
    model = small_mtl(vocab, dtype=np.float64)
    feats = model.featurize(corpus[0])
    preds = model.predict(feats)
    loss = joint_loss(preds, binarize(corpus[0]), ("A", "B", "C"))
    model.zero_grads()
    loss.backward()
    assert np.abs(model.q_encoder.filters.grad).sum() > 0
    assert np.abs(model.c_encoder.filters.grad).sum() > 0


def test_pair_model_task_b_shares_one_encoder(vocab):
    b = PairModel(vocab, task="B", m=6, d_w=8, d_feat=3)
    assert b.right_encoder is b.left_encoder
    a = PairModel(vocab, task="A", m=6, d_w=8, d_feat=3)
    assert a.right_encoder is not a.left_encoder
    # task A is not search-ranked, so it has no rank embedding
    assert a.rank_emb is None and a.joint_dim == 12
    assert b.rank_emb is not None and b.joint_dim == 15


def test_pair_model_predict_scores_only_its_task(corpus, vocab):
    model = PairModel(vocab, task="C", m=6, d_w=8, d_feat=3)
    preds = model.predict(model.featurize(corpus[0]))
    assert set(preds) == {"C"}
    assert 0.0 < preds["C"].data[0] < 1.0


# ---------------------------------------------------------------------------
# invariances and determinism
# ---------------------------------------------------------------------------


def test_zeroed_rank_table_makes_rank_irrelevant(corpus, vocab):
    import dataclasses

    model = small_mtl(vocab)
    model.rank_emb.data[:] = 0.0
    base = corpus[0]
    scores = []
    for rank in (1, 3, 7, 12, 80):
        t = dataclasses.replace(base, google_rank=rank)
        preds = model.predict(model.featurize(t))
        scores.append({k: v.data[0] for k, v in preds.items()})
    for other in scores[1:]:
        for task in ("A", "B", "C"):
            assert other[task] == scores[0][task]


def test_same_seed_same_model(corpus, vocab):
    m1, m2 = small_mtl(vocab, seed=9), small_mtl(vocab, seed=9)
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert p1.name == p2.name
        np.testing.assert_array_equal(p1.data, p2.data)
    m3 = small_mtl(vocab, seed=10)
    assert any(
        not np.array_equal(p1.data, p3.data)
        for p1, p3 in zip(m1.parameters(), m3.parameters())
    )
    feats = m1.featurize(corpus[2])
    r1 = m1.predict(feats)
    r2 = m1.predict(feats)
    for task in ("A", "B", "C"):
        assert r1[task].data[0] == r2[task].data[0]


def test_init_is_bounded(vocab):
    model = small_mtl(vocab, seed=3)
    for p in model.parameters():
        assert np.all(np.abs(p.data) <= 0.05)


def test_training_mode_dropout_changes_scores(corpus, vocab):
    model = small_mtl(vocab)
    feats = model.featurize(corpus[0])
    quiet = model.predict(feats)
    noisy = model.predict(feats, training=True, rng=np.random.default_rng(0))
    assert any(quiet[t].data[0] != noisy[t].data[0] for t in ("A", "B", "C"))


# ---------------------------------------------------------------------------
# pretrained vectors
# ---------------------------------------------------------------------------


def test_word_vectors_round_trip(tmp_path, vocab):
    path = tmp_path / "vectors.txt"
    d_w = 8
    line = "wifi " + " ".join(str(0.125 * (i + 1)) for i in range(d_w))
    path.write_text(line + "\nunknownword " + " ".join(["0.0"] * d_w) + "\n")
    vectors = load_word_vectors(str(path), vocab, d_w)
    assert set(vectors) == {"wifi"}
    model = small_mtl(vocab)
    replaced = apply_word_vectors(model, vectors)
    assert replaced == 1
    idx = vocab.id_of("wifi")
    np.testing.assert_allclose(model.q_encoder.word_emb.data[idx], vectors["wifi"], rtol=1e-6)
    np.testing.assert_allclose(model.c_encoder.word_emb.data[idx], vectors["wifi"], rtol=1e-6)


def test_word_vectors_dimension_mismatch(tmp_path, vocab):
    path = tmp_path / "vectors.txt"
    path.write_text("wifi 1.0 2.0\n")
    with pytest.raises(ValueError, match="components"):
        load_word_vectors(str(path), vocab, 8)
