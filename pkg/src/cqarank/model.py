"""Network architectures: the convolutional sentence encoder, the joint
three-input multitask network with a shared question encoder, and the
individual pairwise scorer.

The multitask network encodes (new question, related question, comment) into
three fixed-size vectors, one encoder shared by the two questions, appends a
search-rank bin embedding, mixes everything through a shared tanh layer, and
scores each task with its own two-layer head.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn_core as nn
from .dataset import Triple
from .text_pipeline import (
    PAD_ID,
    PAD_TOKEN,
    TokenizedText,
    Vocabulary,
    overlap_indicators,
    preprocess,
)

TASKS = ("A", "B", "C")

# rank bins [1,2), [2,5), [5,10), [10,25), [25,inf)
_RANK_BIN_EDGES = (2, 5, 10, 25)
RANK_BINS = len(_RANK_BIN_EDGES) + 1

INIT_SCALE = 0.05


def rank_bin(google_rank: int) -> int:
    """Discretize a search-engine rank into one of five bins."""
    if google_rank < 1:
        raise ValueError(f"rank_bin: rank must be >= 1, got {google_rank}")
    return bisect.bisect_right(_RANK_BIN_EDGES, google_rank)


def _uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype)


class SentenceEncoder:
    """Word + overlap-feature embeddings, a wide convolution, and max pooling
    collapse a token sequence into a vector of fixed length m."""

    def __init__(self, name, vocab_size, d_w, d_feat, m, width, rng, dtype):
        self.d_w = d_w
        self.d_feat = d_feat
        self.m = m
        self.width = width
        d = d_w + d_feat
        self.word_emb = nn.Parameter(f"{name}.word_emb", _uniform(rng, (vocab_size, d_w), dtype))
        self.feat_emb = nn.Parameter(f"{name}.feat_emb", _uniform(rng, (2, d_feat), dtype))
        self.filters = nn.Parameter(f"{name}.filters", _uniform(rng, (m, d, width), dtype))
        self.conv_bias = nn.Parameter(f"{name}.conv_bias", np.zeros(m, dtype=dtype))

    def parameters(self) -> list[nn.Parameter]:
        return [self.word_emb, self.feat_emb, self.filters, self.conv_bias]


def encode_sentence(encoder: SentenceEncoder, text: TokenizedText) -> nn.Tensor:
    """Run the encoder over one tokenized text; empty input falls back to a
    single PAD token so the convolution stays defined."""
    if len(text) == 0:
        ids, overlaps = (PAD_ID,), (0,)
    else:
        if text.ids is None or text.overlaps is None:
            raise ValueError("encode_sentence: text needs ids and overlaps filled")
        ids, overlaps = text.ids, text.overlaps
    emb = nn.embedding_lookup(encoder.word_emb, encoder.feat_emb, ids, overlaps)
    fmap = nn.conv1d_wide(emb, encoder.filters, encoder.conv_bias)
    return nn.kmax_pool(fmap)


class TaskHead:
    """Per-task scorer: one tanh layer sized like its input, then a sigmoid
    unit producing the relevance probability."""

    def __init__(self, name, in_dim, rng, dtype):
        self.hidden_w = nn.Parameter(f"{name}.hidden_w", _uniform(rng, (in_dim, in_dim), dtype))
        self.hidden_b = nn.Parameter(f"{name}.hidden_b", np.zeros(in_dim, dtype=dtype))
        self.out_w = nn.Parameter(f"{name}.out_w", _uniform(rng, (1, in_dim), dtype))
        self.out_b = nn.Parameter(f"{name}.out_b", np.zeros(1, dtype=dtype))

    def parameters(self) -> list[nn.Parameter]:
        return [self.hidden_w, self.hidden_b, self.out_w, self.out_b]

    def forward(self, x, training, rng, dropout_hidden):
        h = nn.dense(x, self.hidden_w, self.hidden_b, "tanh")
        h = nn.dropout(h, dropout_hidden, training, rng)
        return nn.dense(h, self.out_w, self.out_b, "sigmoid")


@dataclass(frozen=True)
class TripleFeatures:
    """Tokenized triple ready for the joint network: ids and union overlap
    indicators per text, plus the discretized search rank."""

    q_new: TokenizedText
    q_rel: TokenizedText
    c_rel: TokenizedText
    rank_bin: int


@dataclass(frozen=True)
class PairFeatures:
    """Tokenized text pair with pairwise overlaps for the individual model."""

    left: TokenizedText
    right: TokenizedText
    rank_bin: int


def _pad_text() -> TokenizedText:
    return TokenizedText((PAD_TOKEN,), (PAD_ID,), (0,))


def _finish(text: TokenizedText, vocab: Vocabulary, others) -> TokenizedText:
    if len(text) == 0:
        return _pad_text()
    return vocab.encode(text).with_overlaps(overlap_indicators(text, others))


def compute_triple_features(
    triple: Triple, vocab: Vocabulary, max_len: int = 100
) -> TripleFeatures:
    """Tokenize all three texts; each text's overlap indicators are computed
    against the union of the other two (each sentence is encoded once)."""
    q_new = preprocess(triple.q_new_subject, triple.q_new_body, max_len)
    q_rel = preprocess(triple.q_rel_subject, triple.q_rel_body, max_len)
    c_rel = preprocess(None, triple.c_rel, max_len)
    return TripleFeatures(
        q_new=_finish(q_new, vocab, (q_rel, c_rel)),
        q_rel=_finish(q_rel, vocab, (q_new, c_rel)),
        c_rel=_finish(c_rel, vocab, (q_new, q_rel)),
        rank_bin=rank_bin(triple.google_rank),
    )


def compute_pair_features(
    triple: Triple, task: str, vocab: Vocabulary, max_len: int = 100
) -> PairFeatures:
    """Extract the task's text pair with overlaps computed between the two."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    q_new = preprocess(triple.q_new_subject, triple.q_new_body, max_len)
    q_rel = preprocess(triple.q_rel_subject, triple.q_rel_body, max_len)
    c_rel = preprocess(None, triple.c_rel, max_len)
    left, right = {
        "A": (q_rel, c_rel),
        "B": (q_new, q_rel),
        "C": (q_new, c_rel),
    }[task]
    return PairFeatures(
        left=_finish(left, vocab, (right,)),
        right=_finish(right, vocab, (left,)),
        rank_bin=rank_bin(triple.google_rank),
    )


class MtlModel:
    """Joint three-task network: shared question encoder, comment encoder,
    rank-bin embedding, shared tanh layer, three task heads."""

    kind = "mtl"

    def __init__(
        self,
        vocab: Vocabulary,
        m: int = 100,
        d_w: int = 50,
        d_feat: int = 5,
        filter_width: int = 5,
        max_len: int = 100,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.vocab = vocab
        self.m = m
        self.d_w = d_w
        self.d_feat = d_feat
        self.filter_width = filter_width
        self.max_len = max_len
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.q_encoder = SentenceEncoder("q_encoder", len(vocab), d_w, d_feat, m, filter_width, rng, self.dtype)
        self.c_encoder = SentenceEncoder("c_encoder", len(vocab), d_w, d_feat, m, filter_width, rng, self.dtype)
        self.rank_emb = nn.Parameter("rank_emb", _uniform(rng, (RANK_BINS, d_feat), self.dtype))
        self.joint_dim = 3 * m + d_feat
        self.joint_w = nn.Parameter("joint.weight", _uniform(rng, (self.joint_dim, self.joint_dim), self.dtype))
        self.joint_b = nn.Parameter("joint.bias", np.zeros(self.joint_dim, dtype=self.dtype))
        self.heads = {t: TaskHead(f"head_{t}", self.joint_dim, rng, self.dtype) for t in TASKS}

    @property
    def tasks(self) -> tuple[str, ...]:
        return TASKS

    def parameters(self) -> list[nn.Parameter]:
        params = self.q_encoder.parameters() + self.c_encoder.parameters()
        params.append(self.rank_emb)
        params += [self.joint_w, self.joint_b]
        for t in TASKS:
            params += self.heads[t].parameters()
        return params

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def featurize(self, triple: Triple) -> TripleFeatures:
        return compute_triple_features(triple, self.vocab, self.max_len)

    def predict(
        self,
        features: TripleFeatures,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        dropout_input: float = 0.4,
        dropout_hidden: float = 0.7,
    ) -> dict[str, nn.Tensor]:
        return forward_mtl(self, features, training, rng, dropout_input, dropout_hidden)


def forward_mtl(
    model: MtlModel,
    features: TripleFeatures,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_input: float = 0.4,
    dropout_hidden: float = 0.7,
) -> dict[str, nn.Tensor]:
    """Score one triple on all three tasks; dropout applies only when
    ``training`` is set (rate ``dropout_input`` on the joint layer input,
    ``dropout_hidden`` after each tanh layer)."""
    x_q_new = encode_sentence(model.q_encoder, features.q_new)
    x_q_rel = encode_sentence(model.q_encoder, features.q_rel)
    x_c_rel = encode_sentence(model.c_encoder, features.c_rel)
    rank_vec = nn.row_lookup(model.rank_emb, features.rank_bin)
    h_j = nn.concat([x_q_new, x_q_rel, x_c_rel, rank_vec])
    h_j = nn.dropout(h_j, dropout_input, training, rng)
    h_s = nn.dense(h_j, model.joint_w, model.joint_b, "tanh")
    h_s = nn.dropout(h_s, dropout_hidden, training, rng)
    return {t: model.heads[t].forward(h_s, training, rng, dropout_hidden) for t in TASKS}


class PairModel:
    """Individual model for one task: two sentence encoders (a single shared
    one when both inputs are questions), the rank-bin embedding for the
    search-ranked tasks, two tanh layers sized like the join layer, and a
    sigmoid output."""

    kind = "pair"

    def __init__(
        self,
        vocab: Vocabulary,
        task: str,
        m: int = 100,
        d_w: int = 50,
        d_feat: int = 5,
        filter_width: int = 5,
        max_len: int = 100,
        seed: int = 0,
        dtype=np.float32,
    ):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        self.vocab = vocab
        self.task = task
        self.m = m
        self.d_w = d_w
        self.d_feat = d_feat
        self.filter_width = filter_width
        self.max_len = max_len
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.left_encoder = SentenceEncoder("q_encoder", len(vocab), d_w, d_feat, m, filter_width, rng, self.dtype)
        if task == "B":
            # both inputs are questions: one shared encoder object
            self.right_encoder = self.left_encoder
        else:
            self.right_encoder = SentenceEncoder("c_encoder", len(vocab), d_w, d_feat, m, filter_width, rng, self.dtype)
        self.uses_rank = task in ("B", "C")
        self.rank_emb = (
            nn.Parameter("rank_emb", _uniform(rng, (RANK_BINS, d_feat), self.dtype))
            if self.uses_rank
            else None
        )
        self.joint_dim = 2 * m + (d_feat if self.uses_rank else 0)
        self.hidden1_w = nn.Parameter("hidden1.weight", _uniform(rng, (self.joint_dim, self.joint_dim), self.dtype))
        self.hidden1_b = nn.Parameter("hidden1.bias", np.zeros(self.joint_dim, dtype=self.dtype))
        self.hidden2_w = nn.Parameter("hidden2.weight", _uniform(rng, (self.joint_dim, self.joint_dim), self.dtype))
        self.hidden2_b = nn.Parameter("hidden2.bias", np.zeros(self.joint_dim, dtype=self.dtype))
        self.out_w = nn.Parameter("out.weight", _uniform(rng, (1, self.joint_dim), self.dtype))
        self.out_b = nn.Parameter("out.bias", np.zeros(1, dtype=self.dtype))

    @property
    def tasks(self) -> tuple[str, ...]:
        return (self.task,)

    def parameters(self) -> list[nn.Parameter]:
        params = self.left_encoder.parameters()
        if self.right_encoder is not self.left_encoder:
            params += self.right_encoder.parameters()
        if self.rank_emb is not None:
            params.append(self.rank_emb)
        params += [
            self.hidden1_w,
            self.hidden1_b,
            self.hidden2_w,
            self.hidden2_b,
            self.out_w,
            self.out_b,
        ]
        return params

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def featurize(self, triple: Triple) -> PairFeatures:
        return compute_pair_features(triple, self.task, self.vocab, self.max_len)

    def predict(
        self,
        features: PairFeatures,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        dropout_input: float = 0.4,
        dropout_hidden: float = 0.7,
    ) -> dict[str, nn.Tensor]:
        score = forward_pair(self, features, training, rng, dropout_input, dropout_hidden)
        return {self.task: score}


def forward_pair(
    model: PairModel,
    features: PairFeatures,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_input: float = 0.4,
    dropout_hidden: float = 0.7,
) -> nn.Tensor:
    """Similarity score for one text pair; the rank embedding joins the
    concatenation only for the search-ranked tasks."""
    x_left = encode_sentence(model.left_encoder, features.left)
    x_right = encode_sentence(model.right_encoder, features.right)
    parts = [x_left, x_right]
    if model.uses_rank:
        parts.append(nn.row_lookup(model.rank_emb, features.rank_bin))
    h = nn.concat(parts)
    h = nn.dropout(h, dropout_input, training, rng)
    h = nn.dense(h, model.hidden1_w, model.hidden1_b, "tanh")
    h = nn.dropout(h, dropout_hidden, training, rng)
    h = nn.dense(h, model.hidden2_w, model.hidden2_b, "tanh")
    h = nn.dropout(h, dropout_hidden, training, rng)
    return nn.dense(h, model.out_w, model.out_b, "sigmoid")


def load_word_vectors(path: str, vocab: Vocabulary, d_w: int) -> dict[str, np.ndarray]:
    """Read a text vector file (one ``token v1 ... v_{d_w}`` line per word)
    keeping only in-vocabulary tokens."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != d_w:
                raise ValueError(
                    f"{path}: line {lineno} has {len(values)} components, expected {d_w}"
                )
            if token in vocab:
                vectors[token] = np.array([float(v) for v in values])
    return vectors


def apply_word_vectors(model, vectors: dict[str, np.ndarray]) -> int:
    """Overwrite word-embedding rows with pretrained vectors; tokens absent
    from ``vectors`` keep their random initialization.  Returns the number of
    rows replaced per table."""
    encoders = []
    if isinstance(model, MtlModel):
        encoders = [model.q_encoder, model.c_encoder]
    else:
        encoders = [model.left_encoder]
        if model.right_encoder is not model.left_encoder:
            encoders.append(model.right_encoder)
    replaced = 0
    for token, vec in vectors.items():
        if token not in model.vocab:
            continue
        idx = model.vocab.id_of(token)
        for enc in encoders:
            enc.word_emb.data[idx] = vec.astype(model.dtype)
        replaced += 1
    return replaced
