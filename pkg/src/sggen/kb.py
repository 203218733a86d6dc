"""File-backed commonsense triple store and recurrent fact encoding.

Triples live in a UTF-8 TSV (head, relation, tail, weight; '#' comments
skipped). Retrieval is weight-ranked per head token. A retrieved triple is
linearized into lowercase words (camel-case and underscores split) and
encoded by a bidirectional GRU from zero initial state; the concatenated
final hidden states are the fact vector.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DataError

UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class FactTriple:
    head: str
    relation: str
    tail: str
    weight: float


@dataclass
class FactEncoding:
    vector: nc.Tensor  # (2 * Hf,)
    source: FactTriple


class TripleStore:
    """Triples indexed by head token; write-once at ingest."""

    def __init__(self, triples):
        self._by_head: dict[str, list[FactTriple]] = {}
        for t in triples:
            self._by_head.setdefault(t.head, []).append(t)
        self._size = sum(len(v) for v in self._by_head.values())

    def __len__(self):
        return self._size

    def all_triples(self):
        out = []
        for head in self._by_head:
            out.extend(self._by_head[head])
        return out

    def for_head(self, head: str):
        return list(self._by_head.get(head, []))


def ingest_triples(path) -> TripleStore:
    """Load a 4-column TSV into a store.

    Malformed rows (wrong column count, non-numeric or negative weight,
    empty fields) are collected and reported together with their line
    numbers. Duplicate (head, relation, tail) rows keep the maximum weight.
    """
    best: dict[tuple[str, str, str], float] = {}
    bad: list[str] = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                cols = line.split("\t")
                if len(cols) != 4:
                    bad.append(f"line {lineno}: expected 4 tab-separated columns, got {len(cols)}")
                    continue
                head, rel, tail, wtext = (c.strip() for c in cols)
                if not head or not rel or not tail:
                    bad.append(f"line {lineno}: empty head/relation/tail")
                    continue
                try:
                    weight = float(wtext)
                except ValueError:
                    bad.append(f"line {lineno}: non-numeric weight {wtext!r}")
                    continue
                if not np.isfinite(weight) or weight < 0:
                    bad.append(f"line {lineno}: weight must be a finite non-negative number, got {wtext}")
                    continue
                key = (head, rel, tail)
                if key not in best or weight > best[key]:
                    best[key] = weight
    except OSError as exc:
        raise DataError(f"cannot read triples file {path}: {exc}") from exc
    if bad:
        raise DataError(f"rejected rows in {path}: " + "; ".join(bad))
    return TripleStore(FactTriple(h, r, t, w) for (h, r, t), w in best.items())


def retrieve_topk(store: TripleStore, label_token: str, k: int):
    """Top-k triples for a head token, heaviest first.

    Weight ties break lexicographically by relation then tail. An unknown
    label returns an empty list; real label vocabularies exceed any KB.
    """
    if k < 1:
        raise DataError(f"retrieve_topk needs k >= 1, got {k}")
    matches = store.for_head(label_token)
    matches.sort(key=lambda t: (-t.weight, t.relation, t.tail))
    return matches[:k]


_CAMEL_RE = re.compile(r"[A-Z]+(?![a-z])|[A-Z]?[a-z]+|\d+")


def _words(token: str):
    out = []
    for chunk in re.split(r"[^0-9A-Za-z]+", token):
        if chunk:
            out.extend(m.group(0).lower() for m in _CAMEL_RE.finditer(chunk))
    return out


def linearize(fact: FactTriple):
    """Head words + relation words + tail words, lowered and camel-split."""
    return _words(fact.head) + _words(fact.relation) + _words(fact.tail)


# ---------------------------------------------------------------------------
# vocabulary and embeddings


class Vocabulary:
    """Token -> index map with a trainable embedding table (row 0 is UNK)."""

    def __init__(self, tokens, embed_dim: int, rng, vectors: dict | None = None):
        self.embed_dim = embed_dim
        self._index = {UNK_TOKEN: 0}
        for tok in tokens:
            if tok not in self._index:
                self._index[tok] = len(self._index)
        table = rng.normal(0.0, 0.3, size=(len(self._index), embed_dim))
        if vectors:
            for tok, vec in vectors.items():
                if tok in self._index:
                    table[self._index[tok]] = vec
        self.embedding = nc.Tensor(table, requires_grad=True)

    def __len__(self):
        return len(self._index)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def tokens(self):
        return list(self._index)


def load_word_vectors(path, embed_dim: int) -> dict:
    """Whitespace-separated text file: token followed by embed_dim reals."""
    vectors = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != embed_dim + 1:
                    raise DataError(
                        f"{path}:{lineno}: expected token + {embed_dim} values, got {len(parts) - 1}"
                    )
                try:
                    vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-numeric vector entry: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read word vectors {path}: {exc}") from exc
    return vectors


# ---------------------------------------------------------------------------
# GRU fact encoder


@dataclass
class GRUParams:
    """Standard GRU cell: update gate z, reset gate r, candidate state."""

    w_z: nc.Tensor
    u_z: nc.Tensor
    b_z: nc.Tensor
    w_r: nc.Tensor
    u_r: nc.Tensor
    b_r: nc.Tensor
    w_h: nc.Tensor
    u_h: nc.Tensor
    b_h: nc.Tensor

    @property
    def hidden(self) -> int:
        return self.b_z.shape[0]

    def tensors(self):
        return {
            "w_z": self.w_z, "u_z": self.u_z, "b_z": self.b_z,
            "w_r": self.w_r, "u_r": self.u_r, "b_r": self.b_r,
            "w_h": self.w_h, "u_h": self.u_h, "b_h": self.b_h,
        }


def init_gru(rng, in_dim: int, hidden: int) -> GRUParams:
    def mat(rows, cols):
        return nc.Tensor(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)), requires_grad=True)

    def vec(n):
        return nc.Tensor(np.zeros(n), requires_grad=True)

    return GRUParams(
        w_z=mat(hidden, in_dim), u_z=mat(hidden, hidden), b_z=vec(hidden),
        w_r=mat(hidden, in_dim), u_r=mat(hidden, hidden), b_r=vec(hidden),
        w_h=mat(hidden, in_dim), u_h=mat(hidden, hidden), b_h=vec(hidden),
    )


def gru_step(p: GRUParams, x: nc.Tensor, h: nc.Tensor) -> nc.Tensor:
    z = nc.sigmoid(nc.add(nc.add(nc.matvec(p.w_z, x), nc.matvec(p.u_z, h)), p.b_z))
    r = nc.sigmoid(nc.add(nc.add(nc.matvec(p.w_r, x), nc.matvec(p.u_r, h)), p.b_r))
    cand = nc.tanh(nc.add(nc.add(nc.matvec(p.w_h, x), nc.matvec(p.u_h, nc.mul(r, h))), p.b_h))
    one = nc.Tensor(1.0)
    return nc.add(nc.mul(z, cand), nc.mul(nc.sub(one, z), h))


@dataclass
class FactEncoderParams:
    forward: GRUParams
    backward: GRUParams

    @property
    def out_dim(self) -> int:
        return self.forward.hidden + self.backward.hidden

    def tensors(self):
        out = {}
        for prefix, cell in (("fwd", self.forward), ("bwd", self.backward)):
            for name, t in cell.tensors().items():
                out[f"{prefix}.{name}"] = t
        return out


def init_fact_encoder(rng, embed_dim: int, hidden: int) -> FactEncoderParams:
    return FactEncoderParams(forward=init_gru(rng, embed_dim, hidden), backward=init_gru(rng, embed_dim, hidden))


def encode_tokens(tokens, vocab: Vocabulary, enc: FactEncoderParams) -> nc.Tensor:
    """Bi-GRU over embedded tokens from zero state; concatenated final states."""
    if not tokens:
        raise DataError("cannot encode an empty token sequence")
    xs = [nc.row(vocab.embedding, vocab.index(tok)) for tok in tokens]
    h = nc.Tensor(np.zeros(enc.forward.hidden))
    for x in xs:
        h = gru_step(enc.forward, x, h)
    hb = nc.Tensor(np.zeros(enc.backward.hidden))
    for x in reversed(xs):
        hb = gru_step(enc.backward, x, hb)
    return nc.concat([h, hb], axis=0)


def encode_fact(fact: FactTriple, vocab: Vocabulary, enc: FactEncoderParams) -> FactEncoding:
    return FactEncoding(vector=encode_tokens(linearize(fact), vocab, enc), source=fact)
