import math
import random

import numpy as np
import pytest

from speciesrag.embeddings import EmbeddingStore, EncoderProfile, normalize
from speciesrag.errors import ConfigError, DataIntegrityError, MissingEmbeddingError
from speciesrag.knowledge import Chunk
from speciesrag.retrieval import (
    QueryInput,
    RetrievalConfig,
    ensemble_scores,
    retrieve,
    score_chunk,
    top_m,
)


def axis_vector(dim, i):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def vector_with_cos(target, dim=4):
    """Unit vector whose cosine against axis 0 is exactly ~target."""
    v = np.zeros(dim)
    v[0] = target
    v[1] = math.sqrt(1.0 - target * target)
    return v


def chunk(cid, sid):
    return Chunk(chunk_id=cid, species_id=sid, ordinal=0, text="t", word_count=1)


@pytest.fixture
def two_encoder_store():
    store = EmbeddingStore([EncoderProfile("enc-a", 4), EncoderProfile("enc-b", 4)])
    store.segment("enc-a").add("q1", axis_vector(4, 0))
    store.segment("enc-b").add("q1", axis_vector(4, 0))
    store.segment("enc-a").add("c1#0", vector_with_cos(0.2))
    store.segment("enc-b").add("c1#0", vector_with_cos(0.4))
    return store


class TestScoreChunk:
    def test_identical_vectors(self):
        store = EmbeddingStore([EncoderProfile("enc-a", 4)])
        v = normalize(np.array([1.0, 2.0, 3.0, 4.0]))
        store.segment("enc-a").add("c#0", v)
        q = QueryInput("q", {"enc-a": v})
        assert score_chunk(q, "c#0", "enc-a", store) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        store = EmbeddingStore([EncoderProfile("enc-a", 4)])
        store.segment("enc-a").add("c#0", axis_vector(4, 1))
        q = QueryInput("q", {"enc-a": axis_vector(4, 0)})
        assert score_chunk(q, "c#0", "enc-a", store) == pytest.approx(0.0, abs=1e-6)

    def test_seed42_matches_independent_recomputation(self, pinned_instance):
        cfg = pinned_instance.config
        store = pinned_instance.store
        qid = pinned_instance.queries[0].query_id
        q = QueryInput.from_store(store, qid, ["enc-a"])
        got = score_chunk(q, "sp007#0", "enc-a", store)
        # Straight re-computation of the dot product, no shared code path.
        qv = store.segments["enc-a"].vectors[qid].tolist()
        cv = store.segments["enc-a"].vectors["sp007#0"].tolist()
        expected = math.fsum(a * b for a, b in zip(qv, cv))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_missing_embedding_names_pair(self):
        store = EmbeddingStore([EncoderProfile("enc-a", 4)])
        q = QueryInput("q", {"enc-a": axis_vector(4, 0)})
        with pytest.raises(MissingEmbeddingError) as exc:
            score_chunk(q, "ghost#0", "enc-a", store)
        assert exc.value.item_id == "ghost#0"


class TestEnsemble:
    def test_mean_of_two(self, two_encoder_store):
        q = QueryInput("q1", {e: axis_vector(4, 0) for e in ("enc-a", "enc-b")})
        cfg = RetrievalConfig(encoder_ids=("enc-a", "enc-b"))
        scores = ensemble_scores(q, [chunk("c1#0", "c1")], two_encoder_store, cfg)
        assert scores["c1#0"] == pytest.approx(0.3, abs=1e-6)

    def test_single_encoder_is_identity(self, two_encoder_store):
        q = QueryInput("q1", {"enc-a": axis_vector(4, 0)})
        cfg = RetrievalConfig(encoder_ids=("enc-a",))
        scores = ensemble_scores(q, [chunk("c1#0", "c1")], two_encoder_store, cfg)
        single = score_chunk(q, "c1#0", "enc-a", two_encoder_store)
        assert scores["c1#0"] == single

    def test_bounded_scope_excludes_species(self, small_instance):
        cfg = small_instance.config
        encs = tuple(e for e, _ in cfg.cross_encoders)
        qid = small_instance.queries[0].query_id
        q = QueryInput.from_store(small_instance.store, qid, encs)
        scope = frozenset(small_instance.kb.species_ids()[:5])
        rcfg = RetrievalConfig(encoder_ids=encs, m=10, scope=scope)
        scores = ensemble_scores(q, small_instance.corpus, small_instance.store, rcfg)
        scored_species = {cid.rsplit("#", 1)[0] for cid in scores}
        assert scored_species == scope

    def test_missing_encoder_embedding_is_hard_error(self, two_encoder_store):
        q = QueryInput("q1", {"enc-a": axis_vector(4, 0), "enc-b": axis_vector(4, 0)})
        cfg = RetrievalConfig(encoder_ids=("enc-a", "enc-b"))
        corpus = [chunk("c1#0", "c1"), chunk("orphan#0", "orphan")]
        with pytest.raises(MissingEmbeddingError):
            ensemble_scores(q, corpus, two_encoder_store, cfg)

    def test_permutation_invariance_bitwise(self, small_instance):
        cfg = small_instance.config
        encs = [e for e, _ in cfg.cross_encoders]
        qid = small_instance.queries[3].query_id
        q = QueryInput.from_store(small_instance.store, qid, encs)
        orders = [tuple(encs), tuple(reversed(encs)), (encs[1], encs[2], encs[0])]
        results = []
        for order in orders:
            rcfg = RetrievalConfig(encoder_ids=order, m=30)
            scores = ensemble_scores(q, small_instance.corpus, small_instance.store, rcfg)
            results.append(scores)
            ranked = top_m(scores, 30, {c.chunk_id: c.species_id for c in small_instance.corpus})
            results.append(tuple(c.chunk_id for c in ranked))
        assert results[0] == results[2] == results[4]
        assert results[1] == results[3] == results[5]

    def test_ensemble_bounded_by_member_scores(self, small_instance):
        cfg = small_instance.config
        encs = tuple(e for e, _ in cfg.cross_encoders)
        store = small_instance.store
        rcfg = RetrievalConfig(encoder_ids=encs, m=30)
        for row in small_instance.queries[:4]:
            q = QueryInput.from_store(store, row.query_id, encs)
            fused = ensemble_scores(q, small_instance.corpus, store, rcfg)
            for c in small_instance.corpus:
                per_enc = [score_chunk(q, c.chunk_id, e, store) for e in encs]
                assert min(per_enc) - 1e-12 <= fused[c.chunk_id] <= max(per_enc) + 1e-12


class TestTopM:
    SPECIES = {"a": "a", "b": "b", "c": "c"}

    def test_ordering(self):
        out = top_m({"a": 0.9, "b": 0.5, "c": 0.7}, 2, self.SPECIES)
        assert [c.chunk_id for c in out] == ["a", "c"]

    def test_tie_broken_lexicographically(self):
        out = top_m({"b": 0.5, "a": 0.5}, 1, self.SPECIES)
        assert [c.chunk_id for c in out] == ["a"]

    def test_empty_scores_error(self):
        with pytest.raises(DataIntegrityError):
            top_m({}, 3, {})

    def test_m_longer_than_corpus(self):
        out = top_m({"a": 0.1}, 10, self.SPECIES)
        assert len(out) == 1

    def test_invariants_after_retrieval(self):
        out = top_m({"a": 0.25}, 1, self.SPECIES)
        assert out[0].score == out[0].cross_score
        assert out[0].intra_score == 0.0

    def test_prefix_monotonicity(self, small_instance):
        cfg = small_instance.config
        encs = tuple(e for e, _ in cfg.cross_encoders)
        q = QueryInput.from_store(small_instance.store, small_instance.queries[0].query_id, encs)
        rcfg = RetrievalConfig(encoder_ids=encs, m=30)
        scores = ensemble_scores(q, small_instance.corpus, small_instance.store, rcfg)
        species = {c.chunk_id: c.species_id for c in small_instance.corpus}
        full = top_m(scores, 30, species)
        for m in (1, 5, 12, 29):
            assert top_m(scores, m, species) == full[:m]

    def test_matches_exhaustive_sort_oracle(self, small_instance):
        # Independent oracle: full sort of independently recomputed scores.
        cfg = small_instance.config
        encs = sorted(e for e, _ in cfg.cross_encoders)
        store = small_instance.store
        species = {c.chunk_id: c.species_id for c in small_instance.corpus}
        rcfg = RetrievalConfig(encoder_ids=tuple(encs), m=30)
        for row in small_instance.queries:
            q = QueryInput.from_store(store, row.query_id, encs)
            engine = retrieve(q, small_instance.corpus, store, rcfg)
            expected = {}
            for c in small_instance.corpus:
                qvs = {e: store.segments[e].vectors[row.query_id].tolist() for e in encs}
                cvs = {e: store.segments[e].vectors[c.chunk_id].tolist() for e in encs}
                per = [math.fsum(a * b for a, b in zip(qvs[e], cvs[e])) for e in encs]
                expected[c.chunk_id] = math.fsum(per) / len(per)
            ranked = sorted(expected.items(), key=lambda kv: (-kv[1], kv[0]))[:30]
            assert [c.chunk_id for c in engine] == [cid for cid, _ in ranked]
            for got, (cid, val) in zip(engine, ranked):
                assert got.cross_score == pytest.approx(val, abs=1e-9)

    def test_determinism_across_runs(self, small_instance):
        cfg = small_instance.config
        encs = tuple(e for e, _ in cfg.cross_encoders)
        q = QueryInput.from_store(small_instance.store, small_instance.queries[5].query_id, encs)
        rcfg = RetrievalConfig(encoder_ids=encs, m=15)
        first = retrieve(q, small_instance.corpus, small_instance.store, rcfg)
        for _ in range(3):
            assert retrieve(q, small_instance.corpus, small_instance.store, rcfg) == first


def test_config_validation():
    with pytest.raises(ConfigError):
        RetrievalConfig(encoder_ids=())
    with pytest.raises(ConfigError):
        RetrievalConfig(encoder_ids=("a", "a"))
    with pytest.raises(ConfigError):
        RetrievalConfig(encoder_ids=("a",), m=0)
    with pytest.raises(ConfigError):
        RetrievalConfig(encoder_ids=("a",), scope=frozenset())
