import numpy as np
import pytest

from cscoref.corpus import Corpus, Document, Mention


@pytest.fixture
def tiny_corpus():
    """Two documents in one subtopic, three mentions, two gold clusters."""
    docs = [
        Document("d1", "t0", "t0_s0",
                 [["Alice", "saw", "the", "crash", "yesterday", "."],
                  ["The", "street", "was", "closed", "."]]),
        Document("d2", "t0", "t0_s0",
                 [["A", "wreck", "stopped", "traffic", "."]]),
    ]
    mentions = [
        Mention("m1", "d1", 0, 3, 3, "crash", gold_cluster_id="g1"),
        Mention("m2", "d2", 0, 1, 1, "wreck", gold_cluster_id="g1"),
        Mention("m3", "d1", 1, 3, 3, "closed", gold_cluster_id="g2"),
    ]
    return Corpus(docs, mentions)


@pytest.fixture
def two_topic_corpus():
    """Two topics, each with one easy pair plus a singleton."""
    docs = [
        Document("a1", "t0", "t0_s0", [["the", "flood", "hit", "."]]),
        Document("a2", "t0", "t0_s0", [["a", "flood", "came", "."]]),
        Document("b1", "t1", "t1_s0", [["the", "fire", "spread", "."]]),
        Document("b2", "t1", "t1_s0", [["a", "fire", "burned", "."]]),
    ]
    mentions = [
        Mention("p1", "a1", 0, 1, 1, "flood", gold_cluster_id="k0"),
        Mention("p2", "a2", 0, 1, 1, "flood", gold_cluster_id="k0"),
        Mention("p3", "b1", 0, 1, 1, "fire", gold_cluster_id="k1"),
        Mention("p4", "b2", 0, 1, 1, "fire", gold_cluster_id="k1"),
    ]
    return Corpus(docs, mentions)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
