"""Tests of chunk scoring, top-k selection, per-chunk attention and fusion"""

import numpy as np
import numpy.testing as npt
import pytest

from hsa_lab.attention.chunk_store import ChunkStore
from hsa_lab.attention.hsa import (
    RetrievalSelection,
    eligible_chunks,
    fusion_weights,
    hsa_attend,
    hsa_reference,
    score_chunks,
    score_sentinel,
    select_chunks,
    select_topk,
)
from hsa_lab.numerics.gradcheck import check_gradients
from hsa_lab.numerics.tensor import Tensor

# pylint: disable=missing-function-docstring

CHUNK_SIZE = 4


def make_store(rng, num_chunks=5, n_kv_heads=2, head_dim=6, retrieval_dim=8, requires_grad=False):
    def make(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)

    return ChunkStore(
        chunk_size=CHUNK_SIZE,
        keys=make(num_chunks, CHUNK_SIZE, n_kv_heads, head_dim),
        values=make(num_chunks, CHUNK_SIZE, n_kv_heads, head_dim),
        landmarks=make(num_chunks, retrieval_dim),
    )


def test_eligible_chunks():
    eligible = eligible_chunks(np.arange(12), CHUNK_SIZE, 3)
    ## tokens of the first chunk see nothing
    assert not eligible[:4].any()
    ## a token sees exactly the chunks that completed before its own chunk began
    npt.assert_array_equal(eligible[4], [True, False, False])
    npt.assert_array_equal(eligible[7], [True, False, False])
    npt.assert_array_equal(eligible[8], [True, True, False])
    npt.assert_array_equal(eligible[11], [True, True, False])


def test_select_topk():
    scores = np.array([[2.0, 1.0, 0.5, 0.7], [1.0, 1.0, 3.0, 1.0]])
    npt.assert_array_equal(select_topk(scores, 2), [[0, 1], [2, 0]])
    ## ties go to the lower chunk index
    npt.assert_array_equal(select_topk(scores, 3)[1], [2, 0, 1])
    ## width never exceeds the number of chunks
    assert select_topk(scores, 10).shape == (2, 4)

    sentinel = score_sentinel(np.float64)
    scores = np.array([[0.3, sentinel, sentinel]])
    npt.assert_array_equal(select_topk(scores, 2), [[0, -1]])

    with pytest.raises(ValueError, match="top_k"):
        select_topk(scores, 0)


def test_score_chunks_masks_ineligible(rng):
    store = make_store(rng)
    q_slc = Tensor(rng.standard_normal((20, 8)), dtype=np.float64)
    scores = score_chunks(q_slc, store.landmarks, np.arange(20), CHUNK_SIZE)
    expected = q_slc.data @ store.landmarks.data.T / np.sqrt(8)
    eligible = eligible_chunks(np.arange(20), CHUNK_SIZE, 5)
    npt.assert_allclose(scores.data[eligible], expected[eligible])
    assert (scores.data[~eligible] == score_sentinel(np.float64)).all()


def test_select_chunks_is_causal(rng):
    store = make_store(rng)
    positions = np.arange(20)
    q_slc = Tensor(rng.standard_normal((20, 8)), dtype=np.float64)
    selection = select_chunks(q_slc, store.landmarks, positions, CHUNK_SIZE, top_k=3)

    assert selection.width == 3
    own_chunk = positions // CHUNK_SIZE
    for t in positions:
        chosen = selection.indices[t][selection.valid[t]]
        assert len(chosen) == min(3, own_chunk[t])
        assert (chosen < own_chunk[t]).all()
        assert len(set(chosen)) == len(chosen)

    weights = selection.weights.data
    npt.assert_allclose(weights[selection.counts > 0].sum(axis=-1), 1.0)
    assert (weights[~selection.valid] == 0).all()
    assert (weights[selection.valid] > 0).all()


def test_selection_statistics():
    selection = RetrievalSelection(
        indices=np.array([[0, 1], [-1, -1], [2, -1]]),
        raw_scores=Tensor(np.zeros((3, 2)), dtype=np.float64),
        weights=Tensor(np.array([[0.5, 0.5], [0.0, 0.0], [1.0, 0.0]]), dtype=np.float64),
    )
    npt.assert_array_equal(selection.counts, [2, 0, 1])
    npt.assert_allclose(selection.entropy(), [np.log(2), 0.0, 0.0])
    distance = selection.chunk_distance(np.array([9, 1, 13]), CHUNK_SIZE)
    npt.assert_allclose(distance[[0, 2]], [1.5, 1.0])
    assert np.isnan(distance[1])


@pytest.mark.parametrize("block_size", [1, 5, 128])
@pytest.mark.parametrize("n_heads", [2, 4])
def test_hsa_matches_reference(rng, block_size, n_heads):
    """Batched attention agrees with the token-by-token, chunk-by-chunk loop."""
    store = make_store(rng, n_kv_heads=2)
    n_tokens = 22
    q_slc = Tensor(rng.standard_normal((n_tokens, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((n_tokens, n_heads, 6)), dtype=np.float64)
    q_gain = rng.uniform(0.5, 1.5, size=6)
    k_gain = rng.uniform(0.5, 1.5, size=6)
    selection = select_chunks(q_slc, store.landmarks, np.arange(n_tokens), CHUNK_SIZE, top_k=2)

    out = hsa_attend(q_attn, store, selection, q_gain, k_gain, block_size=block_size)
    reference = hsa_reference(q_attn, store, selection, q_gain, k_gain)
    npt.assert_allclose(out.data, reference, atol=1e-12)
    ## tokens of the first chunk have nothing to retrieve
    assert not out.data[:CHUNK_SIZE].any()


def test_hsa_ignores_future_chunks(rng):
    """Rewriting chunks a token cannot see leaves its output unchanged."""
    store = make_store(rng)
    positions = np.arange(9)
    q_slc = Tensor(rng.standard_normal((9, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((9, 2, 6)), dtype=np.float64)

    def attend(memory):
        selection = select_chunks(q_slc, memory.landmarks, positions, CHUNK_SIZE, top_k=4)
        return hsa_attend(q_attn, memory, selection).data

    before = attend(store)
    altered = ChunkStore(
        chunk_size=CHUNK_SIZE,
        keys=Tensor(np.concatenate([store.keys.data[:2], 10 * store.keys.data[2:]]), dtype=np.float64),
        values=Tensor(np.concatenate([store.values.data[:2], -store.values.data[2:]]), dtype=np.float64),
        landmarks=Tensor(
            np.concatenate([store.landmarks.data[:2], 5 + store.landmarks.data[2:]]), dtype=np.float64
        ),
    )
    npt.assert_allclose(attend(altered), before, atol=1e-12)


def test_hsa_gradients(rng):
    """Gradients reach queries, keys, values and landmarks through the fusion weights."""
    store = make_store(rng, num_chunks=3, requires_grad=True)
    q_slc = Tensor(rng.standard_normal((14, 8)), requires_grad=True, dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((14, 2, 6)), requires_grad=True, dtype=np.float64)
    positions = np.arange(14)

    def output():
        selection = select_chunks(q_slc, store.landmarks, positions, CHUNK_SIZE, top_k=2)
        return hsa_attend(q_attn, store, selection, block_size=4)

    inputs = {
        "q_slc": q_slc,
        "q_attn": q_attn,
        "keys": store.keys,
        "values": store.values,
        "landmarks": store.landmarks,
    }
    result = check_gradients(output, inputs)
    assert result.passed(1e-6, mode="group"), result.group_errors
    ## the landmarks only matter through the fusion weights, and they do matter
    assert np.abs(store.landmarks.grad).max() > 0


def test_hsa_errors(rng):
    store = make_store(rng, num_chunks=2)
    q_slc = Tensor(rng.standard_normal((12, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((12, 2, 6)), dtype=np.float64)
    selection = select_chunks(q_slc, store.landmarks, np.arange(12), CHUNK_SIZE, top_k=2)

    with pytest.raises(ValueError, match="covers"):
        hsa_attend(q_attn[:5], store, selection)

    smaller = ChunkStore(
        chunk_size=CHUNK_SIZE,
        keys=store.keys[:1],
        values=store.values[:1],
        landmarks=store.landmarks[:1],
    )
    with pytest.raises(ValueError, match="missing from the store"):
        hsa_attend(q_attn, smaller, selection)


def test_chunk_store(rng):
    store = make_store(rng, num_chunks=2)
    assert len(store) == 2
    assert (store.n_kv_heads, store.head_dim, store.retrieval_dim) == (2, 6, 8)

    empty = ChunkStore.empty(CHUNK_SIZE, 2, 6, 8, dtype=np.float64)
    assert empty.num_chunks == 0
    assert empty.extend(store) is store
    assert store.extend(empty) is store

    longer = store.extend(make_store(rng, num_chunks=3))
    assert longer.num_chunks == 5
    npt.assert_array_equal(longer.keys.data[:2], store.keys.data)
    assert longer.content_hash() != store.content_hash()
    assert store.content_hash() == store.detach().content_hash()

    with pytest.raises(ValueError, match="chunk counts differ"):
        ChunkStore(chunk_size=CHUNK_SIZE, keys=store.keys, values=store.values, landmarks=longer.landmarks)
    with pytest.raises(ValueError, match="tokens per chunk"):
        ChunkStore(chunk_size=2, keys=store.keys, values=store.values, landmarks=store.landmarks)
    with pytest.raises(ValueError, match="chunk size"):
        store.extend(ChunkStore.empty(2, 2, 6, 8))


def test_score_chunks_unit_vectors():
    unit = np.zeros(16)
    unit[3] = 1.0
    landmarks = Tensor(np.stack([unit, -unit]), dtype=np.float64)
    query = Tensor(unit[None, :], dtype=np.float64)

    scores = score_chunks(query, landmarks, [130], 64)
    npt.assert_allclose(scores.data, [[0.25, -0.25]])
    ## floor(10 / 64) = 0: nothing is eligible yet
    scores = score_chunks(query, landmarks, [10], 64)
    assert (scores.data == score_sentinel(np.float64)).all()


def test_fusion_weights():
    scores = np.array([[np.log(2), 0.0], [1.3, 1.3], [0.2, 5.0], [0.0, 0.0]])
    valid = np.array([[True, True], [True, True], [True, False], [False, False]])
    weights = fusion_weights(Tensor(scores, dtype=np.float64), valid)
    npt.assert_allclose(weights.data, [[2 / 3, 1 / 3], [0.5, 0.5], [1.0, 0.0], [0.0, 0.0]])


def test_select_topk_matches_sort_order(rng):
    """Random eligibility patterns with many ties, against a full sort by (score desc, index asc)."""
    for _ in range(1000):
        num_chunks = int(rng.integers(1, 13))
        chunk_size = int(rng.integers(1, 9))
        top_k = int(rng.integers(1, 11))
        positions = rng.integers(0, chunk_size * (num_chunks + 2), size=6)
        eligible = eligible_chunks(positions, chunk_size, num_chunks)
        scores = rng.integers(-3, 4, size=(6, num_chunks)).astype(np.float64)
        scores = np.where(eligible, scores, score_sentinel(np.float64))

        indices = select_topk(scores, top_k)
        assert indices.shape == (6, min(top_k, num_chunks))
        for row, position in enumerate(positions):
            visible = np.flatnonzero(eligible[row])
            ranked = visible[np.lexsort((visible, -scores[row, visible]))][:top_k].tolist()
            expected = ranked + [-1] * (indices.shape[1] - len(ranked))
            assert indices[row].tolist() == expected

            chosen = indices[row][indices[row] >= 0]
            assert (chosen < position // chunk_size).all()
            assert len(set(chosen.tolist())) == len(chosen)


def test_fusion_weights_are_normalized(rng):
    for case in range(1000):
        dtype = np.float32 if case % 2 else np.float64
        num_chunks = int(rng.integers(1, 17))
        top_k = int(rng.integers(1, 9))
        dim = int(rng.integers(1, 33))
        positions = rng.integers(0, CHUNK_SIZE * (num_chunks + 1), size=4)
        q_slc = Tensor(3 * rng.standard_normal((4, dim)), dtype=dtype)
        landmarks = Tensor(3 * rng.standard_normal((num_chunks, dim)), dtype=dtype)

        selection = select_chunks(q_slc, landmarks, positions, CHUNK_SIZE, top_k)
        visible = np.minimum(positions // CHUNK_SIZE, num_chunks)
        npt.assert_array_equal(selection.counts, np.minimum(visible, top_k))

        weights = selection.weights.data.astype(np.float64)
        nonempty = selection.counts > 0
        npt.assert_allclose(weights[nonempty].sum(axis=-1), 1.0, atol=1e-6)
        assert (weights >= 0).all()
        assert not weights[~selection.valid].any()

        ## softmax recomputed over the valid slots only
        raw = np.where(selection.valid, selection.raw_scores.data.astype(np.float64), -np.inf)
        peak = np.where(nonempty, raw.max(axis=-1), 0.0)[:, None]
        exps = np.where(selection.valid, np.exp(raw - peak), 0.0)
        expected = exps / np.maximum(exps.sum(axis=-1, keepdims=True), 1e-300)
        npt.assert_allclose(weights, expected, atol=1e-6)


def test_hsa_saturated_top_k(rng):
    """Once every eligible chunk is selected, a larger K changes nothing."""
    store = make_store(rng, num_chunks=6)
    n_tokens = 14
    positions = np.arange(n_tokens)
    q_slc = Tensor(rng.standard_normal((n_tokens, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((n_tokens, 2, 6)), dtype=np.float64)

    ## at most floor(13 / 4) = 3 chunks are eligible
    exact = select_chunks(q_slc, store.landmarks, positions, CHUNK_SIZE, top_k=3)
    larger = select_chunks(q_slc, store.landmarks, positions, CHUNK_SIZE, top_k=4)
    assert larger.width == 4
    npt.assert_array_equal(larger.indices[:, :3], exact.indices)
    npt.assert_array_equal(larger.counts, exact.counts)

    npt.assert_allclose(
        hsa_attend(q_attn, store, larger).data, hsa_attend(q_attn, store, exact).data, atol=1e-14
    )
    npt.assert_array_equal(hsa_reference(q_attn, store, larger), hsa_reference(q_attn, store, exact))


def test_hsa_fusion_order(rng):
    """Shuffling the selected slots of each token leaves its fused output unchanged."""
    store = make_store(rng)
    n_tokens = 20
    q_slc = Tensor(rng.standard_normal((n_tokens, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((n_tokens, 2, 6)), dtype=np.float64)
    selection = select_chunks(q_slc, store.landmarks, np.arange(n_tokens), CHUNK_SIZE, top_k=3)

    order = np.stack([rng.permutation(selection.width) for _ in range(n_tokens)])
    shuffled = RetrievalSelection(
        indices=np.take_along_axis(selection.indices, order, axis=-1),
        raw_scores=Tensor(np.take_along_axis(selection.raw_scores.data, order, axis=-1), dtype=np.float64),
        weights=Tensor(np.take_along_axis(selection.weights.data, order, axis=-1), dtype=np.float64),
    )
    npt.assert_allclose(
        hsa_attend(q_attn, store, shuffled).data, hsa_attend(q_attn, store, selection).data, atol=1e-12
    )


def test_hsa_chunk_relabeling(rng):
    """The output depends on chunk contents, not on where a chunk sits in the store."""
    store = make_store(rng)
    n_tokens = 20
    q_slc = Tensor(rng.standard_normal((n_tokens, 8)), dtype=np.float64)
    q_attn = Tensor(rng.standard_normal((n_tokens, 2, 6)), dtype=np.float64)
    selection = select_chunks(q_slc, store.landmarks, np.arange(n_tokens), CHUNK_SIZE, top_k=2)

    ## three unrelated chunks in front, the original ones shuffled behind them
    padding = make_store(rng, num_chunks=3)
    new_ids = 3 + rng.permutation(store.num_chunks)

    def relabel(extra, original):
        combined = np.concatenate([extra.data, original.data])
        combined[new_ids] = original.data
        return Tensor(combined, dtype=np.float64)

    moved = ChunkStore(
        chunk_size=CHUNK_SIZE,
        keys=relabel(padding.keys, store.keys),
        values=relabel(padding.values, store.values),
        landmarks=relabel(padding.landmarks, store.landmarks),
    )
    relabeled = RetrievalSelection(
        indices=np.where(selection.valid, new_ids[np.maximum(selection.indices, 0)], -1),
        raw_scores=selection.raw_scores,
        weights=selection.weights,
    )
    npt.assert_allclose(
        hsa_attend(q_attn, moved, relabeled).data, hsa_attend(q_attn, store, selection).data, atol=1e-12
    )


@pytest.mark.slow
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("seed", range(100))
def test_hsa_matches_reference_randomized(seed, dtype):
    """Batched attention against the reference loop over random shapes, up to 512 tokens."""
    rng = np.random.default_rng(seed)
    chunk_size = int(rng.choice([16, 32]))
    n_tokens = int(rng.integers(chunk_size + 1, 513))
    top_k = int(rng.integers(1, 9))
    n_kv_heads = int(rng.choice([1, 2]))
    n_heads = n_kv_heads * int(rng.choice([1, 2]))
    head_dim = int(rng.choice([8, 16, 32]))
    retrieval_dim = int(rng.choice([8, 16]))
    num_chunks = n_tokens // chunk_size

    def make(*shape):
        return Tensor(rng.standard_normal(shape), dtype=dtype)

    store = ChunkStore(
        chunk_size=chunk_size,
        keys=make(num_chunks, chunk_size, n_kv_heads, head_dim),
        values=make(num_chunks, chunk_size, n_kv_heads, head_dim),
        landmarks=make(num_chunks, retrieval_dim),
    )
    q_attn = make(n_tokens, n_heads, head_dim)
    q_gain = rng.uniform(0.5, 1.5, size=head_dim).astype(dtype)
    k_gain = rng.uniform(0.5, 1.5, size=head_dim).astype(dtype)
    q_slc = make(n_tokens, retrieval_dim)
    selection = select_chunks(q_slc, store.landmarks, np.arange(n_tokens), chunk_size, top_k)

    out = hsa_attend(q_attn, store, selection, q_gain, k_gain).data.astype(np.float64)
    reference = hsa_reference(q_attn, store, selection, q_gain, k_gain).astype(np.float64)
    tolerance = 1e-5 if dtype == np.float32 else 1e-10
    assert np.abs(out - reference).max() <= tolerance * np.abs(reference).max()
