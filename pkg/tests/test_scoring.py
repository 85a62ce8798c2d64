"""Tests for the embedding model and the two triple scorers."""

import numpy as np
import pytest

from radkg import (
    EmbeddingModel,
    ModelGrads,
    RelationKind,
    conve_pipeline,
    embed_object,
    embed_subject,
    encode_finding,
    grad_all_objects,
    grad_all_objects_finding,
    grad_score,
    init_model,
    score_all_objects,
    score_all_objects_finding,
    score_conve,
    score_distmult,
)
from radkg.kernel import finite_diff_grad, max_relative_error

HAS = RelationKind.HAS_FINDING
CO = RelationKind.CO_OCCURS


def small_distmult(d=3, n=2, feature_dim=3, seed=0):
    return init_model("distmult", feature_dim, d, n, seed=seed)


# ---------------------------------------------------------------- distmult


def test_distmult_known_value():
    psi = score_distmult([1.0, 2.0, -1.0], [0.5, 1.0, 2.0], [2.0, 0.0, 1.0])
    assert psi == -1.0


def test_distmult_matches_triple_loop(rng):
    for _ in range(100):
        d = int(rng.integers(1, 64))
        e_s, r_r, e_o = rng.normal(size=(3, d))
        psi = score_distmult(e_s, r_r, e_o)
        slow = sum(float(e_s[k]) * float(r_r[k]) * float(e_o[k]) for k in range(d))
        assert abs(psi - slow) < 1e-12


def test_distmult_symmetric_bitwise(rng):
    for _ in range(100):
        e_s, r_r, e_o = rng.normal(size=(3, 16))
        assert score_distmult(e_s, r_r, e_o) == score_distmult(e_o, r_r, e_s)


def test_distmult_trilinear(rng):
    e_s, r_r, e_o, other = rng.normal(size=(4, 8))
    lhs = score_distmult(2.0 * e_s - 3.0 * other, r_r, e_o)
    rhs = 2.0 * score_distmult(e_s, r_r, e_o) - 3.0 * score_distmult(other, r_r, e_o)
    assert abs(lhs - rhs) < 1e-12


def test_distmult_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        score_distmult([1.0, 2.0], [1.0], [1.0, 2.0])


def test_distmult_identity_object_table_reads_off_product():
    model = EmbeddingModel(
        scorer="distmult",
        wx=np.eye(3),
        ef=np.eye(3),
        er=np.array([[0.5, 1.0, 2.0]]),
        relations=(HAS,),
    )
    c_x = np.array([1.0, 2.0, -1.0])
    psi = score_all_objects(model, c_x, HAS)
    assert np.array_equal(psi, c_x * model.er[0])


# ---------------------------------------------------------------- conv scorer


def test_conve_shape_contract():
    model = init_model("conve", feature_dim=32, embed_dim=100, n_findings=14,
                       channels=8, seed=1)
    assert model.reshape_side == 10
    e_s = embed_subject(model, np.random.default_rng(0).normal(size=32))
    pipe = conve_pipeline(model, e_s, model.er[0])
    assert pipe.stacked.shape == (20, 10)
    assert pipe.conv_out.shape == (8, 16, 6)
    assert pipe.flat.shape == (768,)
    assert pipe.z2.shape == (100,)
    assert pipe.a2.shape == (100,)
    psi = score_conve(model, e_s, model.er[0], model.ef[0])
    assert isinstance(psi, float)


def test_conve_subject_stacks_on_top():
    model = init_model("conve", 25, 25, 2, channels=1, seed=0)
    e_s = np.arange(25, dtype=np.float64)
    r_r = np.zeros(25)
    pipe = conve_pipeline(model, e_s, r_r)
    assert np.array_equal(pipe.stacked[:5], e_s.reshape(5, 5))
    assert np.array_equal(pipe.stacked[5:], np.zeros((5, 5)))


def test_conve_rejects_non_square_embed_dim():
    with pytest.raises(ValueError):
        init_model("conve", 8, 30, 3, channels=1)


def test_conve_rejects_reshape_smaller_than_kernel():
    # d = 16 gives a 4x4 grid, too small for a 5x5 kernel
    with pytest.raises(ValueError):
        init_model("conve", 8, 16, 3, channels=1)


def test_model_block_validation():
    base = init_model("distmult", 4, 9, 3, seed=0)
    with pytest.raises(ValueError):
        EmbeddingModel("distmult", base.wx, base.ef, base.er, (HAS,),
                       kernels=np.zeros((1, 5, 5)), wc=np.zeros((10, 9)))
    conv = init_model("conve", 4, 25, 3, channels=1, seed=0)
    with pytest.raises(ValueError):
        EmbeddingModel("conve", conv.wx, conv.ef, conv.er, (HAS,),
                       kernels=conv.kernels, wc=None)
    with pytest.raises(ValueError):
        EmbeddingModel("conve", conv.wx, conv.ef, conv.er, (HAS,),
                       kernels=conv.kernels, wc=np.zeros((7, 25)))
    bad = base.wx.copy()
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        EmbeddingModel("distmult", bad, base.ef, base.er, (HAS,))
    with pytest.raises(ValueError):
        EmbeddingModel("distmult", base.wx, base.ef, base.er, ())
    with pytest.raises(ValueError):
        EmbeddingModel("distmult", base.wx, base.ef,
                       np.zeros((2, 9)), (HAS, HAS))


# ---------------------------------------------------------------- batch scoring


@pytest.mark.parametrize("scorer,dim", [("distmult", 10), ("conve", 25)])
def test_score_all_objects_matches_single_triple(rng, scorer, dim):
    model = init_model(scorer, 6, dim, 5, channels=2, seed=3)
    c_x = rng.normal(size=6)
    psi = score_all_objects(model, c_x, HAS)
    e_s = embed_subject(model, c_x)
    for j in range(5):
        if scorer == "distmult":
            single = score_distmult(e_s, model.er[0], model.ef[j])
        else:
            single = score_conve(model, e_s, model.er[0], model.ef[j])
        assert psi[j] == single


def test_score_all_objects_finding_subject(rng):
    model = init_model("distmult", 6, 10, 4, relations=(HAS, CO), seed=2)
    psi = score_all_objects_finding(model, 1, CO)
    e_s = embed_object(model, 1)
    ridx = model.relation_index(CO)
    for j in range(4):
        assert psi[j] == score_distmult(e_s, model.er[ridx], model.ef[j])
    with pytest.raises(ValueError):
        score_all_objects_finding(model, 1, HAS)


def test_embed_object_equals_one_hot_product():
    model = init_model("distmult", 4, 8, 5, seed=7)
    for j in range(5):
        assert np.array_equal(embed_object(model, j),
                              encode_finding(j, 5) @ model.ef)
    with pytest.raises(IndexError):
        embed_object(model, 5)


def test_relation_index_unknown_relation():
    model = init_model("distmult", 4, 8, 5, seed=0)
    with pytest.raises(ValueError):
        model.relation_index(CO)


# ---------------------------------------------------------------- gradients


def test_grad_score_distmult_known_values():
    model = EmbeddingModel(
        scorer="distmult",
        wx=np.eye(3),
        ef=np.array([[2.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
        er=np.array([[0.5, 1.0, 2.0]]),
        relations=(HAS,),
    )
    c_x = np.array([1.0, 2.0, -1.0])
    grads = grad_score(model, c_x, HAS, j=0)
    assert np.array_equal(grads.ef[0], np.array([0.5, 2.0, -2.0]))   # e_s * r_r
    assert np.array_equal(grads.ef[1], np.zeros(3))
    assert np.array_equal(grads.er[0], np.array([2.0, 0.0, -1.0]))   # e_s * e_o
    assert np.array_equal(grads.c_x, np.array([1.0, 0.0, 2.0]))      # r_r * e_o
    assert np.array_equal(grads.wx, np.outer(c_x, np.array([1.0, 0.0, 2.0])))


def test_grad_zero_upstream_is_zero(rng):
    model = init_model("conve", 6, 25, 4, channels=2, seed=5)
    grads = grad_all_objects(model, rng.normal(size=6), HAS, np.zeros(4))
    for block in grads.blocks().values():
        assert not block.any()
    assert not grads.c_x.any()


@pytest.mark.parametrize("scorer,dim,channels", [("distmult", 9, 0), ("conve", 25, 1)])
def test_grad_score_matches_finite_differences(rng, scorer, dim, channels):
    model = init_model(scorer, 5, dim, 3, channels=max(channels, 1), seed=11)
    c_x = rng.normal(size=5) * 0.5
    upstream = rng.normal(size=3)
    grads = grad_all_objects(model, c_x, HAS, upstream)

    def psi_sum(block_name):
        block = model.blocks()[block_name]

        def fn(values):
            saved = block.copy()
            block[...] = values
            try:
                return float(np.dot(score_all_objects(model, c_x, HAS), upstream))
            finally:
                block[...] = saved

        return fn

    for name, grad in grads.blocks().items():
        numeric = finite_diff_grad(psi_sum(name), model.blocks()[name])
        assert max_relative_error(grad, numeric) < 1e-5, name


def test_grad_finding_subject_routes_into_ef_row(rng):
    model = init_model("distmult", 4, 8, 3, relations=(CO,), seed=4)
    upstream = rng.normal(size=3)
    grads = grad_all_objects_finding(model, 0, CO, upstream)

    def fn(values):
        saved = model.ef.copy()
        model.ef[...] = values
        try:
            return float(np.dot(score_all_objects_finding(model, 0, CO), upstream))
        finally:
            model.ef[...] = saved

    numeric = finite_diff_grad(fn, model.ef)
    assert max_relative_error(grads.ef, numeric) < 1e-5
    assert not grads.wx.any()
    assert grads.c_x is None


def test_grad_upstream_scales_linearly(rng):
    model = init_model("distmult", 4, 8, 3, seed=6)
    c_x = rng.normal(size=4)
    g1 = grad_score(model, c_x, HAS, j=1, upstream=1.0)
    g3 = grad_score(model, c_x, HAS, j=1, upstream=3.0)
    for name in g1.blocks():
        assert np.allclose(3.0 * g1.blocks()[name], g3.blocks()[name],
                           rtol=0, atol=1e-12)


def test_model_grads_add_and_scale():
    model = init_model("distmult", 3, 4, 2, seed=0)
    a = ModelGrads.zeros_like(model)
    b = ModelGrads.zeros_like(model)
    a.wx += 1.0
    b.wx += 2.0
    a.add(b)
    a.scale(0.5)
    assert np.array_equal(a.wx, np.full_like(model.wx, 1.5))


# ---------------------------------------------------------------- init


def test_init_model_deterministic():
    a = init_model("conve", 8, 25, 4, channels=2, seed=42)
    b = init_model("conve", 8, 25, 4, channels=2, seed=42)
    assert a == b
    c = init_model("conve", 8, 25, 4, channels=2, seed=43)
    assert a != c


def test_init_model_draw_order_is_blockwise():
    """Shared leading blocks draw identically regardless of trailing blocks."""
    plain = init_model("distmult", 8, 25, 4, seed=5)
    conv = init_model("conve", 8, 25, 4, channels=2, seed=5)
    assert np.array_equal(plain.wx, conv.wx)
    assert np.array_equal(plain.ef, conv.ef)
    assert np.array_equal(plain.er, conv.er)


def test_init_model_bounds():
    model = init_model("conve", 50, 100, 14, channels=8, seed=9)
    for (name, block), (fan_in, fan_out) in zip(
        model.blocks().items(),
        [(50, 100), (14, 100), (1, 100), (25, 200), (768, 100)],
    ):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        assert np.abs(block).max() <= bound, name


def test_model_copy_is_deep():
    model = init_model("distmult", 3, 4, 2, seed=1)
    clone = model.copy()
    clone.wx[0, 0] += 1.0
    assert model != clone
