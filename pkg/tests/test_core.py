import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epa_noma.codebook import build_qam, build_spread_codebook
from epa_noma.core import (
    PREC_FLOOR,
    VAR_CAP,
    FactorGraph,
    GaussianMessage,
    RngStream,
    SymbolPosterior,
    build_factor_graph,
    gaussian_divide,
    gaussian_product,
)


def test_single_node_graph():
    g = build_factor_graph([build_spread_codebook(build_qam(2), [1.0])])
    assert g.user_res == ((0,),)
    assert g.res_users == ((0,),)


def test_dense_graph_six_users():
    qpsk = build_qam(4)
    cbs = [build_spread_codebook(qpsk, np.full(4, 0.5), user=k) for k in range(6)]
    g = build_factor_graph(cbs)
    assert all(u == tuple(range(6)) for u in g.res_users)
    assert g.df_max == 6
    assert not g.is_tree()


def test_disjoint_support_is_tree():
    qpsk = build_qam(4)
    cbs = [build_spread_codebook(qpsk, [1, 0]), build_spread_codebook(qpsk, [0, 1], user=1)]
    g = build_factor_graph(cbs)
    assert g.res_users == ((0,), (1,))
    assert g.is_tree()


def test_graph_rejects_inconsistent_lists():
    with pytest.raises(ValueError):
        FactorGraph(2, 1, ((0,), (0,)), ((0,),))
    with pytest.raises(ValueError):
        FactorGraph(1, 2, ((),), ((), ()))


def test_graph_rejects_empty_codebook():
    qpsk = build_qam(4)
    good = build_spread_codebook(qpsk, [1, 0])
    # bypass the energy check to build an all-zero codebook
    bad = object.__new__(type(good))
    object.__setattr__(bad, "user", 1)
    object.__setattr__(bad, "codewords", np.zeros((4, 2), dtype=complex))
    object.__setattr__(bad, "labels", good.labels)
    with pytest.raises(ValueError, match="user 1"):
        build_factor_graph([good, bad])


def test_subgraph_renumbers_users():
    adj = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=bool)
    g = FactorGraph.from_adjacency(adj)
    sub = g.subgraph([0, 2])
    assert sub.num_users == 2
    np.testing.assert_array_equal(sub.adjacency, adj[[0, 2]])
    # bipartite lists stay transposes of each other
    for k, res in enumerate(sub.user_res):
        for l in res:
            assert k in sub.res_users[l]


def test_product_identity_and_hand_example():
    out = gaussian_product(GaussianMessage.from_moments(0.0, np.inf), GaussianMessage.from_moments(0.3, 0.5))
    assert out.mean == pytest.approx(0.3)
    assert out.variance == pytest.approx(0.5)
    out = gaussian_product(GaussianMessage.from_moments(1.0, 1.0), GaussianMessage.from_moments(0.0, 1.0))
    assert out.mean == pytest.approx(0.5)
    assert out.variance == pytest.approx(0.5)


finite_msg = st.tuples(
    st.floats(-10, 10), st.floats(-10, 10), st.floats(1e-2, 1e2)
).map(lambda t: GaussianMessage.from_moments(complex(t[0], t[1]), t[2]))


@settings(max_examples=200, deadline=None)
@given(finite_msg, finite_msg)
def test_product_commutes(a, b):
    ab, ba = gaussian_product(a, b), gaussian_product(b, a)
    assert ab.precision == pytest.approx(ba.precision, rel=1e-12)
    assert ab.weighted_mean == pytest.approx(ba.weighted_mean, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_msg, finite_msg, finite_msg)
def test_product_associates(a, b, c):
    left = gaussian_product(gaussian_product(a, b), c)
    right = gaussian_product(a, gaussian_product(b, c))
    assert left.precision == pytest.approx(right.precision, rel=1e-12)
    assert left.weighted_mean == pytest.approx(right.weighted_mean, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_msg, finite_msg)
def test_divide_undoes_product(a, b):
    back = gaussian_divide(gaussian_product(a, b), b)
    assert back.precision == pytest.approx(a.precision, rel=1e-10)
    assert back.mean == pytest.approx(a.mean, rel=1e-10, abs=1e-10)


def test_divide_hand_example():
    out = gaussian_divide(GaussianMessage.from_moments(0.3, 0.5), GaussianMessage.from_moments(0.1, 1.0))
    assert out.variance == pytest.approx(1.0)
    assert out.mean == pytest.approx(0.5)


def test_divide_noninformative_denominator_is_identity():
    num = GaussianMessage.from_moments(0.2 - 0.4j, 0.7)
    out = gaussian_divide(num, GaussianMessage.noninformative())
    assert out.precision == num.precision
    assert out.weighted_mean == num.weighted_mean


def test_divide_stabilises_negative_precision():
    num = GaussianMessage.from_moments(0.4 + 0.1j, 1.0)
    den = GaussianMessage.from_moments(0.0, 0.5)
    out = gaussian_divide(num, den)
    assert out.variance == pytest.approx(VAR_CAP)
    assert out.mean == pytest.approx(0.4 + 0.1j)
    assert out.precision > 0 and out.precision <= PREC_FLOOR


def test_messages_vectorised():
    msg = GaussianMessage.from_moments(np.array([1.0, 2.0j]), np.array([0.5, np.inf]))
    np.testing.assert_allclose(msg.precision, [2.0, 0.0])
    np.testing.assert_allclose(msg.mean, [1.0, 0.0])
    assert msg[0].variance == pytest.approx(0.5)


def test_from_moments_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        GaussianMessage.from_moments(0.0, 0.0)
    with pytest.raises(ValueError):
        GaussianMessage.from_moments(0.0, np.nan)


def test_symbol_posterior_normalisation():
    rng = np.random.default_rng(0)
    logw = rng.normal(scale=50, size=(100, 16))
    post = SymbolPosterior.from_log_weights(logw)
    np.testing.assert_allclose(post.probs.sum(axis=-1), 1.0, atol=1e-12)
    shifted = SymbolPosterior.from_log_weights(logw + 1234.5)
    np.testing.assert_allclose(shifted.probs, post.probs, atol=1e-12)
    with pytest.raises(ValueError):
        SymbolPosterior(np.array([[0.5, 0.6]]))


def test_rng_stream_keys():
    a = RngStream(3, 7, "noise").generator().standard_normal(5)
    b = RngStream(3, 7, "noise").generator().standard_normal(5)
    c = RngStream(3, 7, "channel").generator().standard_normal(5)
    d = RngStream(3, 8, "noise").generator().standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)
