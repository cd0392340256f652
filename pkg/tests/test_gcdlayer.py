import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcdnet import numkernel as nk
from gcdnet.config import ModelConfig
from gcdnet.errors import ConfigError, ShapeError
from gcdnet.gcdlayer import (
    ClassifierHead,
    EdgeAttention,
    GcdLayer,
    LayerConfig,
    MatrixGenerator,
    aggregate_messages,
    classify,
    gcd_attention,
    layer_forward,
    perspective_split,
    predict_labels,
    self_matrices,
    uniform_attention,
)
from gcdnet.graphstore import MultiRelationGraph
from gcdnet.model import GcdGnn
from gcdnet.protogcd import init_prototypes

from graphs import random_graph
from oracles import central_differences, max_relative_error, scalar_leaky, scalar_softmax


def test_perspective_split():
    p = perspective_split([0.7, 0.0, -0.3])
    np.testing.assert_array_equal(p.g_typ, [0.7, 0.0, -0.3])
    np.testing.assert_array_equal(p.g_atyp, [-0.7, 0.0, 0.3])
    assert np.all(p.g_typ + p.g_atyp == 0.0)


# ------------------------------------------------------------------ attention


def test_attention_equal_gcd_is_uniform():
    att = gcd_attention([0.0, 0.4, 0.4, 0.4], [0, 0, 0], [1, 2, 3], 4)
    np.testing.assert_allclose(att.alpha, [1 / 3] * 3, atol=1e-15)


def test_attention_two_neighbour_example():
    g = np.array([0.0, 1.0, -1.0])
    typ = gcd_attention(g, [0, 0], [1, 2], 3).alpha
    atyp = gcd_attention(perspective_split(g).g_atyp, [0, 0], [1, 2], 3).alpha
    oracle = scalar_softmax([scalar_leaky(1.0), scalar_leaky(-1.0)])
    np.testing.assert_allclose(typ, oracle, atol=1e-15)
    np.testing.assert_allclose(typ, [0.7685247834990175, 0.2314752165009825], atol=1e-12)
    np.testing.assert_allclose(atyp, oracle[::-1], atol=1e-15)
    assert round(typ[0], 4) == 0.7685 and round(atyp[0], 4) == 0.2315


def test_uniform_attention():
    att = uniform_attention([0, 0, 1], [1, 2, 0], 3)
    np.testing.assert_array_equal(att.alpha, [0.5, 0.5, 1.0])


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_attention_normalized_positive_and_antisymmetric(seed):
    g = random_graph(seed, n=10, p=0.4)
    gcd = np.random.default_rng(seed).uniform(-1, 1, g.n_nodes)
    for r in range(g.n_relations):
        t, s = g.relations[r].edge_arrays()
        for vals in (gcd, perspective_split(gcd).g_atyp):
            att = gcd_attention(vals, t, s, g.n_nodes)
            sums = att.per_node_sums()
            has = g.relations[r].degrees() > 0
            assert np.all(np.abs(sums[has] - 1.0) <= 1e-9)
            assert np.all(att.alpha > 0)


@settings(max_examples=40)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_attention_swap_neighbour_gcd_swaps_weights(ga, gb, gc):
    t, s = [0, 0, 0], [1, 2, 3]
    a = gcd_attention([0.0, ga, gb, gc], t, s, 4).alpha
    b = gcd_attention([0.0, gb, ga, gc], t, s, 4).alpha
    assert a[0] == b[1] and a[1] == b[0] and a[2] == b[2]
    a = gcd_attention([0.0, -ga, -gb, -gc], t, s, 4).alpha
    b = gcd_attention([0.0, -gb, -ga, -gc], t, s, 4).alpha
    assert a[0] == b[1] and a[1] == b[0]


@settings(max_examples=40)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.floats(0.0, 5.0))
def test_attention_shift_covariance_on_positive_gcd(vals, shift):
    n = len(vals) + 1
    t, s = [0] * len(vals), list(range(1, n))
    a = gcd_attention([0.0] + vals, t, s, n).alpha
    b = gcd_attention([0.0] + [v + shift for v in vals], t, s, n).alpha
    assert np.max(np.abs(a - b)) <= 1e-12


def test_gcd_drop_masks_only_in_training_and_keeps_some_edges():
    rng = np.random.default_rng(0)
    t = np.repeat(np.arange(20), 5)
    s = (t + np.tile(np.arange(1, 6), 20)) % 20
    g = rng.uniform(-1, 1, 20)
    full = gcd_attention(g, t, s, 20, gcd_drop=0.9, training=False)
    assert full.alpha.size == t.size
    dropped = gcd_attention(g, t, s, 20, gcd_drop=0.9, training=True, rng=rng)
    assert dropped.alpha.size < t.size
    # every node still has neighbours and normalized weights
    sums = dropped.per_node_sums()
    assert np.all(np.abs(sums - 1.0) <= 1e-9)


def test_gcd_drop_training_requires_rng():
    with pytest.raises(ValueError):
        gcd_attention([0.0, 0.1], [0], [1], 2, gcd_drop=0.5, training=True)


# -------------------------------------------------------------- self matrices


def test_zero_generator_gives_zero_matrices_and_messages():
    gen = MatrixGenerator(np.random.default_rng(0), 3, 2)
    gen.weight.data[:] = 0.0
    gen.bias.data[:] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 3))
    mats = self_matrices(x, gen)
    assert mats.shape == (4, 3, 2) and np.all(mats.data == 0.0)
    att = gcd_attention(np.zeros(4), [0, 1], [1, 0], 4)
    assert np.all(aggregate_messages(x, [att], [mats]).data == 0.0)


def test_zero_input_with_zero_bias_gives_zero_matrix():
    gen = MatrixGenerator(np.random.default_rng(0), 3, 2)
    gen.bias.data[:] = 0.0
    assert np.all(self_matrices(np.zeros((2, 3)), gen).data == 0.0)


def test_self_matrix_flat_index_oracle():
    rng = np.random.default_rng(5)
    d, dp = 3, 4
    gen = MatrixGenerator(rng, d, dp)
    gen.weight.data = rng.normal(size=gen.weight.shape)
    x = rng.normal(size=(5, d))
    mats = self_matrices(x, gen).data
    flat = x @ gen.weight.data + gen.bias.data
    for i in range(5):
        for a in range(d):
            for b in range(dp):
                assert mats[i, a, b] == flat[i, a * dp + b]


def test_self_matrices_shape_error():
    gen = MatrixGenerator(np.random.default_rng(0), 3, 2)
    with pytest.raises(ShapeError):
        self_matrices(np.ones((2, 4)), gen)


# ---------------------------------------------------------------- aggregation


def test_single_neighbour_message():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3))
    w_t, w_a = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
    g = np.array([0.3, -0.8])
    att = [gcd_attention(v, [0], [1], 2) for v in (g, -g)]
    m = aggregate_messages(x, att, [nk.Tensor(w_t), nk.Tensor(w_a)]).data
    np.testing.assert_allclose(m[0], x[1] @ (w_t[0] + w_a[0]), atol=1e-14)
    assert np.all(m[1] == 0.0)


def test_isolated_nodes_get_zero_message():
    x = np.ones((3, 2))
    att = EdgeAttention(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), 3)
    assert np.all(aggregate_messages(x, [att], [nk.Tensor(np.ones((2, 2)))]).data == 0.0)


def test_three_node_line_matches_unrolled_oracle():
    x = np.array([[1.0, -1.0], [0.5, 2.0], [-2.0, 0.25]])
    g = np.array([0.9, -0.4, 0.2])
    t, s = [0, 1, 1, 2], [1, 0, 2, 1]
    rng = np.random.default_rng(3)
    w_t, w_a = rng.normal(size=(3, 2, 3)), rng.normal(size=(3, 2, 3))
    att = [gcd_attention(v, t, s, 3) for v in (g, -g)]
    got = aggregate_messages(x, att, [nk.Tensor(w_t), nk.Tensor(w_a)]).data

    def leaky(v):
        return v if v > 0 else 0.2 * v

    # node 1 has neighbours 0 and 2
    lt = [leaky(0.9), leaky(0.2)]
    la = [leaky(-0.9), leaky(-0.2)]
    at = [math.exp(v) / (math.exp(lt[0]) + math.exp(lt[1])) for v in lt]
    aa = [math.exp(v) / (math.exp(la[0]) + math.exp(la[1])) for v in la]
    expected = np.zeros((3, 3))
    for b in range(3):
        expected[0, b] = sum(x[1, a] * (w_t[0, a, b] + w_a[0, a, b]) for a in range(2))
        expected[2, b] = sum(x[1, a] * (w_t[2, a, b] + w_a[2, a, b]) for a in range(2))
        expected[1, b] = sum(
            (at[0] * x[0, a] + at[1] * x[2, a]) * w_t[1, a, b]
            + (aa[0] * x[0, a] + aa[1] * x[2, a]) * w_a[1, a, b]
            for a in range(2)
        )
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_aggregate_rejects_mismatched_attention():
    att = gcd_attention(np.zeros(4), [0], [1], 4)
    with pytest.raises(ShapeError):
        aggregate_messages(np.ones((3, 2)), [att], [nk.Tensor(np.ones((2, 2)))])


# ---------------------------------------------------------------------- layer


def straight_line_layer(layer, graph, x, gcd):
    """Scalar-loop reimplementation of one layer: attention, per-node matrices, concat, combine."""
    n, d = x.shape
    dp = layer.config.out_dim
    persp = [("typ", 1.0)] + ([("atyp", -1.0)] if layer.config.use_atypical else [])
    msgs = np.zeros((n, dp))
    for r in range(graph.n_relations):
        for i in range(n):
            nb = [int(j) for j in graph.neighbors(i, r)]
            if not nb:
                continue
            for key, sign in persp:
                tr = layer.transforms[key]
                if isinstance(tr, MatrixGenerator):
                    flat = [
                        sum(x[i, k] * tr.weight.data[k, c] for k in range(d)) + tr.bias.data[c]
                        for c in range(d * dp)
                    ]
                    w = [[flat[a * dp + b] for b in range(dp)] for a in range(d)]
                else:
                    w = tr.data.tolist()
                alpha = scalar_softmax([scalar_leaky(sign * gcd[j]) for j in nb])
                agg = [sum(al * x[j, a] for al, j in zip(alpha, nb)) for a in range(d)]
                for b in range(dp):
                    msgs[i, b] += sum(agg[a] * w[a][b] for a in range(d))
    out = np.zeros((n, dp))
    U, C, c = layer.self_weight.data, layer.combine_weight.data, layer.combine_bias.data
    for i in range(n):
        selfp = [sum(x[i, a] * U[a, b] for a in range(d)) for b in range(dp)]
        cat = selfp + list(msgs[i])
        for b in range(dp):
            out[i, b] = scalar_leaky(sum(cat[k] * C[k, b] for k in range(2 * dp)) + c[b])
    return out


def randomize(obj, rng):
    for p in obj.parameters():
        p.data = rng.normal(scale=0.5, size=p.shape)


@pytest.mark.parametrize("self_matrix, atypical", [(True, True), (True, False), (False, False)])
def test_layer_forward_matches_straight_line_oracle(self_matrix, atypical):
    g = random_graph(4, n=5, d=3, p=0.6)
    gcd = np.random.default_rng(1).uniform(-1, 1, 5)
    layer = GcdLayer(np.random.default_rng(2), LayerConfig(3, 4, use_self_matrix=self_matrix,
                                                           use_atypical=atypical))
    randomize(layer, np.random.default_rng(3))
    got = layer_forward(layer, g, g.features, gcd).data
    np.testing.assert_allclose(got, straight_line_layer(layer, g, g.features, gcd), rtol=0, atol=1e-10)


def test_zero_message_weights_leave_only_self_path():
    g = random_graph(6, n=6, d=3, n_relations=1, p=0.5)
    layer = GcdLayer(np.random.default_rng(0), LayerConfig(3, 2, use_self_matrix=False,
                                                           use_atypical=False))
    layer.transforms["typ"].data[:] = 0.0
    out = layer_forward(layer, g, g.features, np.zeros(6)).data
    U, C, c = layer.self_weight.data, layer.combine_weight.data, layer.combine_bias.data
    z = g.features @ U @ C[:2] + c
    np.testing.assert_allclose(out, np.where(z > 0, z, 0.2 * z), atol=1e-14)


def test_automorphic_nodes_get_identical_embeddings():
    # nodes 1 and 2 are both leaves of node 0 with equal features and GCD
    x = np.array([[0.3, -0.2], [1.0, 0.5], [1.0, 0.5]])
    g = MultiRelationGraph.from_edges(x, [0, 1, 1], [[(0, 1), (0, 2)]])
    layer = GcdLayer(np.random.default_rng(0), LayerConfig(2, 3))
    out = layer_forward(layer, g, x, np.array([0.1, 0.6, 0.6])).data
    np.testing.assert_array_equal(out[1], out[2])


def test_layer_flags_off_bit_identical_to_m1_wiring():
    g = random_graph(3, n=10, d=5)
    gcd = np.random.default_rng(0).uniform(-1, 1, 10)
    m1 = GcdGnn(5, ModelConfig(ablation="M1", hidden_dim=4, seed=2)).layers[0]
    plain = GcdLayer(np.random.default_rng(9), LayerConfig(5, 4, use_self_matrix=False,
                                                           use_atypical=False))
    assert plain.perspectives == m1.perspectives == ("typ",)
    for a, b in zip(plain.parameters(), m1.parameters()):
        a.data = b.data.copy()
    np.testing.assert_array_equal(layer_forward(plain, g, g.features, gcd).data,
                                  layer_forward(m1, g, g.features, gcd).data)


def test_degenerate_full_layer_reduces_to_lightweight():
    g = random_graph(8, n=9, d=4)
    gcd = np.random.default_rng(3).uniform(-1, 1, 9)
    light = GcdLayer(np.random.default_rng(1), LayerConfig(4, 3, use_self_matrix=False,
                                                           use_atypical=False))
    full = GcdLayer(np.random.default_rng(1), LayerConfig(4, 3))
    full.self_weight.data = light.self_weight.data.copy()
    full.combine_weight.data = light.combine_weight.data.copy()
    full.combine_bias.data = light.combine_bias.data.copy()
    for gen in full.transforms.values():
        gen.weight.data[:] = 0.0
        gen.bias.data[:] = 0.0
    full.transforms["typ"].bias.data = light.transforms["typ"].data.reshape(-1).copy()
    np.testing.assert_allclose(layer_forward(full, g, g.features, gcd).data,
                               layer_forward(light, g, g.features, gcd).data, rtol=0, atol=1e-12)


def test_layer_config_validation():
    with pytest.raises(ConfigError):
        LayerConfig(0, 2)
    with pytest.raises(ConfigError):
        LayerConfig(2, 2, gcd_drop=1.0)
    with pytest.raises(ConfigError):
        LayerConfig(2, 2, use_gcd=False, use_atypical=True)


def test_layer_input_shape_checked():
    layer = GcdLayer(np.random.default_rng(0), LayerConfig(3, 2))
    with pytest.raises(ShapeError):
        layer.forward(np.ones((4, 2)), [], np.zeros(4))


# ----------------------------------------------------------------------- head


def test_zero_head_gives_half():
    head = ClassifierHead(np.random.default_rng(0), 4, 5)
    for p in head.parameters():
        p.data[:] = 0.0
    np.testing.assert_array_equal(classify(np.ones((3, 4)), head).data, 0.5)


def test_threshold_rule():
    np.testing.assert_array_equal(predict_labels([0.49, 0.51, 0.5], 0.5), [0, 1, 1])


def test_head_monotone_in_logit():
    head = ClassifierHead(np.random.default_rng(1), 2, 3)
    h = np.random.default_rng(2).normal(size=(6, 2))
    logits = head.logits(h).data
    probs = head(h).data
    order = np.argsort(logits)
    assert np.all(np.diff(probs[order]) > 0)


# ------------------------------------------------------------ gradient check


def test_full_model_gradient_check():
    g = random_graph(11, n=12, d=6)
    model = GcdGnn(6, ModelConfig(ablation="M3", hidden_dim=4, seed=3))
    randomize(model, np.random.default_rng(4))
    labels = np.array(g.labels)
    model.prototypes = init_prototypes(model.project(g), labels)
    gcd = model.compute_gcd(model.prototypes, model.project(g), labels)
    nodes = np.flatnonzero(labels >= 0)
    y = labels[nodes].astype(float)

    def loss():
        p = model.forward(g, gcd, training=False).prob
        return -(nk.log(p[nodes]) * y + nk.log(1.0 - p[nodes]) * (1.0 - y)).sum()

    params = model.parameters()
    nk.backward(loss())
    analytic = [p.grad.copy() for p in params]
    numeric = central_differences(lambda: float(loss().data), [p.data for p in params])
    assert max_relative_error(analytic, numeric) < 1e-4
