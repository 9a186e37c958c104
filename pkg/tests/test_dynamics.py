import numpy as np
import pytest

from opinn import autodiff as ad
from opinn.dynamics import (
    ABLATIONS,
    DcrField,
    convection_term,
    diffusion_term,
    field_eval,
    init_field_params,
    reaction_term,
)
from opinn.errors import InvalidParameterError, ShapeError
from opinn.graph import Graph, generate_ba_graph, propagation_operator


def make_field(g, dim=3, reaction="nonlinear", ablation="full", seed=0):
    p = init_field_params(dim, reaction, np.random.default_rng(seed))
    return DcrField(p, propagation_operator(g), reaction, ablation), p


def randomize(params, rng, scale=0.7):
    for t in params.values():
        t.data = rng.normal(scale=scale, size=t.shape)


def dense_operator(g):
    a = np.eye(g.n_nodes)
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def convection_loop(z, w_vel, w_conv):
    """Velocity, softmax and aggregation written entry by entry."""
    n, d = z.shape
    out = np.zeros((n, d))
    for i in range(n):
        v = [max(0.0, sum((z[i, k] - z[j, k]) * w_vel[k, 0] for k in range(d))) for j in range(n)]
        e = [np.exp(x - max(v)) for x in v]
        a = [x / sum(e) for x in e]
        for c in range(d):
            out[i, c] = sum(a[j] * sum(z[j, k] * w_conv[k, c] for k in range(d)) for j in range(n))
    return out


GRAPH = generate_ba_graph(8, 2, seed=3)


# -- initialisation ---------------------------------------------------------------------


def test_fresh_gates_are_one_half():
    f, _ = make_field(GRAPH)
    assert f.gates() == {"omega": 0.5, "one_minus_omega": 0.5, "delta": 0.5}


@pytest.mark.parametrize("reaction,names", [
    ("source", set()),
    ("linear", {"rea_w", "rea_b"}),
    ("nonlinear", {"rea_w1", "rea_b1", "rea_w2", "rea_b2"}),
])
def test_parameter_sets(reaction, names):
    p = init_field_params(4, reaction, np.random.default_rng(0))
    base = {"w_diff", "w_conv", "w_vel", "gate_omega_raw", "gate_delta_raw"}
    assert {k.removeprefix("field.") for k in p} == base | names
    assert p["field.w_vel"].shape == (4, 1)


def test_invalid_variants():
    with pytest.raises(InvalidParameterError):
        init_field_params(3, "cubic", np.random.default_rng(0))
    p = init_field_params(3, "source", np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        DcrField(p, propagation_operator(GRAPH), "source", "no_everything")


# -- diffusion ------------------------------------------------------------------------------


def test_diffusion_zero_state():
    f, _ = make_field(GRAPH)
    np.testing.assert_array_equal(diffusion_term(f, np.zeros((8, 3))).data, np.zeros((8, 3)))


def test_diffusion_isolated_node_identity_weights():
    f, p = make_field(Graph.from_edges(1, []))
    p["field.w_diff"].data = np.eye(3)
    z = np.array([[0.4, -0.2, 1.3]])
    np.testing.assert_array_equal(f.diffusion(z).data, np.maximum(z, 0))


def test_diffusion_dense_oracle():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (1, 3)])
    f, p = make_field(g)
    z = np.random.default_rng(1).normal(size=(4, 3))
    expected = np.maximum(dense_operator(g) @ z @ p["field.w_diff"].data, 0)
    np.testing.assert_allclose(f.diffusion(z).data, expected, atol=1e-12)


def test_diffusion_permutation_equivariance():
    g = generate_ba_graph(10, 2, seed=5)
    perm = np.random.default_rng(2).permutation(10)
    inv = np.argsort(perm)
    h = Graph.from_edges(10, [(inv[u], inv[v]) for u, v in g.edges])
    f, p = make_field(g)
    fh = DcrField(p, propagation_operator(h), "nonlinear")
    z = np.random.default_rng(3).normal(size=(10, 3))
    # node k of h is node perm[k] of g
    np.testing.assert_allclose(fh.diffusion(z[perm]).data, f.diffusion(z).data[perm], atol=1e-14)


def test_shape_errors():
    f, _ = make_field(GRAPH)
    with pytest.raises(ShapeError):
        f.diffusion(np.zeros((7, 3)))
    with pytest.raises(ShapeError):
        f(np.zeros((8, 4)))


# -- convection -------------------------------------------------------------------------------


def test_convection_identical_rows():
    f, p = make_field(GRAPH)
    row = np.array([0.3, -1.0, 0.6])
    z = np.tile(row, (8, 1))
    np.testing.assert_array_equal(f.velocity(z).data, np.zeros((8, 8)))
    expected = np.tile(row @ p["field.w_conv"].data, (8, 1))
    np.testing.assert_allclose(convection_term(f, z).data, expected, atol=1e-15)


def test_velocity_diagonal_is_zero():
    f, _ = make_field(GRAPH)
    v = f.velocity(np.random.default_rng(0).normal(size=(8, 3))).data
    np.testing.assert_array_equal(np.diag(v), np.zeros(8))
    assert np.all(v >= 0)


@pytest.mark.parametrize("seed", range(4))
def test_convection_triple_loop_oracle(seed):
    g = generate_ba_graph(3, 1, seed=seed)
    rng = np.random.default_rng(seed)
    p = init_field_params(2, "source", rng)
    randomize(p, rng, scale=1.5)
    f = DcrField(p, propagation_operator(g), "source")
    z = rng.normal(size=(3, 2))
    expected = convection_loop(z, p["field.w_vel"].data, p["field.w_conv"].data)
    np.testing.assert_allclose(f.convection(z).data, expected, atol=1e-12)


def test_convection_batched_matches_single():
    f, _ = make_field(GRAPH)
    z = np.random.default_rng(4).normal(size=(3, 8, 3))
    batched = f.convection(z).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], f.convection(z[b]).data, atol=1e-15)


# -- reaction -----------------------------------------------------------------------------


def test_reaction_examples():
    z = np.random.default_rng(0).normal(size=(8, 3))
    f, _ = make_field(GRAPH, reaction="source")
    np.testing.assert_array_equal(reaction_term(f, z).data, z)
    f, p = make_field(GRAPH, reaction="linear")
    p["field.rea_w"].data = np.eye(3)
    np.testing.assert_array_equal(f.reaction_term(z).data, z)
    f, _ = make_field(GRAPH, reaction="nonlinear")
    np.testing.assert_array_equal(f.reaction_term(np.zeros((8, 3))).data, np.zeros((8, 3)))


# -- gated field -------------------------------------------------------------------------------


def test_field_at_init_is_half_sum():
    f, _ = make_field(GRAPH)
    z = np.random.default_rng(5).normal(size=(8, 3))
    expected = 0.5 * f.diffusion(z).data + 0.5 * f.convection(z).data + 0.5 * f.reaction_term(z).data
    np.testing.assert_allclose(field_eval(f, z).data, expected, atol=1e-15)


def test_saturated_omega_removes_convection():
    f, p = make_field(GRAPH)
    p["field.gate_omega_raw"].data = np.array(20.0)
    p["field.gate_delta_raw"].data = np.array(0.0)
    z = np.random.default_rng(6).normal(size=(8, 3))
    expected = f.diffusion(z).data + 0.5 * f.reaction_term(z).data
    assert np.max(np.abs(f(z).data - expected)) < 1e-8


def test_ablation_variants():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(8, 3))
    p = init_field_params(3, "nonlinear", rng)
    randomize(p, rng)
    op = propagation_operator(GRAPH)
    full = DcrField(p, op, "nonlinear", "full")
    dif, con, rea = full.diffusion(z).data, full.convection(z).data, full.reaction_term(z).data
    w, d = full.gates()["omega"], full.gates()["delta"]
    assert 0 < w < 1 and 0 < d < 1
    expect = {
        "full": w * dif + (1 - w) * con + d * rea,
        "no_rea": w * dif + (1 - w) * con,
        "no_dif": con + d * rea,
        "no_con": dif + d * rea,
    }
    assert set(expect) == set(ABLATIONS)
    for ab, e in expect.items():
        np.testing.assert_allclose(DcrField(p, op, "nonlinear", ab)(z).data, e, atol=1e-14)
    # the no_rea variant is exactly the gated transport mix
    got = DcrField(p, op, "nonlinear", "no_rea")(z).data
    assert np.array_equal(got, (ad.mul(full.omega(), dif) + ad.mul(ad.sub(1.0, full.omega()), con)).data)


# -- gradients ---------------------------------------------------------------------------------


TERMS = {
    "diffusion": lambda f, z: f.diffusion(z),
    "convection": lambda f, z: f.convection(z),
    "reaction_source": lambda f, z: f.reaction_term(z),
    "reaction_linear": lambda f, z: f.reaction_term(z),
    "reaction_nonlinear": lambda f, z: f.reaction_term(z),
    "field": lambda f, z: f(z),
}


@pytest.mark.parametrize("term", sorted(TERMS))
@pytest.mark.parametrize("draw", range(10))
def test_term_gradients(term, draw):
    reaction = term.split("_")[1] if term.startswith("reaction") else "nonlinear"
    rng = np.random.default_rng(100 * draw + len(term))
    g = generate_ba_graph(5, 2, seed=draw)
    p = init_field_params(3, reaction, rng)
    randomize(p, rng)
    f = DcrField(p, propagation_operator(g), reaction)
    p["z"] = ad.parameter(rng.normal(size=(2, 5, 3)))
    c = rng.normal(size=(2, 5, 3))
    err = ad.gradient_check(lambda: ad.sum_(ad.mul(TERMS[term](f, p["z"]), c)), p)
    assert err < 1e-4
