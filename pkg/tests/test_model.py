import math
from dataclasses import replace

import numpy as np
import pytest

from opinn import autodiff as ad
from opinn.errors import InvalidParameterError, ShapeError
from opinn.evaluation import SplitSpec
from opinn.graph import Graph, generate_ba_graph
from opinn.model import (
    ENCODERS,
    OpinnConfig,
    OpinnModel,
    clone,
    grid_search,
    gru_cell,
    train,
)
from opinn.odesolve import SolverConfig

GRAPH = generate_ba_graph(6, 2, seed=0)
TINY = OpinnConfig(hidden_dim=4, context_len=3, block_len=3, epochs=2, batch_size=4, seed=1)


def tiny_series(n=6, t=40, seed=0):
    rng = np.random.default_rng(seed)
    base = np.sin(np.linspace(0, 3, t))[None, :] * rng.uniform(0.2, 0.8, (n, 1))
    return np.clip(base + 0.01 * rng.normal(size=(n, t)), -1, 1)


def sig(x):
    return 1 / (1 + math.exp(-x))


# -- GRU cell ----------------------------------------------------------------------------


def test_gru_hand_evaluation_two_steps():
    # scalar GRU with blocks [reset | update | candidate]
    wx = np.array([[0.5, -0.3, 0.8]])
    wh = np.array([[0.2, 0.4, -0.6]])
    b = np.array([0.1, -0.2, 0.05])
    h = 0.0
    for x in (0.7, -0.4):
        r = sig(x * wx[0, 0] + h * wh[0, 0] + b[0])
        u = sig(x * wx[0, 1] + h * wh[0, 1] + b[1])
        n = math.tanh(x * wx[0, 2] + r * (h * wh[0, 2]) + b[2])
        h = (1 - u) * n + u * h
    cfg = OpinnConfig(hidden_dim=1, context_len=2, block_len=2)
    model = OpinnModel(Graph.from_edges(1, []), cfg)
    model.params["enc.w_x"].data = wx
    model.params["enc.w_h"].data = wh
    model.params["enc.b"].data = b
    z = model.encode(np.array([[0.7, -0.4]])).data
    assert abs(z[0, 0] - h) < 1e-12


def test_gru_cell_gradcheck():
    rng = np.random.default_rng(0)
    p = {
        "x": ad.parameter(rng.normal(size=(5, 2))),
        "h": ad.parameter(rng.normal(size=(5, 3))),
        "w_x": ad.parameter(rng.normal(size=(2, 9))),
        "w_h": ad.parameter(rng.normal(size=(3, 9))),
        "b": ad.parameter(rng.normal(size=9)),
    }
    c = rng.normal(size=(5, 3))
    err = ad.gradient_check(lambda: ad.sum_(ad.mul(gru_cell(p["x"], p["h"], p["w_x"], p["w_h"], p["b"]), c)), p)
    assert err < 1e-4


def test_zero_encoder_gives_zero_state():
    model = OpinnModel(GRAPH, TINY)
    for k in ("enc.w_x", "enc.w_h", "enc.b"):
        model.params[k].data[:] = 0
    ctx = np.random.default_rng(0).uniform(-1, 1, (6, 3))
    np.testing.assert_array_equal(model.encode(ctx).data, np.zeros((6, 4)))


def test_identical_contexts_identical_rows():
    model = OpinnModel(GRAPH, TINY)
    ctx = np.tile([0.1, -0.5, 0.3], (6, 1))
    z = model.encode(ctx).data
    assert np.all(z == z[0])


# -- forecast --------------------------------------------------------------------------------


def test_forecast_shapes_and_range():
    cfg = OpinnConfig(hidden_dim=8, seed=2)
    model = OpinnModel(generate_ba_graph(5, 2, seed=1), cfg)
    ctx = np.random.default_rng(1).uniform(-1, 1, (5, 30))
    out = model.forecast(ctx, 1)
    assert out.shape == (5, 30)
    assert np.all(np.isfinite(out)) and np.all(np.abs(out) < 1)
    assert model.forecast(ctx, 2).shape == (5, 60)
    assert model.forecast(np.stack([ctx, ctx]), 1).shape == (2, 5, 30)
    assert model.predict(ctx[None], 45).shape == (1, 5, 45)


def test_constant_head():
    model = OpinnModel(GRAPH, TINY)
    for k in ("dec.w1", "dec.b1", "dec.w2"):
        model.params[k].data[:] = 0
    model.params["dec.b2"].data = np.array([0.3, -1.2, 2.0])
    out = model.forecast(np.random.default_rng(0).uniform(-1, 1, (6, 3)), 2)
    np.testing.assert_array_equal(out, np.tile(np.tanh([0.3, -1.2, 2.0]), (6, 2)))


def test_context_shape_checked():
    model = OpinnModel(GRAPH, TINY)
    with pytest.raises(ShapeError):
        model.encode(np.zeros((6, 4)))
    with pytest.raises(ShapeError):
        model.encode(np.zeros((5, 3)))
    with pytest.raises(InvalidParameterError):
        model.forecast(np.zeros((6, 3)), 0)


@pytest.mark.parametrize("encoder", ENCODERS)
def test_encoder_variants_share_contract(encoder):
    cfg = replace(TINY, encoder=encoder)
    model = OpinnModel(GRAPH, cfg)
    ctx = np.random.default_rng(3).uniform(-1, 1, (2, 6, 3))
    assert model.encode(ctx).shape == (2, 6, 4)
    out = model.forecast(ctx, 2)
    assert out.shape == (2, 6, 6) and np.all(np.abs(out) < 1)


@pytest.mark.parametrize("encoder", ENCODERS)
def test_full_model_gradient_tiny(encoder):
    rng = np.random.default_rng(7)
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
    cfg = OpinnConfig(hidden_dim=3, context_len=2, block_len=2, encoder=encoder, seed=3)
    model = OpinnModel(g, cfg)
    for k, p in model.params.items():
        p.data = rng.normal(scale=0.6, size=p.shape)
    ctx = rng.uniform(-1, 1, (2, 4, 2))
    target = rng.uniform(-1, 1, (2, 4, 2))
    err = ad.gradient_check(lambda: ad.mse(model.forward(ctx, 1), target), model.params)
    assert err < 1e-4


@pytest.mark.parametrize("method", ["euler", "dopri5"])
def test_solver_choice(method):
    cfg = replace(TINY, solver=SolverConfig(method))
    out = OpinnModel(GRAPH, cfg).forecast(np.zeros((6, 3)), 2)
    assert out.shape == (6, 6)


# -- persistence -------------------------------------------------------------------------


def test_checkpoint_round_trip_forecast_bitwise(tmp_path):
    model = OpinnModel(GRAPH, replace(TINY, encoder="mlp", reaction="linear"))
    train(model, tiny_series(), replace(TINY, encoder="mlp", reaction="linear", epochs=1))
    ctx = np.random.default_rng(0).uniform(-1, 1, (6, 3))
    before = model.forecast(ctx, 2)
    model.save(tmp_path / "m.json")
    loaded = OpinnModel.load(tmp_path / "m.json", GRAPH)
    assert loaded.cfg == model.cfg
    assert loaded.forecast(ctx, 2).tobytes() == before.tobytes()


def test_clone_is_independent():
    model = OpinnModel(GRAPH, TINY)
    other = clone(model)
    other.params["dec.b2"].data += 1
    assert not np.array_equal(model.params["dec.b2"].data, other.params["dec.b2"].data)


def test_config_round_trip_and_validation():
    cfg = replace(TINY, solver=SolverConfig("dopri5", rtol=1e-4))
    assert OpinnConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidParameterError):
        OpinnConfig.from_dict({"hidden": 3})
    with pytest.raises(InvalidParameterError):
        OpinnConfig(encoder="lstm")
    with pytest.raises(InvalidParameterError):
        OpinnConfig(hidden_dim=0)


# -- training ----------------------------------------------------------------------------


def test_one_epoch_on_constant_data_improves():
    x = np.full((6, 40), 0.4)
    model = OpinnModel(GRAPH, TINY)
    rep = train(model, x, replace(TINY, epochs=1, batch_size=2, learning_rate=0.01))
    assert rep.val_rmse[0] < rep.initial_val_rmse


def test_zero_learning_rate_leaves_parameters():
    model = OpinnModel(GRAPH, TINY)
    before = model.state_arrays()
    train(model, tiny_series(), replace(TINY, learning_rate=0.0))
    for k, v in before.items():
        assert np.array_equal(model.params[k].data, v)


def test_training_is_deterministic():
    reps = []
    for _ in range(2):
        model = OpinnModel(GRAPH, TINY)
        reps.append((train(model, tiny_series(), TINY), model.state_arrays()))
    assert reps[0][0].to_json() == reps[1][0].to_json()
    for k in reps[0][1]:
        assert reps[0][1][k].tobytes() == reps[1][1][k].tobytes()
    other = train(OpinnModel(GRAPH, replace(TINY, seed=2)), tiny_series(), replace(TINY, seed=2))
    assert other.train_loss != reps[0][0].train_loss


def test_report_tracks_best_epoch():
    model = OpinnModel(GRAPH, TINY)
    rep = train(model, tiny_series(), replace(TINY, epochs=4))
    assert len(rep.train_loss) == len(rep.val_rmse) == 4
    assert rep.best_val_rmse == min([rep.initial_val_rmse] + rep.val_rmse)
    assert 0 < rep.gates["omega"] < 1 and 0 < rep.gates["delta"] < 1


def test_insufficient_columns():
    with pytest.raises(InvalidParameterError):
        train(OpinnModel(GRAPH, TINY), tiny_series(t=8), TINY)


def test_windows_do_not_cross_into_test_span():
    # test-span targets never enter training or validation
    x = tiny_series()
    y = x.copy()
    _, va = SplitSpec().bounds(40)
    y[:, va:] = 5.0
    a = train(OpinnModel(GRAPH, TINY), x, TINY)
    b = train(OpinnModel(GRAPH, TINY), y, TINY)
    assert a.to_json() == b.to_json()


# -- grid search ----------------------------------------------------------------------------


def test_grid_single_point():
    best, records = grid_search(GRAPH, tiny_series(), TINY, {"learning_rate": [0.01]})
    assert best == replace(TINY, learning_rate=0.01)
    assert len(records) == 1


def test_grid_two_by_two_returns_minimum():
    space = {"learning_rate": [0.001, 0.05], "hidden_dim": [2, 4]}
    best, records = grid_search(GRAPH, tiny_series(), TINY, space)
    assert len(records) == 4
    top = min(records, key=lambda r: r["val_rmse"])
    assert (best.learning_rate, best.hidden_dim) == (top["learning_rate"], top["hidden_dim"])


def test_grid_excludes_diverging_point():
    space = {"learning_rate": [1e300, 0.01]}
    best, records = grid_search(GRAPH, tiny_series(), replace(TINY, epochs=3), space)
    assert records[0]["val_rmse"] is None
    assert best.learning_rate == 0.01
