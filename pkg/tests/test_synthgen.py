import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opinn import _rng
from opinn.errors import DatasetFormatError, InvalidParameterError
from opinn.graph import generate_ba_graph
from opinn.synthgen import (
    PATTERN_DEFAULTS,
    Dataset,
    SynthConfig,
    cluster_count,
    generate,
    histogram_modes,
    interpolate_linear,
    is_bimodal,
    load_dataset,
    save_dataset,
    simulate_raw,
)


def small(pattern="consensus", **kw):
    return SynthConfig.for_pattern(pattern, **{"n": 120, "m_ba": 3, **kw})


def segment_oracle(row, target):
    """Evaluate the piecewise-linear interpolant point by point."""
    t_in = len(row)
    out = []
    for k in range(target):
        pos = k * (t_in - 1) / (target - 1)
        j = min(int(pos), t_in - 2)
        w = pos - j
        out.append(row[j] + w * (row[j + 1] - row[j]))
    return np.array(out)


def raw_loop(g, x0, cfg, rng):
    """Per-user scalar re-simulation of the noisy stubborn bounded-confidence rule."""
    nb = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        nb[u].append(v)
        nb[v].append(u)
    noise = rng.standard_normal((g.n_nodes, cfg.raw_steps))
    x = list(x0)
    cols = [list(x0)]
    for t in range(cfg.raw_steps):
        new = []
        for i in range(g.n_nodes):
            peers = [x[j] for j in nb[i] if abs(x[i] - x[j]) <= cfg.epsilon]
            mean = sum(peers) / len(peers) if peers else x[i]
            v = cfg.lam * x0[i] + (1 - cfg.lam) * mean + cfg.eta * noise[i, t]
            new.append(min(1.0, max(-1.0, v)))
        x = new
        cols.append(list(x))
    return np.array(cols).T


# -- config ------------------------------------------------------------------------


def test_pattern_defaults():
    assert PATTERN_DEFAULTS["consensus"] == {"lam": 0.2, "epsilon": 0.5, "eta": 0.015}
    assert PATTERN_DEFAULTS["polarization"] == {"lam": 0.1, "epsilon": 0.3, "eta": 0.015}
    assert PATTERN_DEFAULTS["clustering"] == {"lam": 0.15, "epsilon": 0.2, "eta": 0.015}
    cfg = SynthConfig.for_pattern("clustering")
    assert (cfg.raw_steps, cfg.target_steps, cfg.m_ba, cfg.n) == (50, 400, 10, 10_000)


@pytest.mark.parametrize(
    "kw",
    [{"lam": 1.5}, {"epsilon": -0.1}, {"eta": -1.0}, {"raw_steps": 0}, {"target_steps": 20}, {"n": 3}],
)
def test_invalid_config(kw):
    with pytest.raises(InvalidParameterError):
        generate(small(**kw))


def test_unknown_pattern():
    with pytest.raises(InvalidParameterError):
        SynthConfig.for_pattern("chaos")


# -- generate ------------------------------------------------------------------------


def test_full_stubbornness_without_noise_is_constant():
    d = generate(small(lam=1.0, eta=0.0))
    np.testing.assert_array_equal(d.opinions, np.repeat(d.opinions[:, :1], 400, axis=1))


def test_shape_meta_and_initial_opinions():
    cfg = small(seed=3)
    d = generate(cfg)
    assert d.opinions.shape == (120, 400)
    assert d.meta["pattern"] == "consensus" and d.meta["seed"] == 3
    assert d.meta["config"]["lam"] == 0.2
    assert d.meta["split_ratios"] == [0.6, 0.2, 0.2]
    x0 = _rng.stream(3, "init-opinions").uniform(-1, 1, 120)
    np.testing.assert_array_equal(d.opinions[:, 0], x0)


def test_raw_simulation_matches_scalar_loop():
    cfg = small("clustering", n=40, raw_steps=12, seed=2)
    g = generate_ba_graph(40, 3, seed=2)
    x0 = np.random.default_rng(0).uniform(-1, 1, 40)
    fast = simulate_raw(g, x0, cfg, np.random.default_rng(7))
    slow = raw_loop(g, x0, cfg, np.random.default_rng(7))
    np.testing.assert_allclose(fast, slow, atol=1e-14)


def test_generated_dataset_matches_raw_then_interpolated():
    cfg = small("polarization", seed=4)
    d = generate(cfg)
    g = generate_ba_graph(cfg.n, cfg.m_ba, seed=4)
    raw = simulate_raw(g, d.opinions[:, 0], cfg, _rng.stream(4, "noise"))
    np.testing.assert_array_equal(d.opinions, interpolate_linear(raw, 400))


def test_deterministic_and_seed_sensitive():
    a, b, c = generate(small(seed=1)), generate(small(seed=1)), generate(small(seed=2))
    assert np.array_equal(a.opinions, b.opinions)
    assert np.array_equal(a.graph.edges, b.graph.edges)
    assert not np.array_equal(a.opinions, c.opinions)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(sorted(PATTERN_DEFAULTS)), st.integers(0, 10_000), st.floats(0, 0.5))
def test_opinions_stay_in_range(pattern, seed, eta):
    d = generate(small(pattern, n=60, seed=seed, eta=eta))
    assert np.all(np.abs(d.opinions) <= 1.0)


def test_consensus_shrinks_spread():
    x = generate(SynthConfig.for_pattern("consensus", n=1000, seed=0)).opinions
    assert x[:, -1].std() < 0.5 * x[:, 0].std()


def test_polarization_is_bimodal():
    x = generate(SynthConfig.for_pattern("polarization", n=1000, seed=0)).opinions
    assert is_bimodal(x[:, -1])


# -- pattern statistics ------------------------------------------------------------------


def test_cluster_count_examples():
    assert cluster_count([]) == 0
    assert cluster_count([0.3]) == 1
    assert cluster_count([0.0, 0.05, 0.1]) == 1
    assert cluster_count([0.0, 0.11, 0.5, 0.52]) == 3
    assert cluster_count([0.5, -0.5, 0.0]) == 3


def test_histogram_modes_and_bimodality():
    counts, peaks = histogram_modes([-0.95, -0.95, -0.9, 0.95])
    assert counts.sum() == 4 and peaks == [0, 19]
    assert is_bimodal([-0.95, -0.95, 0.95])
    assert not is_bimodal(np.linspace(-1, 1, 200))
    # two peaks next to each other with no empty bin between them
    assert not is_bimodal([0.01, 0.01, 0.11, 0.16, 0.16])


# -- interpolation ---------------------------------------------------------------------


def test_interpolate_midpoint():
    np.testing.assert_array_equal(interpolate_linear([[0.0, 1.0]], 3), [[0.0, 0.5, 1.0]])


def test_interpolate_identity():
    x = np.random.default_rng(0).uniform(-1, 1, (5, 17))
    np.testing.assert_array_equal(interpolate_linear(x, 17), x)


def test_interpolate_51_to_400_against_segments():
    x = np.random.default_rng(1).uniform(-1, 1, (6, 51))
    out = interpolate_linear(x, 400)
    oracle = np.array([segment_oracle(row, 400) for row in x])
    assert np.max(np.abs(out - oracle)) < 1e-12
    np.testing.assert_array_equal(out[:, [0, -1]], x[:, [0, -1]])


@pytest.mark.parametrize("target,cols", [(1, 2), (3, 5), (5, 1)])
def test_interpolate_rejects_bad_sizes(target, cols):
    with pytest.raises(InvalidParameterError):
        interpolate_linear(np.zeros((2, cols)), target)


# -- files -----------------------------------------------------------------------------


def test_save_load_round_trip_bitwise(tmp_path):
    d = generate(small("clustering", seed=5))
    save_dataset(d, tmp_path / "ds")
    e = load_dataset(tmp_path / "ds")
    assert np.array_equal(d.opinions, e.opinions)
    assert np.array_equal(d.graph.edges, e.graph.edges)
    assert e.meta == json.loads(json.dumps(d.meta))
    header = (tmp_path / "ds" / "opinions.csv").read_text().splitlines()[0]
    assert header == ",".join(f"t{k}" for k in range(400))


def test_round_trip_extreme_floats(tmp_path):
    g = generate_ba_graph(3, 1)
    x = np.array([[1 / 3, -0.0, 5e-324], [np.nextafter(1, 0), -1.0, 0.1 + 0.2], [1e-17, 0.5, -0.7]])
    save_dataset(Dataset(g, x), tmp_path)
    np.testing.assert_array_equal(load_dataset(tmp_path).opinions, x)


def test_missing_graph_file(tmp_path):
    save_dataset(generate(small()), tmp_path)
    (tmp_path / "graph.csv").unlink()
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(tmp_path)
    assert "graph.csv" in str(info.value)


def test_header_mismatch_names_line(tmp_path):
    save_dataset(generate(small()), tmp_path)
    p = tmp_path / "opinions.csv"
    lines = p.read_text().splitlines()
    lines[0] = lines[0].replace("t1,", "x1,")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(tmp_path)
    assert "opinions.csv:1:" in str(info.value)


def test_bad_row_names_line(tmp_path):
    save_dataset(generate(small()), tmp_path)
    p = tmp_path / "opinions.csv"
    lines = p.read_text().splitlines()
    lines[4] = lines[4].rsplit(",", 1)[0] + ",abc"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(tmp_path)
    assert "opinions.csv:5:" in str(info.value)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "nope")
