import numpy as np
import pytest

from tns.errors import ConfigError
from tns.synthetic import SyntheticConfig, gen_synthetic


def _user_streams(data):
    g = data.graph
    for u in range(data.config.num_users):
        yield u, np.flatnonzero(g.src == u)


def test_deterministic_by_seed():
    a = gen_synthetic(SyntheticConfig(num_events=3000, seed=7)).graph
    b = gen_synthetic(SyntheticConfig(num_events=3000, seed=7)).graph
    c = gen_synthetic(SyntheticConfig(num_events=3000, seed=8)).graph
    for name in ("src", "dst", "timestamps", "edge_features", "labels", "node_features"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.edge_features, c.edge_features)


def test_shape_and_order():
    cfg = SyntheticConfig(num_users=30, num_items=10, num_events=2001, d_e=3, seed=1)
    data = gen_synthetic(cfg)
    g = data.graph
    assert g.num_edges == 2001 and g.num_nodes == 40 and g.d_e == 3
    assert np.all(np.diff(g.timestamps) >= 0)
    assert np.all(g.src < 30) and np.all(g.dst >= 30)
    assert sum(data.period_summary().values()) == 30


def test_labels_match_burst_oracle():
    # without noise feature 0 equals the burst value, so the label can be
    # recomputed from the stream itself
    cfg = SyntheticConfig(num_users=12, num_events=1200, noise=0.0, label_bursts=3, seed=3)
    data = gen_synthetic(cfg)
    g = data.graph
    for u, ids in _user_streams(data):
        p = data.periods[u]
        v = g.edge_features[ids, 0]
        for j in range(len(ids)):
            bursts = sorted({k // p for k in range(j)})[-cfg.label_bursts:]
            total = sum(v[b * p] for b in bursts)
            assert g.labels[ids[j]] == float(total > 0)
            assert np.all(v[(j // p) * p:(j // p + 1) * p] == v[j])


def test_destination_community_is_label():
    cfg = SyntheticConfig(num_users=20, num_items=10, num_events=2000, seed=2)
    g = gen_synthetic(cfg).graph
    community = (g.dst - 20 >= 5).astype(float)
    assert np.array_equal(community, g.labels)


def test_period_features_and_fixed_periods():
    periods = [1, 2, 3, 4] * 5
    data = gen_synthetic(SyntheticConfig(num_users=20, num_events=500, p_max=4,
                                         periods=periods, seed=0))
    assert data.periods.tolist() == periods
    X = data.graph.node_features
    assert X.shape == (70, 4)
    assert np.array_equal(X[:20].argmax(1) + 1, periods)
    assert np.all(X[20:] == 0)
    hidden = gen_synthetic(SyntheticConfig(num_events=500, expose_period=False))
    assert hidden.graph.d_v == 0


def test_unit_period_control():
    data = gen_synthetic(SyntheticConfig(num_events=1000, p_max=1))
    assert np.all(data.periods == 1)


@pytest.mark.parametrize("bad", [
    dict(num_events=0), dict(num_users=0), dict(num_items=1), dict(p_max=0),
    dict(label_bursts=0), dict(d_e=0), dict(noise=-0.1),
    dict(num_users=2, periods=[1]), dict(num_users=2, p_max=3, periods=[1, 4]),
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        gen_synthetic(SyntheticConfig(**bad))
