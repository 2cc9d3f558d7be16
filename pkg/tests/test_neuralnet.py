import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iflunch.dgp import Dataset, generate_lf
from iflunch.neuralnet import (
    Batch,
    MlpConfig,
    Network,
    SearchSpace,
    TrainingDiverged,
    Variant,
    combine_layers,
    hyperparameter_search,
    load_network,
    loss_mask_partition,
    save_network,
    train_cfr,
    train_multinet,
    train_treatment_net,
)

FAST = MlpConfig(layers=2, neurons_per_layer=8, dropout_prob=0.0, learning_rate=1e-2, batch_size=32,
                 iterations=150, seed=0)


def _batch(n=12, m=3, seed=0, binary=True):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(float) if binary else rng.normal(size=n)
    return Batch(rng.normal(size=(n, m)), y, rng.integers(0, 2, n))


def _numeric_grad(net, batch, **kwargs):
    g = np.zeros_like(net.params)
    for i in range(net.params.size):
        old = net.params[i]
        net.params[i] = old + 1e-6
        up, _ = net.loss_and_grad(batch, **kwargs)
        net.params[i] = old - 1e-6
        down, _ = net.loss_and_grad(batch, **kwargs)
        net.params[i] = old
        g[i] = (up - down) / 2e-6
    return g


def test_zero_weights_predict_one_half():
    net = Network(3, 2, 4, seed=0)
    net.params[...] = 0.0
    np.testing.assert_allclose(net.head_predictions(np.ones((5, 3)), 1), 0.5)


def test_loss_is_mean_of_row_losses():
    net = Network(3, 3, 6, head_layers=(1, 2, 3), seed=1)
    batch = _batch()
    total, _ = net.loss_and_grad(batch)
    rows = [net.loss_and_grad(batch.take([i]))[0] for i in range(12)]
    assert total == pytest.approx(np.mean(rows), rel=1e-12)


def test_all_ones_mask_equals_unmasked():
    net = Network(3, 3, 6, head_layers=(1, 2, 3), l2=1e-3, seed=2)
    batch = _batch()
    masked = Batch(batch.x, batch.y, batch.arm, np.ones((12, 3)))
    a, ga = net.loss_and_grad(batch)
    b, gb = net.loss_and_grad(masked)
    assert a == b
    np.testing.assert_array_equal(ga, gb)


def test_inc_and_casc_share_loss_but_not_gradient():
    net = Network(3, 3, 6, head_layers=(1, 2, 3), seed=3)
    batch = _batch()
    li, gi = net.loss_and_grad(batch, variant=Variant.INC)
    lc, gc = net.loss_and_grad(batch, variant=Variant.CASC)
    assert li == lc
    assert not np.allclose(gi[net.layer_slice(1)], gc[net.layer_slice(1)])
    # the last layer only feeds its own head, so its gradient agrees
    np.testing.assert_allclose(gi[net.layer_slice(3)], gc[net.layer_slice(3)])


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("treg", [False, True])
def test_inc_gradient_matches_finite_differences(binary, treg):
    net = Network(3, 2, 5, head_layers=(1, 2), l2=0.01, binary=binary, treg=treg, seed=4)
    net.params += np.random.default_rng(0).normal(0, 0.1, net.params.size)
    batch = _batch(binary=binary)
    if treg:
        batch.clever = np.random.default_rng(1).uniform(1.2, 4.0, 12)
    _, g = net.loss_and_grad(batch)
    np.testing.assert_allclose(g, _numeric_grad(net, batch), atol=1e-6, rtol=1e-5)


def test_single_layer_multinet_equals_cfr():
    d = generate_lf("v1", 400, seed=0)
    cfg = MlpConfig(layers=1, neurons_per_layer=8, dropout_prob=0.1, iterations=60, seed=5)
    a = train_cfr(d, cfg)
    b = train_multinet(d, cfg)
    np.testing.assert_array_equal(a.net.params, b.net.params)
    np.testing.assert_array_equal(a.predict(d.covariates, 1), b.predict(d.covariates, 1))


def test_training_is_seed_deterministic():
    d = generate_lf("v1", 300, seed=1)
    a = train_multinet(d, FAST, Variant.CASC, use_loss_mask=True)
    b = train_multinet(d, FAST, Variant.CASC, use_loss_mask=True)
    np.testing.assert_array_equal(a.net.params, b.net.params)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_constant_outcome_is_learned():
    x = np.random.default_rng(2).normal(size=(200, 2))
    t = np.tile([0, 1], 100)
    model = train_cfr(Dataset(x, t, np.ones(200)), FAST)
    assert np.all(model.predict(x, 1) > 0.95)
    assert np.all(model.predict(x, 0) > 0.95)


def test_balanced_treatment_gives_one_half():
    x = np.random.default_rng(3).normal(size=(400, 2))
    t = np.tile([0, 1], 200)
    model = train_treatment_net(Dataset(x, t, np.zeros(400)), FAST)
    assert abs(float(np.mean(model.predict(x))) - 0.5) < 0.05


def test_layer_weights_on_simplex():
    d = generate_lf("v1", 400, seed=4)
    model = train_multinet(d, replace_layers(FAST, 3))
    assert model.beta.shape == (2, 3)
    np.testing.assert_allclose(model.beta.sum(axis=1), 1.0)
    assert np.all(model.beta >= 0)
    assert combine_layers([[0.2, 0.4], [0.2, 0.4]], [0.2, 0.4]).tolist() == [1.0, 0.0]


def replace_layers(cfg, layers):
    return MlpConfig(**{**cfg.to_dict(), "layers": layers})


def test_single_arm_data_rejected():
    x = np.zeros((10, 2))
    with pytest.raises(ValueError, match="both treatment arms"):
        train_cfr(Dataset(x, np.ones(10), np.zeros(10)), FAST)


def test_loss_mask_partition_sizes():
    rng = np.random.default_rng(0)
    assert (loss_mask_partition(100, 4, rng) > 0).sum(axis=0).tolist() == [25] * 4
    assert sorted((loss_mask_partition(103, 4, rng) > 0).sum(axis=0).tolist()) == [25, 26, 26, 26]
    with pytest.raises(ValueError):
        loss_mask_partition(3, 4, rng)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), layers=st.integers(1, 14), seed=st.integers(0, 1000))
def test_loss_mask_rows_have_one_owner(n, layers, seed):
    if n < layers:
        return
    mask = loss_mask_partition(n, layers, np.random.default_rng(seed))
    assert np.all((mask > 0).sum(axis=1) == 1)
    np.testing.assert_allclose(mask.mean(axis=1), 1.0)
    counts = (mask > 0).sum(axis=0)
    assert counts.max() - counts.min() <= 1


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_search_space_samples_in_range(seed):
    space = SearchSpace()
    cfg = space.sample(np.random.default_rng(seed), seed)
    assert 4 <= cfg.layers <= 14 and 5 <= cfg.neurons_per_layer <= 200
    assert 0.1 <= cfg.dropout_prob <= 0.5 and 1e-5 <= cfg.l2_penalty <= 1e-3
    assert 1e-5 <= cfg.learning_rate <= 1e-2 and 10 <= cfg.batch_size <= 64
    assert 2000 <= cfg.iterations <= 10000


def test_collapsed_space_samples_the_point():
    space = SearchSpace(layers=(3, 3), neurons_per_layer=(7, 7), dropout_prob=(0.2, 0.2), l2_penalty=(1e-4, 1e-4),
                        learning_rate=(1e-3, 1e-3), batch_size=(16, 16), iterations=(50, 50))
    cfg = space.sample(np.random.default_rng(0), 9)
    assert cfg == MlpConfig(3, 7, 0.2, 1e-4, 1e-3, 16, 50, 9)
    assert SearchSpace.from_dict(space.to_dict()) == space


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_search_single_trial_and_divergent_candidate():
    d = generate_lf("v1", 300, seed=5)
    result = hyperparameter_search(d, train_cfr, trials=1, seed=0, space=SearchSpace(
        layers=(2, 2), neurons_per_layer=(8, 8), iterations=(50, 50)))
    assert len(result.scores) == 1
    bad = MlpConfig(layers=2, neurons_per_layer=8, learning_rate=1e12, iterations=200)
    good = replace_layers(FAST, 2)
    result = hyperparameter_search(d, train_cfr, candidates=[bad, good], seed=0)
    assert result.best.learning_rate == good.learning_rate


def test_search_fails_when_every_trial_fails():
    d = generate_lf("v1", 100, seed=6)

    def broken(data, cfg):
        raise TrainingDiverged(0, float("nan"))

    with pytest.raises(RuntimeError, match="all 2 search trials failed"):
        hyperparameter_search(d, broken, trials=2, seed=0)


def test_network_save_load_round_trip(tmp_path):
    d = generate_lf("v1", 200, seed=7)
    model = train_multinet(d, FAST, clever=np.full(200, 2.0))
    path = tmp_path / "net.json"
    save_network(model.net, path)
    back = load_network(path)
    np.testing.assert_allclose(back.head_predictions(d.covariates, 1), model.net.head_predictions(d.covariates, 1),
                               rtol=1e-6)
    assert back.treg and back.gamma.shape == (2,)


@pytest.mark.slow
def test_multinet_fits_lf_outcome():
    d = generate_lf("v1", 5000, seed=8)
    cfg = MlpConfig(layers=4, neurons_per_layer=50, iterations=2000, seed=1)
    model = train_multinet(d, cfg)
    p1, p0 = model.predict(d.covariates, 1), model.predict(d.covariates, 0)
    assert np.sqrt(np.mean((p1 - d.potential_y1) ** 2)) < 0.12
    assert np.sqrt(np.mean((p0 - d.potential_y0) ** 2)) < 0.12
    # plug-in error has a spread of about .03 across datasets
    assert abs(float(np.mean(p1 - p0)) - 0.1929) < 0.1
