import numpy as np
import pytest

from iwlab import datagen, nets, optim
from iwlab.errors import ContractError
from iwlab.grad import Tape, _sigmoid
from iwlab.optim import ClassWeights, OptState, TrainConfig


def bce_per_example(z, y):
    return np.logaddexp(0.0, z) - y * z


def loss_value(logits, labels, weights, sample_weights=None):
    tape = Tape(grad_enabled=False)
    z = tape.leaf(logits)
    out = optim.weighted_bce(tape, z, labels, weights, sample_weights)
    return float(out.data)


# -- weighted_bce ---------------------------------------------------------------

def test_identity_weights_equal_unweighted_bce():
    rng = np.random.default_rng(0)
    z = rng.standard_normal(32)
    y = rng.integers(0, 2, 32)
    got = loss_value(z, y, ClassWeights(1, 1))
    assert got == float(np.mean(bce_per_example(z, y.astype(float))))


def test_single_positive_at_logit_zero():
    got = loss_value(np.zeros(1), np.ones(1, dtype=int), ClassWeights(10, 1))
    assert got == pytest.approx(10 * np.log(2), rel=1e-15)


def test_split_and_recombine_oracle():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(64)
    y = rng.integers(0, 2, 64)
    w = ClassWeights(3.5, 0.25)
    got = loss_value(z, y, w)
    pos, neg = y == 1, y == 0
    expected = (w.w_pos * np.mean(bce_per_example(z[pos], 1.0)) * pos.sum() / 64
                + w.w_neg * np.mean(bce_per_example(z[neg], 0.0)) * neg.sum() / 64)
    assert abs(got - expected) < 1e-12


def test_loss_positive_unless_perfectly_confident():
    rng = np.random.default_rng(2)
    z = rng.standard_normal(16) * 3
    y = rng.integers(0, 2, 16)
    assert loss_value(z, y, ClassWeights(2, 5)) > 0


def test_sample_weights_multiply_class_weights():
    z = np.array([0.3, -0.2])
    y = np.array([1, 0])
    sw = np.array([2.0, 4.0])
    got = loss_value(z, y, ClassWeights(3, 5), sample_weights=sw)
    expected = np.mean(np.array([3 * 2, 5 * 4]) * bce_per_example(z, y.astype(float)))
    assert got == pytest.approx(expected, rel=1e-15)


def test_weight_scale_covariance_at_1e12():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(16)
    y = rng.integers(0, 2, 16)
    base = loss_value(z, y, ClassWeights(1.5, 4.0))
    scaled = loss_value(z, y, ClassWeights(3 * 1.5, 3 * 4.0))
    assert abs(scaled - 3 * base) < 1e-12


def test_class_weights_must_be_positive():
    with pytest.raises(ContractError):
        ClassWeights(0.0, 1.0)
    with pytest.raises(ContractError):
        ClassWeights(1.0, float("inf"))


# -- weights_from_ratio -----------------------------------------------------------

def test_ratio_10_to_1_upweights_negatives_by_10():
    w = optim.weights_from_ratio(10, 1)
    assert (w.w_pos, w.w_neg) == (1.0, 10.0)


def test_ratio_balanced():
    w = optim.weights_from_ratio(1, 1)
    assert (w.w_pos, w.w_neg) == (1.0, 1.0)


def test_ratio_1_to_16_upweights_positives():
    w = optim.weights_from_ratio(1, 16)
    assert (w.w_pos, w.w_neg) == (16.0, 1.0)


def test_ratio_rejects_nonpositive():
    with pytest.raises(ContractError):
        optim.weights_from_ratio(0, 4)


# -- lr_from_data ------------------------------------------------------------------

def test_lr_diagonal_singular_values():
    lr = optim.lr_from_data(np.diag([3.0, 4.0]))
    assert lr == pytest.approx(0.01 / 4.0, rel=1e-8)


def test_lr_power_iteration_matches_closed_form_2x2():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((50, 2)) * np.array([1.5, 0.3]) + np.array([2.0, -1.0])
    gram = x.T @ x
    a, b, c = gram[0, 0], gram[0, 1], gram[1, 1]
    lam_max = (a + c) / 2 + np.sqrt(((a - c) / 2) ** 2 + b ** 2)
    expected = 0.01 / np.sqrt(lam_max)
    assert optim.lr_from_data(x) == pytest.approx(expected, rel=1e-6)


def test_lr_on_default_separable_set_is_order_1e_minus_4():
    ds = datagen.gen_separable(datagen.SeparablePairSpec(seed=0))
    lr = optim.lr_from_data(ds.features)
    assert 10 ** -4.5 < lr < 10 ** -3.5


def test_lr_rejects_all_zero_matrix():
    with pytest.raises(ContractError, match="sigma_max"):
        optim.lr_from_data(np.zeros((4, 2)))


# -- sgd_step ---------------------------------------------------------------------

def _toy_model():
    model = nets.build_lr(2, init_seed=5)
    return model, OptState(model)


def _set_grads(model, arrays):
    for p, g in zip(model.parameters, arrays):
        p.grad = np.asarray(g, dtype=np.float64)


def test_plain_sgd_step():
    model, state = _toy_model()
    theta0 = [p.data.copy() for p in model.parameters]
    grads = [np.full_like(p.data, 0.5) for p in model.parameters]
    _set_grads(model, grads)
    optim.sgd_step(model, state, TrainConfig(learning_rate=0.1))
    for p, t0, g in zip(model.parameters, theta0, grads):
        assert np.allclose(p.data, t0 - 0.1 * g, atol=0, rtol=0)


def test_pure_decay_shrinks_parameters_monotonically():
    model, state = _toy_model()
    config = TrainConfig(learning_rate=0.1, l2_lambda=0.5)
    norms = [np.sqrt(sum(np.sum(p.data ** 2) for p in model.parameters))]
    for _ in range(20):
        _set_grads(model, [np.zeros_like(p.data) for p in model.parameters])
        optim.sgd_step(model, state, config)
        norms.append(np.sqrt(sum(np.sum(p.data ** 2) for p in model.parameters)))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_two_momentum_steps_on_constant_gradient():
    model, state = _toy_model()
    theta0 = [p.data.copy() for p in model.parameters]
    g = [np.full_like(p.data, 2.0) for p in model.parameters]
    config = TrainConfig(learning_rate=0.01, momentum=0.9)
    for _ in range(2):
        _set_grads(model, g)
        optim.sgd_step(model, state, config)
    for p, t0, gi in zip(model.parameters, theta0, g):
        assert np.allclose(p.data, t0 - 0.01 * gi * (1 + 1.9), rtol=1e-12)


def test_missing_gradient_rejected():
    model, state = _toy_model()
    with pytest.raises(ContractError, match="gradient"):
        optim.sgd_step(model, state, TrainConfig(learning_rate=0.1))


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.1, momentum=1.0)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.1, checkpoint_schedule=[1, 5, 5])


# -- trajectory invariants -----------------------------------------------------------

def _train_steps_engine(weights, lr, steps=50, seed=3):
    """Mini training loop through the tape engine."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((64, 2))
    y = rng.integers(0, 2, 64)
    model = nets.build_lr(2, init_seed=11)
    state = OptState(model)
    config = TrainConfig(learning_rate=lr)
    order = np.random.default_rng(7).permutation(64)
    for t in range(steps):
        idx = order[(t * 8) % 64:(t * 8) % 64 + 8]
        z, tape = nets.forward(model, x[idx], mode="train")
        loss = optim.weighted_bce(tape, z, y[idx], weights)
        tape.backward(loss)
        optim.sgd_step(model, state, config)
        tape.zero_grads()
    return [p.data.copy() for p in model.parameters]


def test_identity_weights_match_independent_unweighted_implementation():
    """Hand-rolled unweighted logistic regression (closed-form gradients,
    no weighting code anywhere) must produce the bitwise-same trajectory
    as the engine with ClassWeights(1, 1)."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal((64, 2))
    y = rng.integers(0, 2, 64)
    w_engine = _train_steps_engine(ClassWeights(1, 1), lr=0.05)

    model = nets.build_lr(2, init_seed=11)
    w = model.parameters[0].data.copy()
    b = model.parameters[1].data.copy()
    order = np.random.default_rng(7).permutation(64)
    for t in range(50):
        idx = order[(t * 8) % 64:(t * 8) % 64 + 8]
        xb, yb = x[idx], y[idx].astype(np.float64)
        z = (xb @ w + b).reshape(-1)
        dz = (_sigmoid(z) - yb) / len(yb)
        w = w - 0.05 * (xb.T @ dz).reshape(w.shape)
        b = b - 0.05 * np.array([dz.sum()])
    assert w.tobytes() == w_engine[0].tobytes()
    assert b.tobytes() == w_engine[1].tobytes()


def test_doubled_weights_equal_doubled_learning_rate_exactly():
    # c = 2 keeps every float multiplication exact, so the equivalence of
    # (c*w, eta) and (w, c*eta) for plain SGD holds bitwise
    a = _train_steps_engine(ClassWeights(2.0, 6.0), lr=0.05)
    b = _train_steps_engine(ClassWeights(1.0, 3.0), lr=0.10)
    for pa, pb in zip(a, b):
        assert pa.tobytes() == pb.tobytes()
