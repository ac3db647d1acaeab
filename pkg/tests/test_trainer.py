import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_softmax, softmax

from jointdp import autodiff as ad
from jointdp.autodiff import GradientTape
from jointdp.predictor import PredictorConfig, predict_label, predictor_forward
from jointdp.tree import TreeConfig, sdt_forward, sdt_penalty
from jointdp.trainer import (
    LossWeights,
    TrainingConfig,
    compute_losses,
    ema_update,
    init_joint,
    merge_params,
    split_params,
    train_joint,
)

from conftest import separable_dataset

PCFG = PredictorConfig(filters=4, hidden_width=6)
TCFG = TreeConfig(depth=2)


def _oracle(params, X, y, w, tcfg):
    """Loss terms recomputed from the plain forward passes."""
    f, g, d = split_params(params)
    fo = predictor_forward(f, X)
    go = sdt_forward(g, X)
    q = softmax(np.log(go.distribution) / w.temperature, axis=1)
    log_p = log_softmax(fo.logits / w.temperature, axis=1)
    adapted = go.inner_activations @ d["weight"] + d["bias"]
    terms = {
        "l_pred_f": np.sum((fo.probabilities[:, 1] - y) ** 2),
        "l_pred_g": np.sum((go.distribution[:, 1] - y) ** 2),
        "l_of": -np.sum(q * log_p),
        "l_fef": np.sum((adapted - fo.features) ** 2),
        "penalty": sdt_penalty(g, X, tcfg.penalty_strength, tcfg.penalty_decay),
    }
    terms["total"] = (w.alpha * terms["l_pred_f"] + w.beta * terms["l_pred_g"] + w.lam * terms["l_of"]
                      + w.gamma * terms["l_fef"] + terms["penalty"])
    return terms


def _batch(seed, n=6, d=5):
    rng = np.random.default_rng(seed)
    return rng.random((n, d)), rng.integers(0, 2, n)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 200.0))
def test_losses_match_oracle(seed, temperature):
    X, y = _batch(seed)
    params = init_joint(PCFG, TCFG, 5, seed)
    w = LossWeights(temperature=temperature)
    parts = compute_losses(params, X, y, w, TCFG)[0]
    want = _oracle(params, X, y, w, TCFG)
    for name, value in want.items():
        assert getattr(parts, name) == pytest.approx(value, rel=1e-10, abs=1e-12), name
    assert all(getattr(parts, k) >= 0 for k in ("l_pred_f", "l_pred_g", "l_of", "l_fef", "penalty"))


def test_penalty_can_be_left_out():
    X, y = _batch(0)
    params = init_joint(PCFG, TCFG, 5, 0)
    with_pen = compute_losses(params, X, y, LossWeights(), TCFG)[0]
    without = compute_losses(params, X, y, LossWeights(), TCFG, include_penalty=False)[0]
    assert without.penalty == 0.0
    assert without.total == pytest.approx(with_pen.total - with_pen.penalty, rel=1e-12)


def test_matching_adapter_zeroes_feature_term():
    X, y = _batch(1, n=1)
    params = init_joint(PCFG, TCFG, 5, 1)
    f, g, d = split_params(params)
    d = {"weight": np.zeros_like(d["weight"]), "bias": predictor_forward(f, X).features[0]}
    assert compute_losses(merge_params(f, g, d), X, y, LossWeights(), TCFG)[0].l_fef == pytest.approx(0, abs=1e-24)


def test_output_term_is_cross_entropy_of_interpreter_against_predictor():
    # with T = 1 the term reduces to -sum q log p, which is the entropy of q when p == q
    X, y = _batch(2, n=3)
    params = init_joint(PCFG, TCFG, 5, 2)
    w = LossWeights(temperature=1.0)
    parts = compute_losses(params, X, y, w, TCFG)[0]
    q = sdt_forward(split_params(params)[1], X).distribution
    entropy = -np.sum(q * np.log(q))
    assert parts.l_of >= entropy - 1e-12


def test_zero_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(alpha=0.0)
    with pytest.raises(ValueError):
        LossWeights(temperature=0.0)


def test_gradient_of_prediction_term_reaches_only_predictor_when_others_vanish():
    X, y = _batch(3)
    params = init_joint(PCFG, TCFG, 5, 3)
    tiny = 1e-300
    w = LossWeights(alpha=1.0, beta=tiny, lam=tiny, gamma=tiny)
    tape = GradientTape()
    _, total, tensors = compute_losses(params, X, y, w, TreeConfig(depth=2, penalty_strength=0.0), tape=tape)
    grads = ad.backprop(tape, total, tensors)
    assert any(np.abs(grads[k]).max() > 0 for k in grads if k.startswith("f."))
    assert all(np.abs(grads[k]).max() < 1e-250 for k in grads if not k.startswith("f."))


def test_compute_losses_needs_rows():
    with pytest.raises(ValueError):
        compute_losses(init_joint(PCFG, TCFG, 5, 0), np.zeros((0, 5)), [], LossWeights(), TCFG)


# ---------------------------------------------------------------- EMA


def test_ema_first_value_passes_through():
    assert ema_update(None, 3.0, 1000) == 3.0


def test_ema_window_one_tracks_latest():
    assert ema_update(5.0, 2.0, 1) == 2.0


def test_ema_sequence():
    # window 3 gives k = 0.5: 0 -> 1 gives 0.5 -> 3 gives 1.75
    v = None
    for x in (0.0, 1.0, 3.0):
        v = ema_update(v, x, 3)
    assert v == 1.75
    assert ema_update(0.0, 1.0, 3) == 0.5


def test_ema_window_validated():
    with pytest.raises(ValueError):
        ema_update(1.0, 1.0, 0)


# ---------------------------------------------------------------- training loop


def test_zero_epochs_returns_initial_params():
    ds = separable_dataset(0, n=40, d=5)
    f, g, d, hist = train_joint(ds.X, ds.y, ds.X, ds.y, predictor_config=PCFG, tree_config=TCFG,
                                config=TrainingConfig(max_epochs=0))
    init = init_joint(PCFG, TCFG, 5, 0)
    assert len(hist) == 0 and hist.stop_reason == "max_epochs"
    got = merge_params(f, g, d)
    assert all(np.array_equal(got[k], init[k]) for k in init)


def test_training_is_deterministic():
    ds = separable_dataset(1, n=60, d=5)
    cfg = TrainingConfig(learning_rate=1e-2, max_epochs=3, seed=4)
    runs = [train_joint(ds.X, ds.y, ds.X, ds.y, predictor_config=PCFG, tree_config=TCFG, config=cfg)
            for _ in range(2)]
    a, b = (merge_params(*r[:3]) for r in runs)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert runs[0][3].to_csv() == runs[1][3].to_csv()


def test_empty_splits_rejected():
    with pytest.raises(ValueError):
        train_joint(np.zeros((0, 3)), [], np.zeros((2, 3)), [0, 1])


def test_history_csv_layout():
    ds = separable_dataset(2, n=40, d=5)
    hist = train_joint(ds.X, ds.y, ds.X, ds.y, predictor_config=PCFG, tree_config=TCFG,
                       config=TrainingConfig(learning_rate=1e-2, max_epochs=2))[3]
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,ema_loss,val_loss,val_f_measure"
    assert len(lines) == 3 and hist.best_epoch in (1, 2)


def test_early_stopping_returns_best_epoch():
    ds = separable_dataset(3, n=40, d=5)
    hist = train_joint(ds.X, ds.y, ds.X, ds.y, predictor_config=PCFG, tree_config=TCFG,
                       config=TrainingConfig(learning_rate=1e-2, max_epochs=60, early_stop_patience=2))[3]
    vals = [r.val_loss for r in hist.epochs]
    assert hist.best_epoch == int(np.argmin(vals)) + 1
    if hist.stop_reason == "early_stopping":
        assert len(vals) - hist.best_epoch >= 2


def test_toy_problem_is_learned():
    ds = separable_dataset(0)
    Xs = (ds.X - ds.X.min(0)) / (ds.X.max(0) - ds.X.min(0))
    f, g, _, hist = train_joint(Xs, ds.y, Xs, ds.y, config=TrainingConfig(learning_rate=1e-2, seed=0))
    f_acc = np.mean(predict_label(predictor_forward(f, Xs).probabilities) == ds.y)
    g_acc = np.mean((sdt_forward(g, Xs).output >= 0.5) == ds.y)
    assert f_acc >= 0.95 and g_acc >= 0.95
    assert hist.epochs[-1].ema_loss <= hist.epochs[0].ema_loss
