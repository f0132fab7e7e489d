import numpy as np
import pytest
from sklearn.ensemble import RandomForestClassifier

from ramanfuse.errors import DataError, TrainingError
from ramanfuse.models import Adam, Mlp, MlpSpec, TrainConfig, bce_loss, default_model, train
from ramanfuse.models.forest import ForestConfig, ForestModel, train_forest
from ramanfuse.models.fusion import build_early_fusion, single_modality_model, vanilla_model
from ramanfuse.models.nn import bce_grad, sigmoid
from ramanfuse.models.serialize import load_forest, load_fusion, read_tensors, save_forest, save_fusion, write_tensors

from oracles import SMALL, numeric_gradient_error

def toy(n=200, seed=0, d_s=8, d_m=4):
    rng = np.random.default_rng(seed)
    xs, xm = rng.standard_normal((n, d_s)), rng.standard_normal((n, d_m))
    y = ((xs[:, 0] + xm[:, 0] + 0.3 * rng.standard_normal(n)) > 0).astype(float)
    return xs, xm, y


# --- primitives --------------------------------------------------------------------


def test_sigmoid_stable_and_symmetric():
    z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s)) and s[2] == 0.5
    np.testing.assert_allclose(s + sigmoid(-z), 1.0, atol=1e-15)


def test_bce_against_formula_and_clamp():
    y, p = np.array([1.0, 0.0, 1.0]), np.array([0.9, 0.2, 0.6])
    ref = -np.mean([np.log(0.9), np.log(0.8), np.log(0.6)])
    assert bce_loss(y, p) == pytest.approx(ref, rel=1e-14)
    assert np.isfinite(bce_loss([1.0], [0.0]))
    assert bce_loss([1.0], [0.0]) == pytest.approx(-np.log(1e-7))
    g = bce_grad(np.array([[1.0], [0.0]]), np.array([[0.0], [0.5]]))
    assert g[0, 0] == 0.0 and g[1, 0] == pytest.approx(0.5 / 0.25 / 2)
    with pytest.raises(DataError):
        bce_loss([1, 0], [0.5])


def test_adam_matches_hand_computation():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -0.1])]
    opt = Adam(lr=0.1)
    opt.step(p, g)
    # first step: m_hat = g, v_hat = g^2, update = lr * sign(g) (up to eps)
    np.testing.assert_allclose(p[0], [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)
    opt.step(p, g)
    m = 0.9 * 0.1 * g[0] + 0.1 * g[0]
    v = 0.999 * 0.001 * g[0] ** 2 + 0.001 * g[0] ** 2
    step = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p[0], np.array([0.9, -1.9]) - step, atol=1e-12)


def test_mlp_spec_validation():
    with pytest.raises(DataError):
        MlpSpec((4, 2), "sigmoid")
    with pytest.raises(DataError):
        MlpSpec((4, 1), "sigmoid", (0.1, 0.2))
    with pytest.raises(DataError):
        MlpSpec((4, 1), "tanh")


def test_mlp_input_gradient():
    rng = np.random.default_rng(0)
    m = Mlp(MlpSpec((5, 3), "linear"), 4, rng)
    x = rng.standard_normal((3, 4))
    out, cache = m.forward(x)
    g_out = rng.standard_normal(out.shape)
    _, gx = m.backward(cache, g_out)
    h = 1e-6
    for i in np.ndindex(x.shape):
        xp, xn = x.copy(), x.copy()
        xp[i] += h
        xn[i] -= h
        num = np.sum((m.predict(xp) - m.predict(xn)) * g_out) / (2 * h)
        assert gx[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_dropout_inverted_scaling():
    m = Mlp(MlpSpec((2000, 1), "sigmoid", (0.5,)), 3, np.random.default_rng(0))
    x = np.ones((1, 3))
    _, cache = m.forward(x, train=True, rng=np.random.default_rng(1))
    _, _, out, mask = cache[0]
    full = m.forward(x)[1][0][2]
    assert set(np.unique(mask)) <= {0.0, 2.0}
    assert out.mean() == pytest.approx(full.mean(), rel=0.1)
    with pytest.raises(DataError):
        m.forward(x, train=True)


# --- fusion ----------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["early", "joint", "late"])
def test_fusion_gradient_check(variant):
    rng = np.random.default_rng(1)
    xs, xm = rng.standard_normal((5, 12)), rng.standard_normal((5, 7))
    y = np.array([1, 0, 1, 1, 0.0])[:, None]
    m = default_model(variant, 12, 7, seed=3, hidden=SMALL)
    assert numeric_gradient_error(m, xs, xm, y) < 1e-4


def test_single_modality_gradient_check():
    rng = np.random.default_rng(2)
    xs, xm = rng.standard_normal((5, 6)), rng.standard_normal((5, 3))
    y = np.array([1, 0, 1, 0, 0.0])[:, None]
    for m in (vanilla_model(6, 4, 1), single_modality_model("meta", 3, 1, 0.0, (4,))):
        assert numeric_gradient_error(m, xs, xm, y) < 1e-4


def test_early_fusion_concatenation():
    a, b = np.ones((2, 3)), np.zeros((2, 2))
    np.testing.assert_array_equal(build_early_fusion(a, b), [[1, 1, 1, 0, 0]] * 2)
    with pytest.raises(DataError):
        build_early_fusion(a, np.zeros((3, 2)))


def test_fusion_shape_errors():
    m = default_model("joint", 4, 3, hidden=SMALL)
    with pytest.raises(DataError):
        m.predict_proba(np.zeros((2, 5)), np.zeros((2, 3)))
    with pytest.raises(DataError):
        m.predict_proba(np.zeros((2, 4)), np.zeros((3, 3)))


@pytest.mark.parametrize("variant", ["early", "joint", "late"])
def test_training_learns_and_is_deterministic(variant):
    xs, xm, y = toy(600)
    tr, va, te = np.arange(0, 420), np.arange(420, 500), np.arange(500, 600)
    cfg = TrainConfig(lr=3e-3, max_epochs=200, patience=20, seed=4)
    m1 = train(default_model(variant, 8, 4, seed=1, dropout=0.0, hidden=SMALL), xs, xm, y, tr, va, cfg)
    m2 = train(default_model(variant, 8, 4, seed=1, dropout=0.0, hidden=SMALL), xs, xm, y, tr, va, cfg)
    p = m1.predict_proba(xs[te], xm[te])
    np.testing.assert_array_equal(p, m2.predict_proba(xs[te], xm[te]))
    from ramanfuse.models import roc_auc
    assert roc_auc(y[te], p) > 0.9 and np.mean((p >= 0.5) == y[te]) > 0.8
    assert m1.training_trace and {"epoch", "loss", "val_loss", "val_accuracy"} <= set(m1.training_trace[0])


def test_early_stopping_restores_best_epoch():
    xs, xm, y = toy(seed=3)
    cfg = TrainConfig(lr=5e-3, max_epochs=400, patience=5, seed=0)
    m = train(default_model("early", 8, 4, seed=0, hidden=SMALL), xs, xm, y, np.arange(150), np.arange(150, 200), cfg)
    trace = m.training_trace
    assert len(trace) < 400
    best = max(t["val_accuracy"] for t in trace)
    p = m.predict_proba(xs[150:], xm[150:])
    assert np.mean((p >= 0.5) == y[150:]) == pytest.approx(best)


def test_training_rejects_single_class():
    xs, xm, y = toy(50)
    y[:] = 1
    with pytest.raises(TrainingError):
        train(default_model("early", 8, 4, hidden=SMALL), xs, xm, y, np.arange(40), np.arange(40, 50))


def test_training_nan_inputs_raise_training_error():
    xs, xm, y = toy(60)
    xs[3, 0] = np.nan
    with pytest.raises(TrainingError):
        train(default_model("early", 8, 4, hidden=SMALL), xs, xm, y, np.arange(50), np.arange(50, 60),
              TrainConfig(max_epochs=5))


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(lr=0)
    with pytest.raises(DataError):
        TrainConfig(late_stack_folds=1)


# --- forest -----------------------------------------------------------------------


def test_forest_traversal_matches_sklearn():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((120, 15))
    y = (X[:, 0] - X[:, 3] > 0).astype(int)
    cfg = ForestConfig(n_trees=25, seed=2)
    est = RandomForestClassifier(n_estimators=25, max_features="sqrt", min_samples_leaf=2, random_state=2).fit(X, y)
    fm = ForestModel.from_estimator(cfg, est)
    Xt = rng.standard_normal((60, 15))
    np.testing.assert_allclose(fm.predict_proba(Xt), est.predict_proba(Xt)[:, 1], atol=1e-12)
    model = train_forest(X, y, None, cfg)
    np.testing.assert_allclose(model.predict_proba(Xt), fm.predict_proba(Xt), atol=1e-12)


def test_forest_uses_train_rows_only_and_single_class_error():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 5))
    y = np.r_[np.zeros(20), np.ones(20)].astype(int)
    with pytest.raises(TrainingError):
        train_forest(X, y, np.arange(20))
    m = train_forest(X, y, np.arange(10, 30), ForestConfig(n_trees=5))
    assert m.n_trees == 5 and m.n_features == 5


# --- serialization -------------------------------------------------------------------


def test_tensor_container_roundtrip(tmp_path):
    t = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.array([1, -2, 3], dtype=np.int64)), ("c", np.zeros((0,)))]
    write_tensors(tmp_path / "x.csx", t)
    back = read_tensors(tmp_path / "x.csx")
    assert list(back) == ["a", "b", "c"]
    for name, arr in t:
        np.testing.assert_array_equal(back[name], arr)
        assert back[name].dtype == arr.dtype
    raw = (tmp_path / "x.csx").read_bytes()
    assert raw[:4] == b"CSX1"
    (tmp_path / "bad.csx").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        read_tensors(tmp_path / "bad.csx")


@pytest.mark.parametrize("variant", ["early", "joint", "late"])
def test_fusion_save_load(tmp_path, variant):
    m = default_model(variant, 6, 3, seed=5, hidden=SMALL)
    save_fusion(m, tmp_path / "m.csx", {"task": "t"})
    m2, meta = load_fusion(tmp_path / "m.csx")
    assert meta["task"] == "t"
    xs, xm = np.random.default_rng(0).standard_normal((4, 6)), np.random.default_rng(1).standard_normal((4, 3))
    np.testing.assert_array_equal(m.predict_proba(xs, xm), m2.predict_proba(xs, xm))


def test_forest_save_load(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 4))
    y = (X[:, 1] > 0).astype(int)
    m = train_forest(X, y, None, ForestConfig(n_trees=7))
    save_forest(m, tmp_path / "f.csx")
    m2, _ = load_forest(tmp_path / "f.csx")
    np.testing.assert_array_equal(m.predict_proba(X), m2.predict_proba(X))
