import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.dummy import DummyRegressor
from sklearn.linear_model import Ridge
from sklearn.neighbors import KNeighborsRegressor

from utmos.errors import ConfigurationError
from utmos.stacking import (
    EstimatorLearner,
    FixedPredictionLearner,
    StackingPlan,
    StageScores,
    exhaustive_select,
    fit_stack,
    fold_assignment,
    greedy_select_strong,
    oof_predictions,
    stack_predict,
)

TINY = {"alpha": 1e-10}


def linear_problem(n=60, d=3, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"u{i:03d}" for i in range(n)]
    X = rng.normal(size=(n, d))
    y = 3.0 + 0.5 * X[:, 0] - 0.3 * X[:, 1] + noise * rng.normal(size=n)
    return ids, dict(zip(ids, X)), dict(zip(ids, y))


def test_fold_assignment():
    folds = fold_assignment(23, 5, seed=1)
    assert sorted(np.bincount(folds).tolist()) == [4, 4, 5, 5, 5]
    assert np.array_equal(folds, fold_assignment(23, 5, seed=1))
    assert not np.array_equal(folds, fold_assignment(23, 5, seed=2))
    with pytest.raises(ConfigurationError):
        fold_assignment(3, 5, 0)
    with pytest.raises(ConfigurationError):
        fold_assignment(10, 1, 0)


def test_constant_learner_oof_is_mean_of_other_folds():
    ids, feats, targets = linear_problem(25)
    learner = EstimatorLearner("mean", DummyRegressor(), feats)
    folds = fold_assignment(25, 5, seed=0)
    oof = oof_predictions(learner, ids, targets, folds=folds)
    y = np.array([targets[u] for u in ids])
    for i in range(25):
        assert oof[i] == pytest.approx(y[folds != folds[i]].mean(), abs=1e-12)


def test_leave_one_out_nearest_neighbour_on_duplicates():
    # every utterance has an exact twin with the same features and target
    rng = np.random.default_rng(3)
    base = rng.normal(size=(10, 2))
    ids = [f"u{i}" for i in range(20)]
    feats = {u: base[i % 10] for i, u in enumerate(ids)}
    targets = {u: float(1 + i % 10 * 0.4) for i, u in enumerate(ids)}
    learner = EstimatorLearner("1nn", KNeighborsRegressor(n_neighbors=1), feats)
    oof = oof_predictions(learner, ids, targets, n_folds=20, seed=0)
    assert oof.tolist() == [targets[u] for u in ids]


def test_oof_has_no_leakage():
    ids, feats, targets = linear_problem(30)
    learner = EstimatorLearner("ridge", Ridge(alpha=1.0), feats)
    folds = fold_assignment(30, 3, seed=4)
    oof = oof_predictions(learner, ids, targets, folds=folds)
    X = np.vstack([feats[u] for u in ids])
    y = np.array([targets[u] for u in ids])
    for k in range(3):
        model = Ridge(alpha=1.0).fit(X[folds != k], y[folds != k])
        np.testing.assert_allclose(oof[folds == k], model.predict(X[folds == k]), atol=1e-12)
    # perturbing a held-out target must not move its own prediction
    moved = dict(targets)
    moved[ids[0]] += 100.0
    again = oof_predictions(learner, ids, moved, folds=folds)
    assert again[0] == oof[0]


def test_degenerate_identity():
    ids, _, targets = linear_problem(40, noise=0.0)
    test_ids = [f"t{i}" for i in range(10)]
    test_vals = np.linspace(1.2, 4.8, 10)
    preds = {**targets, **dict(zip(test_ids, test_vals))}
    plan = StackingPlan([FixedPredictionLearner("oracle", preds)], n_folds=5, stage2_methods=["ridge"],
                        stage2_hyperparams={"ridge": TINY}, stage3_hyperparams=TINY)
    fitted = fit_stack(plan, ids, targets)
    out = stack_predict(fitted, test_ids)
    np.testing.assert_allclose([out[u] for u in test_ids], test_vals, atol=1e-6)


def test_identical_learners_give_their_common_prediction():
    ids, _, targets = linear_problem(40, noise=0.0)
    learners = [FixedPredictionLearner(f"copy{i}", targets) for i in range(3)]
    plan = StackingPlan(learners, n_folds=4, stage2_methods=["ridge"],
                        stage2_hyperparams={"ridge": TINY}, stage3_hyperparams=TINY)
    out = stack_predict(fit_stack(plan, ids, targets), ids)
    np.testing.assert_allclose([out[u] for u in ids], [targets[u] for u in ids], atol=1e-6)


def test_noise_column_does_not_hurt_much():
    ids, feats, targets = linear_problem(120, noise=0.2, seed=5)
    rng = np.random.default_rng(9)
    noise = {u: np.array([v]) for u, v in zip(ids, rng.normal(size=len(ids)))}
    good = EstimatorLearner("good", Ridge(alpha=1.0), feats)
    junk = EstimatorLearner("junk", Ridge(alpha=1.0), noise)
    train, test = ids[:90], ids[90:]
    y_test = np.array([targets[u] for u in test])

    def test_mse(learners):
        plan = StackingPlan(learners, n_folds=5, stage2_methods=["ridge", "linear-svr"])
        out = stack_predict(fit_stack(plan, train, targets), test)
        return np.mean((np.array([out[u] for u in test]) - y_test) ** 2)

    assert test_mse([good, junk]) <= 1.1 * test_mse([good]) + 1e-3


def test_output_clamped_to_score_range():
    ids = [f"u{i}" for i in range(20)]
    targets = {u: 1.0 + 4.0 * i / 19 for i, u in enumerate(ids)}
    preds = {**targets, "hi": 9.0, "lo": -3.0}
    plan = StackingPlan([FixedPredictionLearner("x", preds)], n_folds=4, stage2_methods=["ridge"],
                        stage2_hyperparams={"ridge": TINY}, stage3_hyperparams=TINY)
    out = stack_predict(fit_stack(plan, ids, targets), ["hi", "lo"])
    assert out == {"hi": 5.0, "lo": 1.0}


def test_stage_scores_shapes_and_round_trip(tmp_path):
    ids, feats, targets = linear_problem(20)
    learners = [EstimatorLearner("a", Ridge(), feats), EstimatorLearner("b", DummyRegressor(), feats)]
    fitted = fit_stack(StackingPlan(learners, n_folds=4, stage2_methods=["ridge", "kernel-svr"]), ids, targets)
    assert fitted.stage1_scores.matrix.shape == (20, 2)
    assert fitted.stage2_scores.columns == ["meta:ridge", "meta:kernel-svr"]
    fitted.stage1_scores.to_csv(tmp_path / "s1.csv")
    back = StageScores.from_csv(tmp_path / "s1.csv")
    assert back.utterance_ids == ids and back.columns == ["a", "b"]
    assert back.matrix.tobytes() == fitted.stage1_scores.matrix.tobytes()
    with pytest.raises(ValueError):
        StageScores(["a"], ["x"], [[float("nan")]])
    with pytest.raises(ValueError):
        StageScores(["a", "b"], ["x"], [[1.0]])


def test_relabeling_utterances_changes_nothing():
    ids, feats, targets = linear_problem(30)
    renamed = {u: f"z{u[::-1]}" for u in ids}
    plan_a = StackingPlan([EstimatorLearner("r", Ridge(), feats)], n_folds=3, stage2_methods=["ridge"])
    feats_b = {renamed[u]: v for u, v in feats.items()}
    plan_b = StackingPlan([EstimatorLearner("r", Ridge(), feats_b)], n_folds=3, stage2_methods=["ridge"])
    a = stack_predict(fit_stack(plan_a, ids, targets), ids)
    b = stack_predict(fit_stack(plan_b, [renamed[u] for u in ids], {renamed[u]: t for u, t in targets.items()}),
                      [renamed[u] for u in ids])
    assert [a[u] for u in ids] == [b[renamed[u]] for u in ids]


def test_plan_validation():
    learner = FixedPredictionLearner("a", {})
    with pytest.raises(ConfigurationError):
        StackingPlan([])
    with pytest.raises(ConfigurationError):
        StackingPlan([learner, FixedPredictionLearner("a", {})])
    with pytest.raises(ConfigurationError):
        StackingPlan([learner], stage2_methods=["xgboost"])
    with pytest.raises(ConfigurationError):
        StackingPlan([learner], n_folds=1)


def _dev_fixture():
    dev_ids = [f"d{i}" for i in range(12)]
    system_of = {u: f"s{i % 4}" for i, u in enumerate(dev_ids)}
    dev_true = {u: 1.0 + (i % 4) + 0.1 * (i // 4) for i, u in enumerate(dev_ids)}
    return dev_ids, system_of, dev_true


def test_greedy_picks_the_best_first():
    dev_ids, system_of, dev_true = _dev_fixture()
    truth = np.array([dev_true[u] for u in dev_ids])
    reversed_ = 6.0 - truth
    assert greedy_select_strong([reversed_, truth], dev_ids, dev_true, system_of, 1) == [1]
    # tie on score goes to the earlier candidate
    assert greedy_select_strong([truth, truth.copy()], dev_ids, dev_true, system_of, 1) == [0]
    with pytest.raises(ConfigurationError):
        greedy_select_strong([truth], dev_ids, dev_true, system_of, 2)


def test_greedy_matches_exhaustive_on_small_pool():
    dev_ids, system_of, dev_true = _dev_fixture()
    truth = np.array([dev_true[u] for u in dev_ids])
    rng = np.random.default_rng(0)
    cands = [truth + rng.normal(0, s, truth.size) for s in (0.2, 0.6, 1.0, 1.5)]
    greedy = greedy_select_strong(cands, dev_ids, dev_true, system_of, 2)
    subset, best = exhaustive_select(cands, dev_ids, dev_true, system_of, 2)
    mean = np.mean([cands[i] for i in greedy], axis=0)
    _, greedy_score = exhaustive_select([mean], dev_ids, dev_true, system_of, 1)
    assert greedy_score == pytest.approx(best)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1, 5), min_size=12, max_size=12), st.integers(0, 2 ** 16))
def test_greedy_never_beats_exhaustive(values, seed):
    dev_ids, system_of, dev_true = _dev_fixture()
    rng = np.random.default_rng(seed)
    cands = [np.array(values) + rng.normal(0, 1, 12) for _ in range(4)]
    greedy = greedy_select_strong(cands, dev_ids, dev_true, system_of, 2)
    _, best = exhaustive_select(cands, dev_ids, dev_true, system_of, 2)
    _, greedy_score = exhaustive_select([np.mean([cands[i] for i in greedy], axis=0)], dev_ids, dev_true, system_of, 1)
    assert greedy_score <= best + 1e-12
    assert len(set(greedy)) == 2
