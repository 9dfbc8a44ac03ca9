import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfimpute import autoencoder as ae
from rfimpute import imputation as imp
from rfimpute.dataset import (
    DEFAULT_SCHEMA, Dataset, MissingnessPlan, Schema, VariableSpec, encode, generate_synthetic,
    inject_missing, split, validate_record,
)
from rfimpute.errors import ConfigError, DataError
from rfimpute.forest import CLASSIFICATION, REGRESSION, ForestParams
from rfimpute.optimizer import GaConfig

S = DEFAULT_SCHEMA
SMALL_FOREST = ForestParams(n_trees=20)
FAST_GA = GaConfig(population=20, generations=20)


@pytest.fixture(scope="module")
def data():
    train, _, test, _ = split(generate_synthetic(4000, 21), (0.5, 0.1, 0.3, 0.1), seed=2)
    return train, test


@pytest.fixture(scope="module")
def imputer(data):
    return imp.fit_rf_imputer(data[0], seed=5)


@pytest.fixture(scope="module")
def network(data):
    E = encode(data[0]).values
    net, _ = ae.train(ae.init_network(seed=1), E[:1500], E[1500:], ae.TrainConfig(max_cycles=60))
    return net, E.mean(axis=0)


def assert_valid_and_faithful(out, incomplete):
    assert out.data.is_complete
    obs = ~incomplete.missing
    assert np.array_equal(out.data.values[obs], incomplete.values[obs])
    for row in out.data.values:
        assert validate_record(row) == []


# labels ----------------------------------------------------------------------

def test_labels():
    assert imp.parse_label("RF2A") == ("rf", "2A", ("Age", "FathAge"))
    assert imp.parse_label("R1B") == ("random", "1B", ("Edu",))
    assert imp.parse_label("RFAG4A")[0] == "rf-aann-ga"
    assert imp.make_label("rf", ("Age", "Edu", "FathAge")) == "RF3A"
    for bad in ("X1A", "RF9Z", "T"):
        with pytest.raises(ConfigError):
            imp.parse_label(bad)


# RF imputer ------------------------------------------------------------------

def test_nine_forests_with_expected_tasks(imputer):
    assert len(imputer.forests) == 9
    tasks = {n: imputer.task(n) for n in S.names}
    assert [n for n, t in tasks.items() if t == REGRESSION] == ["Age", "Edu", "Gra", "Par", "FathAge"]
    assert sorted(n for n, t in tasks.items() if t == CLASSIFICATION) == ["HIV", "Province", "RPR", "Race"]
    hiv = S.column_slices()["HIV"].start
    assert all(hiv not in cols for cols in imputer.inputs.values())
    own = S.column_slices()["Age"].start
    assert own not in imputer.inputs["Age"]


def test_incomplete_training_rejected(data):
    with pytest.raises(DataError):
        imp.fit_rf_imputer(inject_missing(data[0], MissingnessPlan(rate=0.1), 0))


def test_rf_imputer_deterministic_and_serializable(data):
    a = imp.fit_rf_imputer(data[0].take(range(300)), SMALL_FOREST, seed=1, targets=("Age", "Par"))
    b = imp.fit_rf_imputer(data[0].take(range(300)), SMALL_FOREST, seed=1, targets=("Age", "Par"),
                           threads=3)
    assert a.to_dict() == b.to_dict()
    c = imp.RfImputer.from_dict(a.to_dict())
    d = inject_missing(data[1], MissingnessPlan("MCAR", ("Age",), 0.2), 1)
    assert imp.impute_rf(a, d).data == imp.impute_rf(c, d).data


def test_zero_missing_fixpoint(imputer, data):
    out = imp.impute_rf(imputer, data[1])
    assert out.data == data[1] and not out.imputed.any()


def test_parity_within_one_from_gravidity(imputer, data):
    _, test = data
    d = inject_missing(test, MissingnessPlan("MCAR", ("Par",), 0.3), 3)
    out = imp.impute_rf(imputer, d)
    acc = imp.range_accuracy(out, test).fraction("Par", 1)
    assert acc > 0.95


def test_gravidity_within_one_given_parity(imputer, data):
    _, test = data
    d = inject_missing(test, MissingnessPlan("MCAR", ("Gra",), 0.3), 4)
    out = imp.impute_rf(imputer, d)
    assert_valid_and_faithful(out, d)
    assert imp.range_accuracy(out, test).fraction("Gra", 1) >= 0.95


def test_second_round_is_live(imputer, data):
    d = inject_missing(data[1], MissingnessPlan("MCAR", ("Age", "FathAge"), 0.3, joint=True), 2)
    out = imp.impute_rf(imputer, d, pattern=("Age", "FathAge"))
    r1, r2 = out.round_predictions
    assert not np.array_equal(r1["Age"], r2["Age"])
    assert out.label == "RF2A"
    assert_valid_and_faithful(out, d)


def test_pattern_coverage_enforced(imputer, data):
    d = inject_missing(data[1], MissingnessPlan("MCAR", ("Edu",), 0.2), 2)
    with pytest.raises(DataError):
        imp.impute_rf(imputer, d, pattern=("Age",))


def test_rows_with_everything_missing_use_means(imputer, data):
    test = data[1].take(range(5))
    miss = np.zeros(test.values.shape, dtype=bool)
    miss[0] = True
    miss[0, S.index("HIV")] = False
    out = imp.impute_rf(imputer, test.with_missing(miss))
    assert out.provenance["rows_all_missing"] == 1
    assert validate_record(out.data.values[0]) == []


# baselines ---------------------------------------------------------------------

def test_mean_of_constant_age_is_that_age(data):
    train = data[0]
    vals = train.values.copy()
    vals[:, S.index("Age")] = 30
    vals[:, S.index("FathAge")] = 40
    train30 = Dataset.complete(S, vals)
    d = inject_missing(data[1], MissingnessPlan("MCAR", ("Age",), 0.3), 0)
    out = imp.impute_mean(train30, d)
    assert np.all(out.data.column("Age")[d.missing[:, S.index("Age")]] == 30)


def test_random_baseline_valid_and_seeded(data):
    d = inject_missing(data[1], MissingnessPlan("MCAR", ("Age", "Edu", "Gra", "Par", "FathAge"), 0.3), 5)
    a = imp.impute_random(data[0], d, seed=1)
    assert_valid_and_faithful(a, d)
    assert a.data == imp.impute_random(data[0], d, seed=1).data
    assert a.data != imp.impute_random(data[0], d, seed=2).data


def test_random_within_two_matches_closed_form():
    lo, hi = 12, 50
    width = hi - lo + 1
    fracs, expected = [], []
    for seed in range(10):
        truth = generate_synthetic(5000, 100 + seed)
        d = inject_missing(truth, MissingnessPlan("MCAR", ("Age",), 0.1), seed)
        out = imp.impute_random(truth, d, seed=seed)
        fracs.append(imp.range_accuracy(out, truth).fraction("Age", 2))
        t = truth.column("Age")[d.missing[:, S.index("Age")]]
        window = np.minimum(hi, t + 2) - np.maximum(lo, t - 2) + 1
        expected.append(np.mean(window / width))
    # about 500 imputed cells per seed, so the tolerance applies to the 10-seed mean
    assert abs(np.mean(fracs) - np.mean(expected)) <= 0.03
    assert abs(np.mean(expected) - 5 / 39) < 0.01


# AANN-GA ---------------------------------------------------------------------

def rank_one_network(seed):
    rng = np.random.default_rng(seed)
    x1 = rng.random(300) * 0.5
    X = np.column_stack([x1, 2 * x1])
    net, _ = ae.train(ae.init_network((2, 1, 2), seed=seed), X[:200], X[200:],
                      ae.TrainConfig(max_cycles=200))
    return net, rng


def test_rank_one_recovery_ten_seeds():
    for seed in range(10):
        net, rng = rank_one_network(seed)
        x1 = rng.random() * 0.5
        rec = np.array([x1, np.nan])
        out = imp.impute_aann_ga(net, GaConfig(seed=seed), rec)
        assert out[0] == x1
        assert abs(out[1] - 2 * x1) < 0.05


def test_zero_missing_record_unchanged():
    net, _ = rank_one_network(0)
    rec = np.array([0.2, 0.4])
    np.testing.assert_array_equal(imp.impute_aann_ga(net, GaConfig(), rec), rec)
    with pytest.raises(DataError):
        imp.impute_aann_ga(net, GaConfig(), np.array([np.nan, np.nan]))


def test_ga_result_dominates_mean_candidate(network, data):
    net, means = network
    d = inject_missing(data[1].take(range(40)), MissingnessPlan("MCAR", ("Age", "Edu"), 0.5), 1)
    enc = encode(d)
    for i in np.flatnonzero(enc.mask.any(axis=1)):
        m = enc.mask[i]
        out = imp.impute_aann_ga(net, FAST_GA.with_seed(i), enc.values[i], m, means)
        base = enc.values[i].copy()
        base[m] = means[m]
        known = np.where(m, 0.0, enc.values[i])
        assert np.array_equal(out[~m], enc.values[i][~m])
        e_out = ae.reconstruction_error(net, known, out[m], m)
        e_mean = ae.reconstruction_error(net, known, base[m], m)
        assert e_out <= e_mean


def test_aann_ga_dataset_threads_and_validity(network, data):
    net, means = network
    d = inject_missing(data[1].take(range(60)), MissingnessPlan("MCAR", ("Age", "FathAge"), 0.3), 7)
    a = imp.impute_aann_ga_dataset(net, FAST_GA, d, means, seed=3)
    b = imp.impute_aann_ga_dataset(net, FAST_GA, d, means, seed=3, threads=3)
    assert np.array_equal(a.encoded, b.encoded)
    assert_valid_and_faithful(a, d)
    assert a.label == "AG2A"


# RF-AANN-GA ----------------------------------------------------------------------

def test_box_clamp_arithmetic():
    boxes = imp.rf_boxes(np.array([[0.02, 0.5, 0.99]]), np.array([[True, True, True]]))
    b = boxes[0]
    np.testing.assert_allclose(b.lower, [0.0, 0.45, 0.94])
    np.testing.assert_allclose(b.upper, [0.07, 0.55, 1.0])
    np.testing.assert_allclose((b.upper - b.lower)[1], 0.10)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_boxes_inside_unit_interval(p):
    b = imp.rf_boxes(np.array([p]), np.ones((1, len(p)), dtype=bool))[0]
    assert np.all(b.lower >= 0) and np.all(b.upper <= 1)
    assert np.all(b.upper - b.lower <= 0.1 + 1e-12)
    assert np.all((b.lower <= p) & (p <= b.upper))


def test_rf_aann_ga_inside_box(imputer, network, data):
    net, means = network
    d = inject_missing(data[1].take(range(80)), MissingnessPlan("MCAR", ("Age", "Edu", "FathAge"), 0.3), 8)
    out = imp.impute_rf_aann_ga(imputer, net, FAST_GA, d, means, seed=2)
    rf = imp.impute_rf(imputer, d)
    m = encode(d).mask
    lo = np.maximum(0, rf.encoded - imp.RF_BOX_HALF_WIDTH)
    hi = np.minimum(1, rf.encoded + imp.RF_BOX_HALF_WIDTH)
    assert np.all((out.encoded[m] >= lo[m]) & (out.encoded[m] <= hi[m]))
    assert_valid_and_faithful(out, d)


# AANN-GA-RF ---------------------------------------------------------------------

def rank_one_schema():
    return Schema((VariableSpec("A", "ordinal", 0, 40), VariableSpec("B", "ordinal", 0, 80),
                   VariableSpec("C", "ordinal", 0, 40)))


def test_correction_identity_case():
    schema = rank_one_schema()
    a = np.random.default_rng(0).integers(0, 41, 600)
    truth = Dataset.complete(schema, np.column_stack([a, 2 * a, 40 - a]))
    d = inject_missing(truth, MissingnessPlan("MCAR", ("A",), 0.3), 1)
    perfect = imp.ImputedSet("AG", "aann-ga", ("A",), truth, d.missing.copy(), encode(truth).values)
    model = imp.fit_correction(perfect, truth, ("A",), SMALL_FOREST, seed=0)
    fixed = imp.apply_correction(model, perfect)
    m = d.missing[:, 0]
    assert np.max(np.abs(fixed.encoded[m, 0] - perfect.encoded[m, 0])) < 0.02
    back = imp.CorrectionModel.from_dict(model.to_dict())
    assert np.array_equal(imp.apply_correction(back, perfect).encoded, fixed.encoded)


def test_aann_ga_rf_protocol_deterministic():
    sets = split(generate_synthetic(800, 4), (0.4, 0.2, 0.2, 0.2), seed=1)
    plan = MissingnessPlan("MCAR", ("Age", "Gra"), 0.2)
    kw = dict(seed=3, train_config=ae.TrainConfig(max_cycles=20))
    a = imp.impute_aann_ga_rf(ae.init_network(seed=0), FAST_GA, SMALL_FOREST, sets, plan, **kw)
    b = imp.impute_aann_ga_rf(ae.init_network(seed=0), FAST_GA, SMALL_FOREST, sets, plan, **kw)
    assert a.corrected.data == b.corrected.data
    assert a.corrected.label == "AGRF[Age+Gra]"
    exp_missing = a.uncorrected.imputed
    assert np.array_equal(a.corrected.data.values[~exp_missing], a.truth.values[~exp_missing])
    with pytest.raises(ConfigError):
        imp.impute_aann_ga_rf(ae.init_network(), FAST_GA, SMALL_FOREST, sets[:3], plan)


# range accuracy -------------------------------------------------------------------

def _single_var_set(truth_x, imputed_x):
    schema = Schema((VariableSpec("X", "ordinal", 0, 100), VariableSpec("Y", "ordinal", 0, 1)))
    t = Dataset.complete(schema, np.column_stack([truth_x, np.zeros(len(truth_x), int)]))
    p = Dataset.complete(schema, np.column_stack([imputed_x, np.zeros(len(truth_x), int)]))
    mask = np.zeros(p.values.shape, dtype=bool)
    mask[:, 0] = True
    return imp.ImputedSet("RF", "rf", ("X",), p, mask, encode(p).values), t


def test_range_accuracy_hand_case():
    s, truth = _single_var_set([10, 10, 10], [10, 12, 20])
    ra = imp.range_accuracy(s, truth, {"X": (0, 2, 10)})
    assert ra.fraction("X", 2) == pytest.approx(2 / 3)
    assert ra.fraction("X", 0) == pytest.approx(1 / 3)
    assert ra.fraction("X", 10) == 1.0


def test_range_accuracy_exact_is_one():
    s, truth = _single_var_set([10, 20, 30], [10, 20, 30])
    ra = imp.range_accuracy(s, truth, {"X": (0, 1)})
    assert all(f == 1.0 for _, f, _ in ra.per_variable["X"])


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), min_size=1, max_size=30))
def test_range_accuracy_monotone(pairs):
    t, p = zip(*pairs)
    s, truth = _single_var_set(t, p)
    ra = imp.range_accuracy(s, truth, {"X": (0, 1, 2, 4, 6, 10, 1000)})
    fr = [f for _, f, _ in ra.per_variable["X"]]
    assert fr == sorted(fr) and fr[-1] == 1.0


def test_imputed_cell_mse():
    s, truth = _single_var_set([10, 10], [11, 13])
    assert imp.imputed_cell_mse(s, truth, "X") == 5.0
