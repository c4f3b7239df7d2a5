import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanecast import data, dataset, evaluation, network, synth, training
from lanecast.evaluation import AblationSpec, EvalReport, VARIANTS
from lanecast.network import count_parameters


def test_perfect_predictor_has_zero_rmse(rng):
    truth = rng.normal(size=(7, 5, 2))
    m = rng.integers(0, 3, size=(7, 5))
    r = evaluation.report_from_predictions(truth, truth, m, m)
    assert not r.rmse.any()
    np.testing.assert_array_equal(r.accuracy, 1.0)


def test_constant_longitudinal_error():
    truth = np.zeros((1, 5, 2))
    pred = truth + [3.0, 0.0]
    np.testing.assert_allclose(evaluation.rmse_per_step(pred, truth), 3.0)


def test_metric_matches_naive_recomputation():
    r = np.random.default_rng(0)
    pred, truth = r.normal(size=(100, 5, 2)) * 10, r.normal(size=(100, 5, 2)) * 10
    got = evaluation.rmse_per_step(pred, truth)
    for t in range(5):
        acc = 0.0
        for i in range(100):
            acc += (pred[i, t, 0] - truth[i, t, 0]) ** 2 + (pred[i, t, 1] - truth[i, t, 1]) ** 2
        assert got[t] == pytest.approx(np.sqrt(acc / 100), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10), st.floats(-np.pi, np.pi))
def test_rmse_grows_under_constant_offset(seed, mag, angle):
    r = np.random.default_rng(seed)
    pred, truth = r.normal(size=(20, 5, 2)), r.normal(size=(20, 5, 2))
    bias = pred.mean(axis=0) - truth.mean(axis=0)
    # shift along the mean error direction so the error strictly grows
    shift = bias / np.maximum(np.linalg.norm(bias, axis=-1, keepdims=True), 1e-12) * mag
    assert np.all(evaluation.rmse_per_step(pred + shift, truth) > evaluation.rmse_per_step(pred, truth))


def test_confusion_rows_sum_to_counts(rng):
    pred, truth = rng.integers(0, 3, size=(40, 5)), rng.integers(0, 3, size=(40, 5))
    r = evaluation.report_from_predictions(np.zeros((40, 5, 2)), np.zeros((40, 5, 2)), pred, truth)
    assert r.confusion.shape == (5, 3, 3)
    np.testing.assert_array_equal(r.confusion.sum(axis=(1, 2)), 40)
    for s in range(5):
        np.testing.assert_array_equal(r.confusion[s].sum(axis=1), np.bincount(truth[:, s], minlength=3))
    np.testing.assert_allclose(r.accuracy, (pred == truth).mean(axis=0))


def test_empty_test_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        evaluation.report_from_predictions(np.zeros((0, 5, 2)), np.zeros((0, 5, 2)), np.zeros((0, 5)), np.zeros((0, 5)))


# ------------------------------------------------------------- export

def report(rmse=(0, 0, 0, 0, 0)):
    conf = np.zeros((5, 3, 3), dtype=np.int64)
    conf[:, 0, 0] = 4
    return EvalReport(np.asarray(rmse, float), np.ones(5), conf, 4, "abc123", "full")


def test_delimited_export(tmp_path):
    p = evaluation.export_report(report(), tmp_path / "r.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "horizon_s,rmse_m,acc,n"
    assert len(lines) == 6
    assert lines[1] == "1,0.0,1.0,4"


def test_export_is_byte_stable(tmp_path):
    r = report((0.1, 0.2, 1 / 3, 0.7, 1.3))
    for fmt in evaluation.REPORT_FORMATS:
        a = evaluation.export_report(r, tmp_path / f"a.{fmt}", fmt).read_bytes()
        b = evaluation.export_report(r, tmp_path / f"b.{fmt}", fmt).read_bytes()
        assert a == b


def test_structured_round_trip(tmp_path):
    r = report((0.1, 0.2, 1 / 3, 0.7, 1.3))
    p = evaluation.export_report(r, tmp_path / "r.json", "structured")
    assert evaluation.read_report(p) == r
    assert json.loads(p.read_text())["rmse"][2] == 1 / 3


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        evaluation.export_report(report(), tmp_path / "r.xml", "xml")
    with pytest.raises(OSError):
        evaluation.export_report(report(), tmp_path / "missing" / "dir" / "r.csv")


# ------------------------------------------------------------- ablations

def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="variant"):
        AblationSpec("no_such_thing")


def test_each_variant_changes_one_aspect():
    full = AblationSpec("full").aspects()
    for v in VARIANTS[1:]:
        a = AblationSpec(v).aspects()
        assert sum(a[k] != full[k] for k in full) == 1, v
    fps = {evaluation.fingerprint(AblationSpec(v).aspects()) for v in VARIANTS}
    assert len(fps) == len(VARIANTS)


def test_variant_architectures():
    c, r = AblationSpec("without_dilation").architectures()
    assert count_parameters(c, r) == 90_681
    c, r = AblationSpec("only_xy_channels").architectures()
    assert c.trunk.input_shape == (2, 8, 30) and c.trunk.layers[0].in_channels == 2
    c, r = AblationSpec("without_maneuver").architectures()
    assert not r.takes_maneuvers and r.head_input == 96
    assert count_parameters(*AblationSpec("full").architectures()) == 65_721


@pytest.fixture(scope="module")
def samples():
    c = synth.benchmark_corpus(40, seed=3)
    tracks = data.group_tracks(c.records)
    return dataset.collect_samples([data.window_at(tracks, t, f) for t, f in c.windows], records=c.records)


def test_input_transforms(samples):
    x = AblationSpec("only_xy_channels").transform(samples)
    assert x.inputs.shape[1:] == (2, 8, 30)
    nb = AblationSpec("without_neighborhood").transform(samples)
    assert not nb.inputs[:, :, 1:].any() and not nb.present[:, 1:].any()
    np.testing.assert_array_equal(nb.inputs[:, :, 0], samples.inputs[:, :, 0])
    spec = AblationSpec("shuffled_neighborhood", seed=5)
    perm = spec.row_permutation()
    assert sorted(perm) == list(range(8)) and np.all(perm != np.arange(8))
    np.testing.assert_array_equal(spec.row_permutation(), perm)   # fixed across calls
    sh = spec.transform(samples)
    np.testing.assert_array_equal(sh.inputs[:, :, 3], samples.inputs[:, :, perm[3]])
    norm = dataset.fit_on(nb)
    d = dataset.make_dataset(nb, norm)
    assert not d.inputs[:, :, 1:].any()


@pytest.mark.parametrize("variant", VARIANTS)
def test_run_ablation_smoke(samples, variant):
    train, test = samples.subset(slice(0, 30)), samples.subset(slice(30, 40))
    cfg = training.TrainConfig(learning_rate=1e-3, epochs=2, batch_size=16)
    rep, models = evaluation.run_ablation(AblationSpec(variant), train, test, cfg)
    assert rep.n == 10 and rep.variant == variant
    assert np.all(rep.rmse >= 0) and np.all(np.isfinite(rep.rmse))
    assert rep.fingerprint == models.fingerprint()
    # evaluation is deterministic
    assert evaluation.evaluate(models, test) == rep


def test_evaluate_compares_absolute_positions(samples):
    cfg = training.TrainConfig(learning_rate=1e-3, epochs=1, batch_size=16)
    models = evaluation.train_models(samples, cfg)
    rep = evaluation.evaluate(models, samples)
    d = evaluation.prepare(models.spec, samples, models.normalizer)
    _, seq = network.classify(d.inputs, models.classifier)
    pred = network.regress(d.inputs, seq, models.regressor, models.normalizer).absolute(samples.origins)
    truth = samples.offsets + samples.origins[:, None]
    np.testing.assert_allclose(rep.rmse, np.sqrt(((pred - truth) ** 2).sum(-1).mean(0)), atol=1e-9)
    with pytest.raises(ValueError, match="empty"):
        evaluation.evaluate(models, samples.subset(slice(0, 0)))
