import json
import os

import numpy as np
import pytest

from app.errors import AcceptanceError, DataError, DomainError, ShapeError
from app.services import analog_core, dataset_pipeline, harness, neural
from app.services.harness import CrossDefectMatrix, EvalReport, ReportRow
from app.utils.experiment_config import ExperimentConfig
from conftest import DIGITS_PATH, random_layer_weights

FAST_TRAIN = {'learning_rate': 0.01, 'epochs': 2, 'batch_size': 256, 'patience': 5}


@pytest.fixture(scope='module')
def small_corpus(digits):
    return dataset_pipeline.generate_corpus(random_layer_weights(seed=3), digits, kinds=('circle', 'ring'))


@pytest.fixture(scope='module')
def small_splits(small_corpus):
    return dataset_pipeline.split_corpus(small_corpus, seed=0)


def _config(**overrides):
    options = dict(experiment='cross_defect', train=dict(FAST_TRAIN))
    options.update(overrides)
    return ExperimentConfig(**options)


def _row(**values):
    defaults = dict(experiment='ladder', kind_train='circle', kind_test='circle', architecture='MLP(10,10)',
                    size=1, layer=0, severity_pairs=10, coverage=0.1, acc_faulty=0.5, acc_corrected=0.6,
                    delta_pp=10.0, n_samples=250, seed=0)
    defaults.update(values)
    return ReportRow(**defaults)


class TestMetrics:

    def test_accuracy(self):
        assert harness.accuracy([1, 2, 3, 3], [1, 2, 0, 3]) == 0.75

    def test_accuracy_of_empty_set(self):
        with pytest.raises(DomainError):
            harness.accuracy([], [])

    def test_accuracy_shape_mismatch(self):
        with pytest.raises(ShapeError):
            harness.accuracy([1, 2], [1, 2, 3])

    def test_delta(self):
        assert harness.delta_accuracy(0.95, 0.70) == pytest.approx(25.0)
        assert harness.delta_accuracy(0.40, 0.55) == pytest.approx(-15.0)
        assert harness.delta_accuracy(0.5, 0.5) == 0.0

    def test_delta_range(self):
        with pytest.raises(DomainError):
            harness.delta_accuracy(1.2, 0.5)


class TestReports:

    def test_empty_csv_is_header_only(self, tmp_path):
        path = harness.emit_report(EvalReport('same_defect'), 'csv', str(tmp_path / 'empty.csv'))
        assert open(path).read() == ','.join(harness.REPORT_COLUMNS) + '\n'

    def test_csv_has_one_line_per_row(self, tmp_path):
        report = EvalReport('ladder', [_row(layer=i) for i in range(4)])
        path = harness.emit_report(report, 'csv', str(tmp_path / 'ladder.csv'))
        assert len(open(path).read().splitlines()) == 5

    def test_json_reemission_is_byte_identical(self, tmp_path):
        report = EvalReport('ladder', [_row(layer=i, acc_corrected=0.1 * i) for i in range(4)],
                            {'MLP(10,10)': {'circle->circle': {'mean_delta_pp': 1.0 / 3}}})
        first = harness.emit_report(report, 'json', str(tmp_path / 'a.json'))
        second = harness.emit_report(harness.load_report(first), 'json', str(tmp_path / 'b.json'))
        assert open(first, 'rb').read() == open(second, 'rb').read()

    def test_unknown_format(self, tmp_path):
        with pytest.raises(DomainError):
            harness.emit_report(EvalReport('ladder'), 'xml', str(tmp_path / 'r.xml'))

    def test_missing_report(self, tmp_path):
        with pytest.raises(DataError):
            harness.load_report(str(tmp_path / 'missing.json'))

    def test_unknown_report_version(self, tmp_path):
        path = tmp_path / 'old.json'
        path.write_text(json.dumps({'version': 0, 'experiment': 'ladder', 'rows': []}))
        with pytest.raises(DataError):
            harness.load_report(str(path))


class TestExperiments:

    @pytest.fixture(scope='class')
    def same_defect(self, small_splits):
        return harness.run_same_defect(_config(experiment='same_defect'), small_splits)

    @pytest.fixture(scope='class')
    def cross_defect(self, small_splits):
        return harness.run_cross_defect(_config(), small_splits)

    def test_same_defect_rows(self, same_defect):
        assert len(same_defect.rows) == 2 * 4 * 4
        assert {row.kind_test for row in same_defect.rows} == {'circle', 'ring'}
        assert all(row.n_samples == 250 for row in same_defect.rows)
        assert set(same_defect.models) == {'MLP(10,10)@circle', 'MLP(10,10)@ring'}

    def test_deltas_are_consistent(self, same_defect):
        for row in same_defect.rows:
            assert 0 <= row.acc_faulty <= 1 and 0 <= row.acc_corrected <= 1
            assert row.delta_pp == pytest.approx(100 * (row.acc_corrected - row.acc_faulty))

    def test_single_train_defect(self, small_splits):
        report = harness.run_same_defect(_config(experiment='same_defect', train_defect='ring'), small_splits)
        assert list(report.summary) == ['ring']

    def test_kind_missing_from_corpus(self, small_splits):
        with pytest.raises(DataError):
            harness.run_same_defect(_config(experiment='same_defect', train_defect='row'), small_splits)

    def test_matrix_diagonal_equals_same_defect(self, same_defect, cross_defect):
        assert cross_defect.train_kinds == ['circle', 'ring']
        for kind, value in cross_defect.diagonal().items():
            assert value == pytest.approx(same_defect.summary[kind]['mean_delta_pp'])

    def test_matrix_rows_label_the_diagonal(self, cross_defect):
        for row in cross_defect.rows:
            expected = 'same_defect' if row.kind_train == row.kind_test else 'cross_defect'
            assert row.experiment == expected
        assert len(cross_defect.rows) == 2 * 2 * 16

    def test_mixed_corrector(self, small_splits):
        matrix = harness.run_cross_defect(_config(train_defect='mixed'), small_splits)
        assert matrix.train_kinds == ['mixed']
        assert set(matrix.values['mixed']) == {'circle', 'ring'}

    def test_layer_sweep_is_anchored_at_clean_accuracy(self, small_corpus):
        report = harness.run_layer_sweep(_config(experiment='layer_sweep'), small_corpus, clean_accuracy=0.9)
        anchors = [row for row in report.rows if row.size == 0]
        assert len(anchors) == 2 * 4
        assert all(row.severity_pairs == 0 and row.acc_faulty == 0.9 for row in anchors)
        assert len(report.rows) == 2 * 4 + 2 * 4 * 4
        for layer in range(4):
            pairs = [row.severity_pairs for row in report.rows
                     if row.kind_test == 'circle' and row.layer == layer]
            assert pairs == sorted(pairs)
        assert report.summary['clean_accuracy'] == 0.9
        assert set(report.summary['circle']) == {'0', '1', '2', '3'}

    def test_ladder(self, small_splits):
        config = _config(experiment='ladder', architectures=['MLP(6,)', 'MLP(1,)'], pairings=[['circle', 'ring']])
        report = harness.run_ladder(config, small_splits)
        assert len(report.rows) == 2 * 16
        assert {row.architecture for row in report.rows} == {'MLP(6,)', 'MLP(1,)'}
        assert set(report.summary['MLP(1,)']) == {'circle->ring'}
        assert all(row.kind_train == 'circle' and row.kind_test == 'ring' for row in report.rows)

    def test_ladder_needs_covered_pairing(self, small_splits):
        config = _config(experiment='ladder', architectures=['MLP(1,)'], pairings=[['row', 'column']])
        with pytest.raises(DataError):
            harness.run_ladder(config, small_splits)

    def test_reports_serialise(self, cross_defect, tmp_path):
        path = harness.emit_report(cross_defect, 'json', str(tmp_path / 'cross.json'))
        loaded = harness.load_report(path)
        assert loaded.experiment == 'cross_defect'
        assert len(loaded.rows) == len(cross_defect.rows)
        assert loaded.summary['matrix']['circle']['ring'] == pytest.approx(cross_defect.delta('circle', 'ring'))


class TestAcceptance:

    def test_same_defect_floor(self):
        failing = EvalReport('same_defect', summary={'circle': {'mean_delta_pp': 12.0}})
        passing = EvalReport('same_defect', summary={'circle': {'mean_delta_pp': 25.0},
                                                     'circle_complement': {'mean_delta_pp': 9.0}})
        assert len(harness.check_acceptance('same_defect', failing)) == 1
        assert harness.check_acceptance('same_defect', passing) == []

    def test_cross_defect_pairs_and_checkerboard(self):
        matrix = CrossDefectMatrix(['ring', 'circle', 'checkerboard'], ['ring', 'circle'], {
            'ring': {'circle': 10.0},
            'circle': {'ring': 9.0},
            'checkerboard': {'circle': 12.0, 'ring': 11.0},
        })
        failures = harness.check_acceptance('cross_defect', matrix)
        assert len(failures) == 1
        assert 'checkerboard' in failures[0]

    def test_tiny_corrector_must_degrade(self):
        degrading = EvalReport('ladder', [_row(architecture='MLP(1,)', acc_faulty=0.6, acc_corrected=0.3)])
        improving = EvalReport('ladder', [_row(architecture='MLP(1,)', acc_faulty=0.6, acc_corrected=0.7)])
        assert harness.check_acceptance('ladder', degrading) == []
        assert len(harness.check_acceptance('ladder', improving)) == 1

    def test_layer_sweep_worst_layer(self):
        rows = [_row(kind_test='circle', size=4, layer=layer, acc_faulty=acc)
                for layer, acc in enumerate((0.9, 0.8, 0.7, 0.2))]
        assert harness.check_acceptance('layer_sweep', EvalReport('layer_sweep', rows)) == []
        rows[0].acc_faulty = 0.1
        assert len(harness.check_acceptance('layer_sweep', EvalReport('layer_sweep', rows))) == 1

    def test_enforce_raises_with_every_failure(self):
        report = EvalReport('same_defect', summary={'circle': {'mean_delta_pp': 1.0}, 'ring': {'mean_delta_pp': 2.0}})
        with pytest.raises(AcceptanceError) as excinfo:
            harness.enforce_acceptance('same_defect', report)
        assert len(excinfo.value.failures) == 2
        assert excinfo.value.exit_code == 4


class TestBaselineStage:

    def _constant_head(self, bias):
        params = neural.init_params(neural.BASELINE_SPEC, np.random.default_rng(2))
        params.weights[-1] = np.zeros_like(params.weights[-1])
        params.biases[-1] = np.asarray(bias, dtype=float)
        return params

    def test_circuit_agrees_with_software_when_logits_are_positive(self, digit_arrays):
        params = neural.init_params(neural.BASELINE_SPEC, np.random.default_rng(2))
        params.biases[-1] = np.full(10, 50.0)
        assert harness.circuit_software_mismatches(params, digit_arrays[0][:200]) == 0

    def test_rectified_negative_logits_count_as_mismatches(self, digit_arrays):
        # software picks class 9 from all-negative logits, the rectified circuit reads all zeros
        params = self._constant_head(np.arange(10) - 100.0)
        assert harness.circuit_software_mismatches(params, digit_arrays[0][:30]) == 30

    def test_layer_accuracies_match_the_corpus(self, small_corpus, digit_arrays):
        pixels, labels = digit_arrays
        accuracies = harness.layer_accuracies(random_layer_weights(seed=3), pixels, labels, 'circle', 4)
        batch = small_corpus[('circle', 4)]
        assert list(accuracies) == [0, 1, 2, 3]
        for layer_index, value in accuracies.items():
            in_layer = batch.layers == layer_index
            assert value == harness.accuracy(batch.faulty_predictions[in_layer], batch.labels[in_layer])

    def test_layer_direction(self):
        good = {'circle': {0: 0.5, 1: 0.6, 2: 0.4, 3: 0.3}, 'circle_complement': {0: 0.1, 1: 0.2, 2: 0.2, 3: 0.2}}
        assert harness.layer_direction_failures(good) == []
        bad = {'circle': {0: 0.364, 1: 0.545, 2: 0.446, 3: 0.382},
               'circle_complement': {0: 0.116, 1: 0.135, 2: 0.131, 3: 0.101}}
        failures = harness.layer_direction_failures(bad)
        assert failures == ['layer sweep circle: largest loss in layer 0, expected layer 3',
                            'layer sweep circle_complement: largest loss in layer 3, expected layer 0']

    def test_train_base_stage_screens_and_snapshots(self, tmp_path, digit_arrays):
        config = _config(experiment='same_defect', output_dir=str(tmp_path), digits_path=DIGITS_PATH,
                         baseline_min_accuracy=0.0, baseline_restarts=1, baseline_layer_screen=True,
                         baseline_train={'epochs': 2, 'learning_rate': 0.01, 'batch_size': 128, 'patience': 2})
        params = harness.train_base_stage(config, snapshot=True)

        assert set(params.metrics['layer_accuracies']) == {'circle', 'circle_complement'}
        assert 'screen_failures' in params.metrics
        assert params.metrics['rng_seed'] in (0, 1)
        assert params.metrics['circuit_software_mismatches'] == harness.circuit_software_mismatches(
            params, digit_arrays[0])

        assert sorted(os.listdir(config.arrays_dir)) == ['layer0.json', 'layer1.json', 'layer2.json', 'layer3.json']
        output_array = analog_core.load_array(os.path.join(config.arrays_dir, 'layer3.json'))
        expected = analog_core.build_circuit(neural.export_crossbar_weights(params))[3]
        np.testing.assert_array_equal(output_array.g_plus, expected.g_plus)
        assert neural.load_params(config.baseline_path).metrics['rng_seed'] == params.metrics['rng_seed']


def test_report_frame_columns():
    frame = harness.report_frame(EvalReport('ladder', [_row()]))
    assert list(frame.columns) == harness.REPORT_COLUMNS
    assert frame.loc[0, 'delta_pp'] == 10.0
    assert np.isclose(frame.loc[0, 'coverage'], 0.1)
