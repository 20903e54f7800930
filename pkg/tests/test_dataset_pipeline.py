import numpy as np
import pytest

from app.errors import DataError, IngestionError
from app.services import analog_core, dataset_pipeline, defect_engine
from conftest import random_layer_weights


@pytest.fixture(scope='module')
def corpus(digits):
    return dataset_pipeline.generate_corpus(random_layer_weights(seed=21), digits)


@pytest.fixture(scope='module')
def splits(corpus):
    return dataset_pipeline.split_corpus(corpus, seed=0)


def _write_digits(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in row) for row in rows) + "\n")
    return path


class TestIngestion:

    def test_bundled_digits(self, digits):
        assert len(digits) == 1797
        assert {s.label for s in digits} == set(range(10))
        assert all(len(s.pixels) == 64 for s in digits)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            dataset_pipeline.load_digits(str(tmp_path / 'none.csv'))

    def test_short_row_reports_row_number(self, tmp_path):
        rows = [[0] * 64 + [1], [0] * 10]
        with pytest.raises(IngestionError, match='row 2'):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))

    def test_pixel_out_of_range(self, tmp_path):
        rows = [[0] * 63 + [17, 3]]
        with pytest.raises(IngestionError, match='row 1'):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))

    def test_label_out_of_range(self, tmp_path):
        rows = [[0] * 64 + [10]]
        with pytest.raises(IngestionError):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))

    def test_non_numeric_value(self, tmp_path):
        rows = [[0] * 64 + ['x']]
        with pytest.raises(IngestionError):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))

    @pytest.mark.parametrize('value', ['3.7', 'inf', '-inf', 'nan'])
    def test_non_integral_intensity_is_rejected(self, tmp_path, value):
        rows = [[0] * 65, [0] * 11 + [value] + [0] * 53]
        with pytest.raises(IngestionError, match=r"row 2: value '.+' in column 12") as info:
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))
        assert info.value.row == 2

    def test_integral_float_literals_are_accepted(self, tmp_path):
        rows = [[0] * 64 + ['1e0'], [0] * 63 + ['16.0', 2]]
        with pytest.raises(IngestionError, match='expected 1797 images, found 2'):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))

    def test_wrong_image_count(self, tmp_path):
        rows = [[0] * 64 + [i % 10] for i in range(20)]
        with pytest.raises(IngestionError, match='1797'):
            dataset_pipeline.load_digits(str(_write_digits(tmp_path / 'digits.csv', rows)))


class TestBaseSplit:

    def test_sizes_and_disjointness(self):
        train, test = dataset_pipeline.split_base(list(range(1797)), seed=3)
        assert (len(train), len(test)) == (1617, 180)
        assert sorted(train + test) == list(range(1797))

    def test_seeded(self):
        assert dataset_pipeline.split_base(list(range(1797)), 1) == dataset_pipeline.split_base(list(range(1797)), 1)
        assert dataset_pipeline.split_base(list(range(1797)), 1) != dataset_pipeline.split_base(list(range(1797)), 2)


class TestCorpus:

    def test_configuration_counts(self, corpus):
        assert len(corpus) == 21
        assert all(len(batch) == 7188 for batch in corpus.values())
        assert dataset_pipeline.corpus_size(corpus) == 150948
        kinds = [kind for kind, _ in corpus]
        assert sum(len(corpus[key]) for key in corpus if key[0] == 'circle') == 28752
        assert kinds.count('checkerboard') == 1

    def test_canonical_order(self, corpus):
        assert list(corpus) == dataset_pipeline.configuration_keys()

    def test_each_layer_covers_every_image(self, corpus):
        batch = corpus[('ring', 2)]
        for layer_index in range(4):
            ids = batch.image_ids[batch.layers == layer_index]
            assert np.array_equal(np.sort(ids), np.arange(1797))

    def test_samples_carry_their_defect(self, corpus):
        sample = next(corpus[('row', 3)].take(np.arange(1)).samples())
        assert sample.defect == defect_engine.DefectSpec('row', 0, 3)
        assert sample.faulty_prediction == corpus[('row', 3)].faulty_predictions[0]
        assert len(sample.voltages) == 10

    def test_resimulation_is_identical(self, corpus, digits, digit_arrays):
        key = ('column', 4)
        batch = corpus[key]
        arrays = analog_core.build_circuit(random_layer_weights(seed=21))
        pixels, labels = digit_arrays
        for index in np.random.default_rng(0).choice(len(batch), size=20, replace=False):
            spec = defect_engine.DefectSpec('column', int(batch.layers[index]), 4)
            voltages, prediction = analog_core.forward_inference(defect_engine.inject(arrays, spec),
                                                                 pixels[batch.image_ids[index]])
            np.testing.assert_allclose(voltages, batch.voltages[index], rtol=1e-10, atol=1e-12)
            assert prediction == batch.faulty_predictions[index]
            assert labels[batch.image_ids[index]] == batch.labels[index]

    def test_worker_count_does_not_change_result(self, corpus, digits):
        threaded = dataset_pipeline.generate_corpus(random_layer_weights(seed=21), digits,
                                                    kinds=('checkerboard', 'circle'), workers=3)
        assert list(threaded) == dataset_pipeline.configuration_keys(('checkerboard', 'circle'))
        for key, batch in threaded.items():
            assert np.array_equal(batch.voltages, corpus[key].voltages)

    def test_save_and_load(self, corpus, tmp_path):
        subset = {key: corpus[key] for key in [('circle', 1), ('checkerboard', None)]}
        manifest = dataset_pipeline.save_corpus(subset, str(tmp_path), seeds={'corpus': 0}, split_seed=0)
        assert manifest['total_samples'] == 2 * 7188
        assert manifest['splits']['cross_validation'] == 2000
        assert (tmp_path / 'circle_s1.csv').exists() and (tmp_path / 'checkerboard.csv').exists()

        restored = dataset_pipeline.load_corpus(str(tmp_path))
        assert list(restored) == list(subset)
        for key, batch in subset.items():
            assert np.array_equal(restored[key].voltages, batch.voltages)
            assert np.array_equal(restored[key].faulty_predictions, batch.faulty_predictions)
            assert np.array_equal(restored[key].layers, batch.layers)

        only_circle = dataset_pipeline.load_corpus(str(tmp_path), kinds=['circle'])
        assert list(only_circle) == [('circle', 1)]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            dataset_pipeline.load_corpus(str(tmp_path))

    @pytest.mark.parametrize('content', ['{"version": 1}', '{"configurations": '])
    def test_malformed_manifest(self, tmp_path, content):
        (tmp_path / 'manifest.json').write_text(content)
        with pytest.raises(DataError, match='manifest'):
            dataset_pipeline.load_corpus(str(tmp_path))


class TestSplits:

    def test_configuration_split_sizes(self, splits):
        for split in splits.values():
            assert (len(split.train), len(split.test), len(split.cross_validation)) == (4950, 1238, 1000)

    def test_kind_and_corpus_totals(self, splits):
        assert dataset_pipeline.split_counts(splits, 'circle') == (19800, 4952, 4000)
        assert dataset_pipeline.split_counts(splits, 'checkerboard') == (4950, 1238, 1000)
        assert dataset_pipeline.split_counts(splits) == (103950, 25998, 21000)

    def test_cross_validation_is_layer_stratified(self, splits):
        cv = splits[('circle_complement', 3)].cross_validation
        assert np.array_equal(np.bincount(cv.layers, minlength=4), [250, 250, 250, 250])

    def test_parts_are_disjoint_and_complete(self, splits):
        split = splits[('ring', 1)]
        keys = [set(zip(part.image_ids, part.layers)) for part in (split.train, split.test, split.cross_validation)]
        assert not keys[0] & keys[1] and not keys[0] & keys[2] and not keys[1] & keys[2]
        assert len(keys[0] | keys[1] | keys[2]) == 7188

    def test_split_is_seeded(self, corpus):
        batch = corpus[('circle', 2)]
        a = dataset_pipeline.split_configuration(batch, 5)
        b = dataset_pipeline.split_configuration(batch, 5)
        c = dataset_pipeline.split_configuration(batch, 6)
        assert np.array_equal(a.test.image_ids, b.test.image_ids)
        assert not np.array_equal(a.test.image_ids, c.test.image_ids)

    def test_merge_over_sizes(self, splits):
        merged = dataset_pipeline.merge_splits(splits, 'column', 'train')
        assert len(merged) == 19800
        assert merged.kind == 'column'

    def test_merge_unknown_kind(self, splits):
        with pytest.raises(DataError):
            dataset_pipeline.merge_splits({k: v for k, v in splits.items() if k[0] != 'ring'}, 'ring', 'test')

    def test_wrong_configuration_size(self, corpus):
        with pytest.raises(DataError):
            dataset_pipeline.split_configuration(corpus[('row', 1)].take(np.arange(100)), 0)
