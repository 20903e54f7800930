"""End-to-end experiments: baseline, corpus, correction studies and their reports.

Reported accuracies come from the cross-validation split of each configuration;
the internal test split only drives corrector early stopping.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from app.errors import AcceptanceError, DataError, DomainError, ShapeError
from app.services import analog_core, dataset_pipeline, defect_engine, neural
from app.utils.experiment_config import MIXED
from app.utils.ladder import get_ladder, resolve_architecture

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['experiment', 'kind_train', 'kind_test', 'architecture', 'size', 'layer', 'severity_pairs',
                  'coverage', 'acc_faulty', 'acc_corrected', 'delta_pp', 'n_samples', 'seed']
REPORT_VERSION = 1

SAME_DEFECT_FLOORS = {'circle': 20.0, 'ring': 20.0, 'row': 20.0, 'column': 20.0, 'circle_complement': 8.0}
CROSS_DEFECT_FLOORS = {('ring', 'circle'): 8.0, ('row', 'column'): 5.0}
CHECKERBOARD_TRANSFER_CEILING = 8.0
# kind -> layer whose defect costs the most accuracy at the largest size
LAYER_DIRECTION = {'circle': 3, 'circle_complement': 0}
TINY_ARCHITECTURE = 'MLP(1,)'


@dataclass
class ReportRow:
    experiment: str
    kind_train: str
    kind_test: str
    architecture: str
    size: int
    layer: int
    severity_pairs: int
    coverage: float
    acc_faulty: float
    acc_corrected: float
    delta_pp: float
    n_samples: int
    seed: int

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalReport:
    experiment: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict, repr=False)

    def to_report(self):
        return self

    def to_dict(self):
        return {
            'version': REPORT_VERSION,
            'experiment': self.experiment,
            'summary': self.summary,
            'rows': [row.to_dict() for row in self.rows],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get('version') != REPORT_VERSION:
            raise DataError(f"unsupported report version {data.get('version')}")
        return cls(data['experiment'], [ReportRow(**row) for row in data['rows']], data.get('summary') or {})


@dataclass
class CrossDefectMatrix:
    train_kinds: list
    test_kinds: list
    values: dict
    rows: list = field(default_factory=list)
    models: dict = field(default_factory=dict, repr=False)

    def delta(self, train_kind, test_kind):
        return self.values[train_kind][test_kind]

    def diagonal(self):
        return {kind: self.values[kind][kind] for kind in self.train_kinds if kind in self.test_kinds}

    def to_report(self):
        return EvalReport('cross_defect', self.rows, {'matrix': self.values}, self.models)


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.shape} predictions vs {labels.shape} labels")
    if labels.size == 0:
        raise DomainError("accuracy of an empty sample set is undefined")
    return float(np.count_nonzero(predictions == labels)) / labels.size


def delta_accuracy(a_corrected, a_faulty):
    """Improvement in percentage points."""
    for value in (a_corrected, a_faulty):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"accuracies must lie in [0, 1], got {value}")
    return (a_corrected - a_faulty) * 100.0


def _severity(kind, size_index, layer_index):
    mask = defect_engine.build_mask(defect_engine.DefectSpec(kind, layer_index, size_index))
    return defect_engine.severity_pairs(mask), defect_engine.coverage(mask)


def _mean(values):
    return float(np.mean(values)) if values else None


# --- pipeline stages -------------------------------------------------------

def circuit_software_mismatches(params, pixels):
    """Images on which the defect-free circuit's argmax differs from the software network's."""
    _, circuit_predictions = analog_core.forward_inference_batch(
        analog_core.build_circuit(neural.export_crossbar_weights(params)), pixels)
    software_predictions = neural.predict(params, neural.pixels_to_inputs(pixels))
    return int(np.count_nonzero(circuit_predictions != software_predictions))


def layer_accuracies(layer_weights, pixels, labels, kind, size_index, stuck_mode='stuck_off'):
    """Uncorrected accuracy with the defect placed in each layer in turn, keyed by layer."""
    batch = dataset_pipeline.simulate_configuration(analog_core.build_circuit(layer_weights), pixels, labels, kind,
                                                    size_index, stuck_mode)
    return {layer_index: accuracy(batch.faulty_predictions[batch.layers == layer_index],
                                  batch.labels[batch.layers == layer_index])
            for layer_index in range(dataset_pipeline.N_LAYERS)}


def layer_direction_failures(accuracies):
    """``accuracies`` maps kind -> {layer: accuracy} at the largest defect size."""
    failures = []
    for kind, worst_layer in LAYER_DIRECTION.items():
        per_layer = accuracies.get(kind)
        if not per_layer:
            continue
        worst = min(per_layer, key=per_layer.get)
        if worst != worst_layer:
            failures.append(f"layer sweep {kind}: largest loss in layer {worst}, expected layer {worst_layer}")
    return failures


def _layer_direction_screen(pixels, labels, stuck_mode):
    size_index = max(defect_engine.SIZE_INDICES)

    def screen(params):
        layer_weights = neural.export_crossbar_weights(params)
        accuracies = {kind: layer_accuracies(layer_weights, pixels, labels, kind, size_index, stuck_mode)
                      for kind in LAYER_DIRECTION}
        params.metrics['layer_accuracies'] = {kind: {str(k): v for k, v in acc.items()}
                                              for kind, acc in accuracies.items()}
        return layer_direction_failures(accuracies)
    return screen


def train_base_stage(config, snapshot=False):
    """Train the baseline and write ``baseline.json``; returns the params.

    With ``config.baseline_layer_screen`` the restarts also skip candidates whose
    circuit breaks the expected layer-sensitivity direction. ``snapshot`` writes
    the defect-free arrays next to the weights.
    """
    samples = dataset_pipeline.load_digits(config.digits_path)
    train, test = dataset_pipeline.split_base(samples, config.seeds['base'])
    train_x, train_y = dataset_pipeline.as_arrays(train)
    test_x, test_y = dataset_pipeline.as_arrays(test)
    all_x, all_y = dataset_pipeline.as_arrays(samples)
    screen = _layer_direction_screen(all_x, all_y, config.stuck_mode) if config.baseline_layer_screen else None
    params = neural.train_baseline(train_x, train_y, test_x, test_y, config.baseline_train_config(),
                                   min_accuracy=config.baseline_min_accuracy, restarts=config.baseline_restarts,
                                   screen=screen)

    mismatches = circuit_software_mismatches(params, all_x)
    params.metrics['circuit_software_mismatches'] = mismatches
    if mismatches:
        logger.warning("defect-free circuit disagrees with software on %d images", mismatches)

    os.makedirs(config.output_dir, exist_ok=True)
    neural.save_params(params, config.baseline_path)
    if snapshot:
        paths = analog_core.save_circuit(analog_core.build_circuit(neural.export_crossbar_weights(params)),
                                         config.arrays_dir)
        logger.info("wrote %d array snapshots to %s", len(paths), config.arrays_dir)
    logger.info("baseline saved to %s (test accuracy %.4f)", config.baseline_path, params.metrics['test_accuracy'])
    return params


def load_baseline(config):
    if not os.path.exists(config.baseline_path):
        raise DataError(f"no baseline at {config.baseline_path}; run train-base first")
    return neural.load_params(config.baseline_path)


def gen_corpus_stage(config):
    params = load_baseline(config)
    samples = dataset_pipeline.load_digits(config.digits_path)
    corpus = dataset_pipeline.generate_corpus(neural.export_crossbar_weights(params), samples,
                                              stuck_mode=config.stuck_mode, workers=config.workers)
    return dataset_pipeline.save_corpus(corpus, config.corpus_dir, config.seeds, baseline_path=config.baseline_path,
                                        stuck_mode=config.stuck_mode, split_seed=config.seeds['corpus'])


def load_splits(config, kinds=None):
    corpus = dataset_pipeline.load_corpus(config.corpus_dir, kinds=kinds)
    if not corpus:
        raise DataError(f"corpus in {config.corpus_dir} has no configuration for {kinds}")
    return dataset_pipeline.split_corpus(corpus, config.seeds['corpus'])


def clean_circuit_accuracy(config):
    """Defect-free circuit accuracy over every image (severity 0 anchor)."""
    params = load_baseline(config)
    samples = dataset_pipeline.load_digits(config.digits_path)
    pixels, labels = dataset_pipeline.as_arrays(samples)
    arrays = analog_core.build_circuit(neural.export_crossbar_weights(params))
    _, predictions = analog_core.forward_inference_batch(arrays, pixels)
    return accuracy(predictions, labels)


# --- correctors ---------------------------------------------------------------

def _kinds_in(splits):
    seen = []
    for kind, _ in splits:
        if kind not in seen:
            seen.append(kind)
    return seen


def _corrector_seed(config, train_kind, architecture):
    kinds = defect_engine.DEFECT_KINDS + (MIXED,)
    return config.seeds['corrector'] * 1000 + kinds.index(train_kind) * 100 + get_ladder(True).index(architecture)


def train_kind_corrector(splits, train_kind, architecture, config):
    """Corrector trained on every size and layer of one defect kind."""
    train = dataset_pipeline.merge_splits(splits, train_kind, 'train')
    test = dataset_pipeline.merge_splits(splits, train_kind, 'test')
    train_config = config.corrector_train_config(rng_seed=_corrector_seed(config, train_kind, architecture))
    logger.info("training %s on %s (%d samples)", architecture, train_kind, len(train))
    return neural.train_corrector(resolve_architecture(architecture), train.voltages, train.labels, train_config,
                                  validation=(test.voltages, test.labels))


def train_mixed_corrector(splits, architecture, config, kinds=None):
    """Corrector trained on the union of several kinds' training splits."""
    kinds = kinds or _kinds_in(splits)
    train = dataset_pipeline.FaultyBatch.concat([dataset_pipeline.merge_splits(splits, k, 'train') for k in kinds])
    test = dataset_pipeline.FaultyBatch.concat([dataset_pipeline.merge_splits(splits, k, 'test') for k in kinds])
    train_config = config.corrector_train_config(rng_seed=_corrector_seed(config, MIXED, architecture))
    logger.info("training %s on mixed kinds %s (%d samples)", architecture, kinds, len(train))
    return neural.train_corrector(resolve_architecture(architecture), train.voltages, train.labels, train_config,
                                  validation=(test.voltages, test.labels))


def _train_for(splits, train_kind, architecture, config):
    if train_kind == MIXED:
        return train_mixed_corrector(splits, architecture, config)
    return train_kind_corrector(splits, train_kind, architecture, config)


def evaluate_corrector(params, splits, test_kind, experiment, train_kind, architecture, seed):
    """One report row per (size, layer) cell of the test kind's cross-validation data."""
    rows = []
    for (kind, size_index), split in splits.items():
        if kind != test_kind:
            continue
        cv = split.cross_validation
        corrected = neural.predict(params, cv.voltages)
        for layer_index in range(dataset_pipeline.N_LAYERS):
            in_layer = cv.layers == layer_index
            labels = cv.labels[in_layer]
            acc_faulty = accuracy(cv.faulty_predictions[in_layer], labels)
            acc_corrected = accuracy(corrected[in_layer], labels)
            pairs, cov = _severity(kind, size_index, layer_index)
            rows.append(ReportRow(experiment, train_kind, test_kind, architecture, size_index, layer_index, pairs,
                                  cov, acc_faulty, acc_corrected, delta_accuracy(acc_corrected, acc_faulty),
                                  int(labels.size), seed))
    if not rows:
        raise DataError(f"corpus has no configuration for defect kind '{test_kind}'")
    return rows


def _severity_curve(rows):
    """Mean delta per size over layers, keyed by size as a string."""
    curve = {}
    for row in rows:
        curve.setdefault(str(row.size), []).append(row.delta_pp)
    return {size: _mean(values) for size, values in curve.items()}


def _select(requested, available):
    if requested is None:
        return list(available)
    if requested != MIXED and requested not in available:
        raise DataError(f"corpus has no configuration for defect kind '{requested}'")
    return [requested]


def _pair_summary(rows):
    return {
        'mean_delta_pp': _mean([r.delta_pp for r in rows]),
        'mean_acc_faulty': _mean([r.acc_faulty for r in rows]),
        'mean_acc_corrected': _mean([r.acc_corrected for r in rows]),
        'by_size': _severity_curve(rows),
    }


def run_same_defect(config, splits):
    kinds = _select(config.train_defect if config.train_defect != MIXED else None, _kinds_in(splits))
    report = EvalReport('same_defect')
    for kind in kinds:
        params = train_kind_corrector(splits, kind, config.corrector, config)
        rows = evaluate_corrector(params, splits, kind, 'same_defect', kind, config.corrector,
                                  config.seeds['corrector'])
        report.rows.extend(rows)
        report.summary[kind] = _pair_summary(rows)
        report.models[f"{config.corrector}@{kind}"] = params
        logger.info("same-defect %s: mean delta %+.2f pp", kind, report.summary[kind]['mean_delta_pp'])
    return report


def run_cross_defect(config, splits):
    available = _kinds_in(splits)
    train_kinds = _select(config.train_defect, available)
    test_kinds = _select(config.test_defect, available)
    values, rows, models = {}, [], {}
    for train_kind in train_kinds:
        params = _train_for(splits, train_kind, config.corrector, config)
        models[f"{config.corrector}@{train_kind}"] = params
        values[train_kind] = {}
        for test_kind in test_kinds:
            experiment = 'same_defect' if train_kind == test_kind else 'cross_defect'
            cell_rows = evaluate_corrector(params, splits, test_kind, experiment, train_kind, config.corrector,
                                           config.seeds['corrector'])
            rows.extend(cell_rows)
            values[train_kind][test_kind] = _mean([r.delta_pp for r in cell_rows])
            logger.info("cross-defect %s -> %s: mean delta %+.2f pp", train_kind, test_kind,
                        values[train_kind][test_kind])
    return CrossDefectMatrix(train_kinds, test_kinds, values, rows, models)


def run_layer_sweep(config, corpus, clean_accuracy=None):
    """Uncorrected faulty accuracy per (kind, size, layer) with its severity."""
    report = EvalReport('layer_sweep')
    kinds = _kinds_in(corpus)
    for kind in kinds:
        if clean_accuracy is not None:
            for layer_index in range(dataset_pipeline.N_LAYERS):
                report.rows.append(ReportRow('layer_sweep', None, kind, None, 0, layer_index, 0, 0.0, clean_accuracy,
                                             None, None, dataset_pipeline.N_IMAGES, config.seeds['corpus']))
        for (k, size_index), batch in corpus.items():
            if k != kind:
                continue
            for layer_index in range(dataset_pipeline.N_LAYERS):
                in_layer = batch.layers == layer_index
                pairs, cov = _severity(kind, size_index, layer_index)
                acc = accuracy(batch.faulty_predictions[in_layer], batch.labels[in_layer])
                report.rows.append(ReportRow('layer_sweep', None, kind, None, size_index, layer_index, pairs, cov, acc,
                                             None, None, int(np.count_nonzero(in_layer)), config.seeds['corpus']))
    for kind in kinds:
        per_layer = {}
        for row in report.rows:
            if row.kind_test == kind and row.size != 0:
                per_layer.setdefault(str(row.layer), []).append(
                    {'size': row.size, 'severity_pairs': row.severity_pairs, 'accuracy': row.acc_faulty})
        report.summary[kind] = per_layer
    if clean_accuracy is not None:
        report.summary['clean_accuracy'] = clean_accuracy
    return report


def run_ladder(config, splits):
    """Improvement-vs-severity curves for every architecture under the configured pairings."""
    report = EvalReport('ladder')
    available = _kinds_in(splits)
    pairings = [tuple(p) for p in config.pairings if p[0] in available and p[1] in available]
    if not pairings:
        raise DataError("no configured pairing is covered by the corpus")
    train_kinds = []
    for train_kind, _ in pairings:
        if train_kind not in train_kinds:
            train_kinds.append(train_kind)

    for architecture in config.architectures:
        report.summary[architecture] = {}
        for train_kind in train_kinds:
            params = _train_for(splits, train_kind, architecture, config)
            report.models[f"{architecture}@{train_kind}"] = params
            for pair_train, test_kind in pairings:
                if pair_train != train_kind:
                    continue
                rows = evaluate_corrector(params, splits, test_kind, 'ladder', train_kind, architecture,
                                          config.seeds['corrector'])
                report.rows.extend(rows)
                report.summary[architecture][f"{train_kind}->{test_kind}"] = _pair_summary(rows)
        logger.info("ladder: %s done", architecture)
    return report


# --- acceptance ---------------------------------------------------------------

def check_acceptance(experiment, result):
    """Threshold failures for one experiment result (empty list when it passes)."""
    failures = []
    if experiment == 'same_defect':
        for kind, floor in SAME_DEFECT_FLOORS.items():
            summary = result.summary.get(kind)
            if summary and summary['mean_delta_pp'] < floor:
                failures.append(f"same-defect {kind}: mean delta {summary['mean_delta_pp']:+.2f} pp < +{floor} pp")
    elif experiment == 'cross_defect':
        values = result.values
        for (a, b), floor in CROSS_DEFECT_FLOORS.items():
            both = [values[x][y] for x, y in ((a, b), (b, a)) if x in values and y in values[x]]
            if both and _mean(both) < floor:
                failures.append(f"cross-defect {a}<->{b}: mean delta {_mean(both):+.2f} pp < +{floor} pp")
        if 'checkerboard' in values:
            targets = [values['checkerboard'][k] for k in ('circle', 'ring', 'row', 'column')
                       if k in values['checkerboard']]
            if targets and _mean(targets) > CHECKERBOARD_TRANSFER_CEILING:
                failures.append(f"checkerboard transfer {_mean(targets):+.2f} pp > +{CHECKERBOARD_TRANSFER_CEILING} pp")
    elif experiment == 'ladder':
        tiny = [r for r in result.rows if r.architecture == TINY_ARCHITECTURE]
        by_kind = {}
        for row in tiny:
            by_kind.setdefault(row.kind_test, []).append(row)
        for kind, rows in by_kind.items():
            if _mean([r.acc_corrected for r in rows]) >= _mean([r.acc_faulty for r in rows]):
                failures.append(f"{TINY_ARCHITECTURE} did not degrade accuracy on {kind}")
    elif experiment == 'layer_sweep':
        accuracies = {}
        for row in result.rows:
            if row.kind_test in LAYER_DIRECTION and row.size == max(defect_engine.SIZE_INDICES):
                accuracies.setdefault(row.kind_test, {})[row.layer] = row.acc_faulty
        failures.extend(layer_direction_failures(accuracies))
    return failures


def enforce_acceptance(experiment, result):
    failures = check_acceptance(experiment, result)
    if failures:
        raise AcceptanceError(failures)


# --- reports ------------------------------------------------------------------

def report_frame(report):
    report = report.to_report()
    return pd.DataFrame([row.to_dict() for row in report.rows], columns=REPORT_COLUMNS)


def emit_report(report, fmt, path):
    """Write a report as CSV (one row per cell) or JSON (rows plus summary)."""
    report = report.to_report()
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        if fmt == 'csv':
            report_frame(report).to_csv(path, index=False, float_format='%.10g', lineterminator='\n')
        elif fmt == 'json':
            with open(path, 'w') as f:
                json.dump(report.to_dict(), f, indent=2, sort_keys=True)
                f.write('\n')
        else:
            raise DomainError(f"unsupported report format '{fmt}'")
    except OSError as e:
        raise DataError(f"cannot write report to {path}: {e}")
    logger.info("wrote %s report (%d rows) to %s", fmt, len(report.rows), path)
    return path


def load_report(path):
    if not os.path.exists(path):
        raise DataError(f"report not found: {path}")
    with open(path) as f:
        return EvalReport.from_dict(json.load(f))
