"""Flask CLI commands that drive the pipeline: ``flask --app run <command> --config exp.json``."""
import json
import os

import click
from flask import current_app

from app.errors import AcceptanceError, ConfigError, XbarError
from app.extensions import db
from app.models.experiment_run_model import ExperimentRun
from app.models.model_artifact_model import ModelArtifact
from app.services import dataset_pipeline, defect_engine, harness, neural
from app.utils.experiment_config import load_experiment_config

BASELINE_ACCURACY_WINDOW = (0.947, 0.987)
EXPECTED_CORPUS_TOTAL = 150948
EXPECTED_SIZED_KIND_TOTAL = 28752
EXPECTED_CHECKERBOARD_TOTAL = 7188


def _config_defaults():
    return {
        'digits_path': current_app.config['DIGITS_PATH'],
        'output_dir': os.path.join(current_app.config['OUTPUT_DIR'], 'default'),
        'stuck_mode': current_app.config['STUCK_MODE'],
        'workers': current_app.config['WORKERS'],
    }


def _record_artifact(run, params, role, path):
    db.session.add(ModelArtifact(
        run=run,
        role=role,
        architecture=params.spec.name,
        parameters=neural.param_count(params.spec),
        path=path,
        train_accuracy=params.metrics.get('train_accuracy'),
        validation_accuracy=params.metrics.get('validation_accuracy'),
        test_accuracy=params.metrics.get('test_accuracy'),
    ))


def _save_correctors(run, config, result):
    directory = os.path.join(config.output_dir, 'correctors')
    os.makedirs(directory, exist_ok=True)
    for key, params in result.models.items():
        architecture, kind = key.split('@')
        path = os.path.join(directory, f"{kind}_{architecture}.json")
        neural.save_params(params, path)
        _record_artifact(run, params, 'corrector', path)


def _emit(run, config, experiment, result):
    base = os.path.join(config.reports_dir, experiment)
    run.report_json_path = harness.emit_report(result, 'json', base + '.json')
    run.report_csv_path = harness.emit_report(result, 'csv', base + '.csv')


def _execute(command, config_path, seed, body):
    """Run one command with a tracked ExperimentRun and exit with the error's code on failure."""
    ctx = click.get_current_context()
    try:
        config = load_experiment_config(config_path, seed=seed, defaults=_config_defaults())
    except ConfigError as e:
        click.echo(f"Config error: {e}", err=True)
        ctx.exit(e.exit_code)

    run = ExperimentRun(command=command, seed=config.seeds['base'], output_dir=config.output_dir,
                        config_json=json.dumps(config.to_dict(), sort_keys=True))
    db.session.add(run)
    db.session.commit()
    current_app.logger.info("run %d: %s started", run.id, command)

    try:
        summary = body(config, run)
    except XbarError as e:
        run.finish(error=str(e))
        db.session.commit()
        click.echo(f"{command} failed: {e}", err=True)
        ctx.exit(e.exit_code)
    except Exception as e:
        current_app.logger.exception("run %d: %s crashed", run.id, command)
        db.session.rollback()
        run.finish(error=f"{type(e).__name__}: {e}")
        db.session.commit()
        click.echo(f"{command} failed unexpectedly: {type(e).__name__}: {e}", err=True)
        ctx.exit(XbarError.exit_code)
    run.finish(summary=summary)
    db.session.commit()
    click.echo(f"{command} completed (run {run.id})")
    if summary is not None:
        click.echo(json.dumps(summary, indent=2, sort_keys=True))


def _common_options(f):
    f = click.option('--check', is_flag=True, help='Exit with code 4 when acceptance thresholds fail.')(f)
    f = click.option('--seed', type=int, default=None, help='Override every seed in the config.')(f)
    f = click.option('--config', 'config_path', required=True, type=click.Path(), help='Experiment JSON file.')(f)
    return f


def _corpus_failures(manifest):
    failures = []
    totals = {}
    for entry in manifest['configurations']:
        totals[entry['kind']] = totals.get(entry['kind'], 0) + entry['samples']
    for kind, total in totals.items():
        expected = EXPECTED_CHECKERBOARD_TOTAL if kind == 'checkerboard' else EXPECTED_SIZED_KIND_TOTAL
        if total != expected:
            failures.append(f"{kind}: {total} samples, expected {expected}")
    if set(totals) == set(defect_engine.DEFECT_KINDS) and manifest['total_samples'] != EXPECTED_CORPUS_TOTAL:
        failures.append(f"corpus total {manifest['total_samples']}, expected {EXPECTED_CORPUS_TOTAL}")
    return failures


def register_commands(app):

    @app.cli.command('train-base')
    @_common_options
    @click.option('--snapshot', is_flag=True, help='Also write the defect-free array snapshots.')
    def train_base(config_path, seed, check, snapshot):
        """Train the 64-50-20-8-10 baseline and save its weights."""
        def body(config, run):
            params = harness.train_base_stage(config, snapshot=snapshot)
            _record_artifact(run, params, 'baseline', config.baseline_path)
            low, high = BASELINE_ACCURACY_WINDOW
            if check:
                failures = []
                if not low <= params.metrics['test_accuracy'] <= high:
                    failures.append(f"baseline test accuracy {params.metrics['test_accuracy']:.4f} "
                                    f"outside [{low}, {high}]")
                if params.metrics['circuit_software_mismatches']:
                    failures.append(f"{params.metrics['circuit_software_mismatches']} circuit/software mismatches")
                failures.extend(params.metrics.get('screen_failures') or [])
                if failures:
                    raise AcceptanceError(failures)
            return params.metrics
        _execute('train-base', config_path, seed, body)

    @app.cli.command('gen-corpus')
    @_common_options
    def gen_corpus(config_path, seed, check):
        """Simulate every defect configuration and write the corpus files."""
        def body(config, run):
            manifest = harness.gen_corpus_stage(config)
            if check:
                failures = _corpus_failures(manifest)
                if failures:
                    raise AcceptanceError(failures)
            return {'total_samples': manifest['total_samples'], 'splits': manifest.get('splits')}
        _execute('gen-corpus', config_path, seed, body)

    def _experiment_command(name, experiment, runner):
        @app.cli.command(name)
        @_common_options
        def command(config_path, seed, check):
            def body(config, run):
                result = runner(config)
                _emit(run, config, experiment, result)
                if getattr(result, 'models', None):
                    _save_correctors(run, config, result)
                summary = result.to_report().summary
                if check:
                    harness.enforce_acceptance(experiment, result)
                return summary
            _execute(name, config_path, seed, body)
        command.__doc__ = f"Run the {experiment.replace('_', ' ')} experiment and emit its report."
        return command

    _experiment_command('same-defect', 'same_defect',
                        lambda config: harness.run_same_defect(config, harness.load_splits(config)))
    _experiment_command('cross-defect', 'cross_defect',
                        lambda config: harness.run_cross_defect(config, harness.load_splits(config)))
    _experiment_command('ladder', 'ladder',
                        lambda config: harness.run_ladder(config, harness.load_splits(config)))
    _experiment_command('layer-sweep', 'layer_sweep',
                        lambda config: harness.run_layer_sweep(
                            config, dataset_pipeline.load_corpus(config.corpus_dir),
                            clean_accuracy=harness.clean_circuit_accuracy(config)))

    @app.cli.command('report')
    @_common_options
    @click.option('--experiment', required=True,
                  type=click.Choice(['same_defect', 'cross_defect', 'layer_sweep', 'ladder']))
    @click.option('--format', 'fmt', type=click.Choice(['csv', 'json']), default='csv')
    @click.option('--output', type=click.Path(), default=None, help='Destination file.')
    def report(config_path, seed, check, experiment, fmt, output):
        """Re-emit a stored experiment report in another format or location."""
        def body(config, run):
            source = os.path.join(config.reports_dir, experiment + '.json')
            stored = harness.load_report(source)
            target = output or os.path.join(config.reports_dir, f"{experiment}.{fmt}")
            harness.emit_report(stored, fmt, target)
            if fmt == 'csv':
                run.report_csv_path = target
            else:
                run.report_json_path = target
            run.report_json_path = run.report_json_path or source
            return {'rows': len(stored.rows), 'path': target}
        _execute('report', config_path, seed, body)

    @app.cli.command('export-mask')
    @click.option('--kind', required=True, type=click.Choice(defect_engine.DEFECT_KINDS))
    @click.option('--size', 'size_index', type=int, default=None, help='Severity index 1..4 (omit for checkerboard).')
    @click.option('--layer', 'layers', type=int, multiple=True, help='Layer index; repeat for several (default all).')
    @click.option('--format', 'fmt', type=click.Choice(['csv', 'pgm']), default='csv')
    @click.option('--output', 'output_dir', required=True, type=click.Path(), help='Destination directory.')
    def export_mask(kind, size_index, layers, fmt, output_dir):
        """Write defect masks as 0/1 CSV grids or PGM images, one file per layer."""
        ctx = click.get_current_context()
        os.makedirs(output_dir, exist_ok=True)
        try:
            for layer_index in layers or range(dataset_pipeline.N_LAYERS):
                spec = defect_engine.DefectSpec(kind, layer_index, size_index)
                stem = kind if size_index is None else f"{kind}_s{size_index}"
                path = os.path.join(output_dir, f"{stem}_l{layer_index}.{fmt}")
                defect_engine.export_mask(defect_engine.build_mask(spec), path, fmt)
                click.echo(path)
        except XbarError as e:
            click.echo(f"export-mask failed: {e}", err=True)
            ctx.exit(e.exit_code)
