import os
from flask import Blueprint, jsonify, request
from app.models.experiment_run_model import ExperimentRun
from app.services.harness import load_report

experiments_bp = Blueprint('experiments_bp', __name__)

@experiments_bp.route('', methods=['GET'])
def list_runs():
    query = ExperimentRun.query
    command = request.args.get('command')
    status = request.args.get('status')
    if command: query = query.filter_by(command=command)
    if status: query = query.filter_by(status=status)
    runs = query.order_by(ExperimentRun.id.desc()).all()
    return jsonify([run.to_dict() for run in runs]), 200

@experiments_bp.route('/<int:run_id>', methods=['GET'])
def get_run(run_id):
    run = ExperimentRun.query.get_or_404(run_id)
    details = run.to_dict()
    details['artifacts'] = [artifact.to_dict() for artifact in run.artifacts]
    return jsonify(details), 200

@experiments_bp.route('/<int:run_id>/report', methods=['GET'])
def get_run_report(run_id):
    run = ExperimentRun.query.get_or_404(run_id)
    if not run.report_json_path or not os.path.exists(run.report_json_path):
        return jsonify({'message': 'This run has no report'}), 404
    return jsonify(load_report(run.report_json_path).to_dict()), 200
