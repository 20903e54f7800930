import os
from flask import Blueprint, current_app, jsonify, request
from app.errors import XbarError
from app.services import analog_core, dataset_pipeline, defect_engine, diagnostics, neural

circuit_bp = Blueprint('circuit_bp', __name__)

def _defect_from(data):
    size = data.get('size')
    return defect_engine.DefectSpec(
        kind=data.get('kind'),
        layer_index=int(data.get('layer', 0)),
        size_index=int(size) if size not in (None, '') else None,
        stuck_mode=data.get('stuckMode') or current_app.config['STUCK_MODE'],
    )

def _baseline_circuit():
    baseline_path = current_app.config['BASELINE_PATH']
    if not os.path.exists(baseline_path):
        return None
    params = neural.load_params(baseline_path)
    return analog_core.build_circuit(neural.export_crossbar_weights(params))

@circuit_bp.route('/mask', methods=['GET'])
def get_mask():
    if not request.args.get('kind'):
        return jsonify({'message': 'kind is required'}), 400
    try:
        spec = _defect_from(request.args)
    except (XbarError, ValueError) as e:
        return jsonify({'message': str(e)}), 400
    mask = defect_engine.build_mask(spec)
    return jsonify({
        'defect': spec.to_dict(),
        'rows': mask.shape[0],
        'cols': mask.shape[1],
        'coverage': defect_engine.coverage(mask),
        'severityPairs': defect_engine.severity_pairs(mask),
        'grid': mask.astype(int).tolist(),
    }), 200

@circuit_bp.route('/infer', methods=['POST'])
def infer():
    data = request.get_json(silent=True) or {}
    pixels = data.get('pixels')
    if pixels is None:
        return jsonify({'message': 'pixels are required'}), 400

    arrays = _baseline_circuit()
    if arrays is None:
        return jsonify({'message': 'No trained baseline available; run train-base first'}), 404

    defect = None
    try:
        if data.get('defect'):
            defect = _defect_from(data['defect'])
            arrays = defect_engine.inject(arrays, defect)
        voltages, prediction = analog_core.forward_inference(arrays, pixels)
    except (ValueError, TypeError) as e:
        return jsonify({'message': f'invalid request: {e}'}), 400
    return jsonify({
        'voltages': voltages.tolist(),
        'prediction': prediction,
        'defect': defect.to_dict() if defect else None,
    }), 200

@circuit_bp.route('/diagnose', methods=['GET'])
def diagnose():
    """
    Clean vs faulty read-out of one dataset image, with the output-array
    contributions and the mechanism behind a misclassification.
    """
    if not request.args.get('kind'):
        return jsonify({'message': 'kind is required'}), 400
    try:
        image_id = int(request.args.get('imageId', 0))
        spec = _defect_from(request.args)
    except (XbarError, ValueError) as e:
        return jsonify({'message': str(e)}), 400
    if not 0 <= image_id < dataset_pipeline.N_IMAGES:
        return jsonify({'message': f'imageId must lie in 0..{dataset_pipeline.N_IMAGES - 1}'}), 400

    arrays = _baseline_circuit()
    if arrays is None:
        return jsonify({'message': 'No trained baseline available; run train-base first'}), 404

    sample = dataset_pipeline.load_digits(current_app.config['DIGITS_PATH'])[image_id]
    report = diagnostics.explain_misclassification(arrays, defect_engine.inject(arrays, spec), sample.pixels,
                                                   sample.label)
    report['imageId'] = image_id
    report['defect'] = spec.to_dict()
    return jsonify(report), 200

@circuit_bp.route('/arrays/<int:layer>', methods=['GET'])
def get_array_snapshot(layer):
    directory = os.path.join(os.path.dirname(current_app.config['BASELINE_PATH']), 'arrays')
    path = os.path.join(directory, analog_core.snapshot_filename(layer))
    if not os.path.exists(path):
        return jsonify({'message': f'No snapshot for layer {layer}; run train-base --snapshot'}), 404
    return jsonify(analog_core.array_to_dict(analog_core.load_array(path))), 200
