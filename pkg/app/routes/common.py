from flask import Blueprint, jsonify
from app.services.analog_core import G_OFF, G_ON, LAYER_DIMS
from app.services.defect_engine import DEFECT_KINDS, STUCK_MODES
from app.utils.ladder import describe_ladder

common_bp = Blueprint('common', __name__)

@common_bp.route('/health', methods=['GET'])
def health_check():
    return jsonify({"status": "ok"}), 200

@common_bp.route('/ladder', methods=['GET'])
def get_ladder():
    """
    Corrector architectures with their parameter counts and complexity category.
    """
    return jsonify(describe_ladder()), 200

@common_bp.route('/defect-kinds', methods=['GET'])
def get_defect_kinds():
    return jsonify({
        'kinds': list(DEFECT_KINDS),
        'stuckModes': list(STUCK_MODES),
        'layers': [{'index': i, 'rows': rows, 'cols': cols} for i, (rows, cols) in enumerate(LAYER_DIMS)],
        'conductance': {'gOn': G_ON, 'gOff': G_OFF},
    }), 200
