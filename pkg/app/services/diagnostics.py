"""Why a faulty circuit changed its answer.

With the defect in the output array, a wrong prediction comes either from the true
class column losing voltage or from a rival column gaining it.
"""
import numpy as np

from app.services import analog_core

TRUE_COLUMN_SUPPRESSED = 'true_column_suppressed'
RIVAL_COLUMN_BOOSTED = 'rival_column_boosted'


def layer_inputs(arrays, pixels, read_voltage=analog_core.READ_VOLTAGE):
    """Input voltage vector (bias entry included) seen by each array."""
    v = analog_core.encode_pixels(pixels, read_voltage)
    inputs = []
    for array in arrays:
        inputs.append(v)
        v = np.append(analog_core.layer_output(array, v), read_voltage)
    return inputs


def damaged_cells(clean_array, faulty_array):
    """Cells whose differential conductance differs between two arrays."""
    return clean_array.differential != faulty_array.differential


def explain_misclassification(clean_arrays, faulty_arrays, pixels, label):
    """JSON-ready account of one image on a clean and a faulty circuit.

    Contributions are the output array's signed per-cell voltage shares (rows x columns).
    """
    clean_voltages, clean_prediction = analog_core.forward_inference(clean_arrays, pixels)
    faulty_voltages, faulty_prediction = analog_core.forward_inference(faulty_arrays, pixels)

    output_index = len(clean_arrays) - 1
    clean_in = layer_inputs(clean_arrays, pixels)[output_index]
    faulty_in = layer_inputs(faulty_arrays, pixels)[output_index]
    damage = damaged_cells(clean_arrays[output_index], faulty_arrays[output_index])

    report = {
        'true_label': int(label),
        'clean_prediction': clean_prediction,
        'faulty_prediction': faulty_prediction,
        'clean_voltages': clean_voltages.tolist(),
        'faulty_voltages': faulty_voltages.tolist(),
        'damaged_cells_per_column': damage.sum(axis=0).tolist(),
        'clean_contributions': analog_core.cell_contributions(clean_arrays[output_index], clean_in).tolist(),
        'faulty_contributions': analog_core.cell_contributions(faulty_arrays[output_index], faulty_in).tolist(),
        'mechanism': None,
    }
    if faulty_prediction == label:
        return report

    true_drop = clean_voltages[label] - faulty_voltages[label]
    rival_rise = faulty_voltages[faulty_prediction] - clean_voltages[faulty_prediction]
    report['true_voltage_drop'] = float(true_drop)
    report['rival_voltage_rise'] = float(rival_rise)
    report['mechanism'] = TRUE_COLUMN_SUPPRESSED if true_drop >= rival_rise else RIVAL_COLUMN_BOOSTED
    return report
