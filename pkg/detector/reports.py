"""
Text outputs: provenance headers, training history, calibration reports
and evaluation metrics
"""

import csv
import math
from pathlib import Path

import numpy as np
import scipy
from django.template.loader import render_to_string

from . import __version__
from .config import format_value, parse_key_value_lines, read_key_value_file
from .exceptions import FormatError
from .huber_density import FittedScale, lambda_coefficient, norm_const
from .manifold import huber_fn

HISTORY_COLUMNS = ('epoch', 'loss', 'nll', 'penalty')
DEFAULT_C_SWEEP = (0.25, 1.0, 4.0)


def provenance_lines(command, config=None, extra=None):
    """Versions, command, config echo and any extra entries as "key = value" lines"""
    lines = [
        f'detector = {__version__}',
        f'numpy = {np.__version__}',
        f'scipy = {scipy.__version__}',
        f'command = {command}',
    ]
    if config is not None:
        lines.extend(config.echo())
    lines.extend(f'{key} = {format_value(value)}' for key, value in (extra or {}).items())
    return lines


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    return path


def write_history(path, history, header_lines=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        for line in header_lines:
            fh.write(f'# {line}\n')
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(HISTORY_COLUMNS)
        for record in history:
            writer.writerow([record.epoch, repr(record.loss), repr(record.nll), repr(record.penalty)])
    return path


def read_history(path):
    with open(path, encoding='utf-8', newline='') as fh:
        body = [line for line in fh.read().splitlines() if not line.startswith('#')]
    return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(body)]


# ============================================
# CALIBRATION
# ============================================

def reconstruction_summary(residuals, delta):
    """rmse and sqrt of the mean Huber penalty of flattened residuals"""
    r = np.asarray(residuals, dtype=float).ravel()
    summary = {'rmse': math.sqrt(float(np.mean(r * r))), 'sqrt_huber': None}
    if delta:
        summary['sqrt_huber'] = math.sqrt(float(np.mean(huber_fn(np.abs(r), delta))))
    return summary


def write_calibration(path, fit, c_const=1.0, rmse=None, sqrt_huber=None, header_lines=(),
                      c_sweep=DEFAULT_C_SWEEP):
    log_c = math.log(norm_const(fit.delta, fit.scale)) if fit.kind == 'huber' else None
    context = {
        'provenance': list(header_lines),
        'fit': fit,
        'log_norm_const': log_c,
        'rmse': rmse,
        'sqrt_huber': sqrt_huber,
        'c_const': float(c_const),
        'lambda': lambda_coefficient(fit, c_const),
        'lambda_sweep': [(float(c), lambda_coefficient(fit, c)) for c in c_sweep],
    }
    return _write_text(path, render_to_string('detector/calibration.txt', context))


def read_calibration(path):
    """Return (FittedScale, dict of every raw report value)"""
    values = read_key_value_file(path)
    try:
        fit = FittedScale(
            kind=values['kind'],
            scale=float(values['scale']),
            n=int(values['n']),
            delta=float(values['delta']) if values.get('delta') else None,
            nll=float(values['nll']),
            iterations=int(values['iterations']),
            at_boundary=values.get('at_boundary', ''),
            fallback=values.get('fallback') == 'true',
        )
    except KeyError as exc:
        raise FormatError(f'{path}: calibration report has no {exc.args[0]!r}') from None
    except ValueError as exc:
        raise FormatError(f'{path}: bad calibration value: {exc}') from None
    return fit, values


# ============================================
# METRICS
# ============================================

def write_metrics(path, result, header_lines=()):
    context = {
        'provenance': list(header_lines),
        'result': result,
        'variants': result.variants,
    }
    return _write_text(path, render_to_string('detector/metrics.txt', context))


def read_metrics(path):
    text = Path(path).read_text(encoding='utf-8')
    return parse_key_value_lines(text.splitlines(), source=str(path))
