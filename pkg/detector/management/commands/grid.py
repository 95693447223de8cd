"""
Evaluate NLL, penalty and combined score on a regular 2-D grid for plotting.
"""

import csv
import math
from pathlib import Path

import numpy as np

from detector.exceptions import ConfigurationError
from detector.manifold import load_model
from detector.reports import provenance_lines, read_calibration
from detector.scoring import ood_score

from ._base import ConfigCommand

GRID_COLUMNS = ('x', 'y', 'nll', 'penalty', 'score')


def grid_axis(lo, hi, step):
    """lo, lo+step, ... up to hi (inclusive when step divides the range)"""
    if not step > 0 or not hi > lo:
        raise ConfigurationError(f'grid needs lo < hi and step > 0, got lo={lo}, hi={hi}, step={step}')
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


class Command(ConfigCommand):
    help = 'Write x,y,nll,penalty,score over a grid for a D=2 model'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='Checkpoint (default checkpoint.path)')
        parser.add_argument('--calibration', help='Calibration report (default <output.dir>/calibration.txt)')
        parser.add_argument('--lo', type=float, default=-2.0)
        parser.add_argument('--hi', type=float, default=2.0)
        parser.add_argument('--step', type=float, default=0.05)
        parser.add_argument('--output', help='Grid CSV (default <output.dir>/grid.csv)')

    def run(self, *args, **options):
        config = self.config
        model, spec, _ = load_model(self.checkpoint_path(options['checkpoint']))
        if model.split.D != 2:
            raise ConfigurationError(f'grid export needs a D=2 model, got D={model.split.D}')
        fit, _ = read_calibration(self.calibration_path(options['calibration']))

        axis = grid_axis(options['lo'], options['hi'], options['step'])
        xs, ys = np.meshgrid(axis, axis, indexing='ij')
        points = np.stack([xs.ravel(), ys.ravel()], axis=1)
        records = ood_score(model, points, spec, fit, use_ic=False, c_const=config.c_const)

        output = Path(options['output'] or self.output_dir() / 'grid.csv')
        output.parent.mkdir(parents=True, exist_ok=True)
        header = provenance_lines('grid', config, {
            'lo': options['lo'], 'hi': options['hi'], 'step': options['step'], 'fit.scale': fit.scale,
        })
        with open(output, 'w', encoding='utf-8', newline='') as fh:
            for line in header:
                fh.write(f'# {line}\n')
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(GRID_COLUMNS)
            for point, record in zip(points, records):
                writer.writerow([repr(float(point[0])), repr(float(point[1])), repr(record.nll_nats),
                                 repr(record.penalty), repr(record.score)])
        self.success(f'{len(records)} grid points -> {output}')
