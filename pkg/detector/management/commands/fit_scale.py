"""
Fit the distance distribution of in-distribution reconstruction errors.
"""

import numpy as np

from detector.data import load_dataset
from detector.huber_density import fit_scale, lambda_coefficient
from detector.manifold import load_model, reconstruct
from detector.reports import provenance_lines, reconstruction_summary, write_calibration

from ._base import ConfigCommand, require


class Command(ConfigCommand):
    help = 'Fit k (Huber) or sigma_mse (MSE) to reconstruction errors and write the calibration report'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='Checkpoint (default checkpoint.path)')
        parser.add_argument('--data', help='ID data (default eval.id_path, then data.path)')
        parser.add_argument('--output', help='Report path (default <output.dir>/calibration.txt)')

    def run(self, *args, **options):
        config = self.config
        checkpoint = self.checkpoint_path(options['checkpoint'])
        data_path = require(options['data'] or config.eval_id_path or config.data_path,
                            'fit_scale needs --data, eval.id_path or data.path')
        model, spec, _ = load_model(checkpoint)
        dataset = load_dataset(data_path)

        residuals = dataset.values - reconstruct(model, dataset.values)
        fit = fit_scale(residuals, spec)
        summary = reconstruction_summary(residuals, spec.delta if spec.kind == 'huber' else None)
        header = provenance_lines('fit_scale', config, {'checkpoint': checkpoint, 'data': data_path})
        report = write_calibration(self.calibration_path(options['output']), fit, c_const=config.c_const,
                                   rmse=summary['rmse'], sqrt_huber=summary['sqrt_huber'], header_lines=header)

        label = 'k' if fit.kind == 'huber' else 'sigma_mse'
        self.success(f'{label}={fit.scale!r} lambda={lambda_coefficient(fit, config.c_const)!r} '
                     f'(N={fit.n}, iterations={fit.iterations}, max |e|={float(np.max(np.abs(residuals))):.4g})')
        self.success(f'report: {report}')
