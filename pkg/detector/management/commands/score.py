"""
Score datasets with the combined OOD score.

One CSV per data file; the header records the codec, lambda, delta and
units next to the resolved config.
"""

import math
from pathlib import Path

from detector.complexity import get_codec
from detector.data import load_dataset
from detector.exceptions import ConfigurationError
from detector.huber_density import lambda_coefficient, norm_const
from detector.manifold import load_model
from detector.reports import provenance_lines, read_calibration
from detector.scoring import ood_score, write_scores

from ._base import ConfigCommand

UNITS = 'nll_nats=nats bpd=bits/dim penalty=data units squared ic_bits=bits'


class Command(ConfigCommand):
    help = 'Write one score CSV per data file'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', nargs='+', help='Data files (default eval.id_path and eval.ood_paths)')
        parser.add_argument('--checkpoint', help='Checkpoint (default checkpoint.path)')
        parser.add_argument('--calibration', help='Calibration report (default <output.dir>/calibration.txt)')
        parser.add_argument('--no-ic', action='store_true', help='Leave out the complexity term')
        parser.add_argument('--output', help='Score CSV path (only with a single data file)')

    def run(self, *args, **options):
        config = self.config
        paths = options['data'] or [p for p in (config.eval_id_path, *config.eval_ood_paths) if p]
        if not paths:
            raise ConfigurationError('score needs --data or eval.id_path / eval.ood_paths')
        if options['output'] and len(paths) > 1:
            raise ConfigurationError('--output takes a single data file')

        model, spec, _ = load_model(self.checkpoint_path(options['checkpoint']))
        fit, _ = read_calibration(self.calibration_path(options['calibration']))
        use_ic = config.use_ic and not options['no_ic']
        codec = get_codec(config.codec) if use_ic else None
        omitted = math.log(norm_const(fit.delta, fit.scale)) if fit.kind == 'huber' else None

        for path in paths:
            dataset = load_dataset(path)
            records = ood_score(model, dataset.values, spec, fit, use_ic=use_ic, codec=codec,
                                c_const=config.c_const, image_shape=dataset.image_shape)
            header = provenance_lines('score', config, {
                'data': path,
                'dim': model.split.D,
                'codec': codec.describe() if codec else 'none',
                'c_const': config.c_const,
                'delta': spec.delta,
                'lambda': lambda_coefficient(fit, config.c_const),
                'fit.kind': fit.kind,
                'fit.scale': fit.scale,
                'omitted_log_norm_const': '' if omitted is None else omitted,
                'ic_clamped': sum(r.clamped for r in records) if use_ic else '',
                'units': UNITS,
            })
            output = Path(options['output'] or self.output_dir() / 'scores' / f'{Path(path).stem}.csv')
            write_scores(output, records, header)
            valid = sum(r.valid for r in records)
            self.success(f'{path}: {valid}/{len(records)} valid scores -> {output}')
