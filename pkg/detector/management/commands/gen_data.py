"""
Generate or ingest a dataset and store it as a tensor file plus sidecar.
"""

from detector.data import (
    add_dequantization_noise, gen_embedded_manifold, gen_semicircle, load_idx,
    save_dataset, shuffle_pixels,
)
from detector.exceptions import ConfigurationError
from detector.reports import provenance_lines

from ._base import DetectorCommand

KINDS = ('semicircle', 'embedded', 'idx')


class Command(DetectorCommand):
    help = 'Write a semicircle, embedded-manifold or IDX dataset as a tensor file'

    def add_arguments(self, parser):
        parser.add_argument('--kind', required=True, help=' | '.join(KINDS))
        parser.add_argument('--output', required=True, help='Tensor path; the sidecar goes next to it')
        parser.add_argument('--n', type=int, default=1000)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--noise-sigma', type=float, default=None)
        parser.add_argument('--profile', default='uniform', help='semicircle: uniform | concentrated')
        parser.add_argument('--d', type=int, default=4, help='embedded: manifold dimension')
        parser.add_argument('--D', type=int, default=16, help='embedded: ambient dimension')
        parser.add_argument('--nonlinearity', default='none', help='embedded: none | smooth')
        parser.add_argument('--embedding-seed', type=int, default=None)
        parser.add_argument('--idx-path', help='idx: IDX image file (optionally .gz)')
        parser.add_argument('--pool', type=int, default=1, help='idx: average-pool factor')
        parser.add_argument('--limit', type=int, default=None, help='idx: keep the first N images')
        parser.add_argument('--shuffle-pixels', action='store_true', help='Permute pixels per row')
        parser.add_argument('--dequantize', action='store_true', help='Add uniform dequantization noise')

    def run(self, *args, **options):
        kind = options['kind']
        seed = options['seed']
        if kind == 'semicircle':
            noise = 0.05 if options['noise_sigma'] is None else options['noise_sigma']
            dataset = gen_semicircle(options['n'], noise_sigma=noise, profile=options['profile'], seed=seed)
        elif kind == 'embedded':
            noise = 0.0 if options['noise_sigma'] is None else options['noise_sigma']
            dataset = gen_embedded_manifold(options['n'], options['d'], options['D'],
                                            nonlinearity=options['nonlinearity'], noise_sigma=noise,
                                            seed=seed, embedding_seed=options['embedding_seed'])
        elif kind == 'idx':
            if not options['idx_path']:
                raise ConfigurationError('--kind idx needs --idx-path')
            dataset = load_idx(options['idx_path'], pool=options['pool'])
            if options['limit'] is not None:
                dataset.values = dataset.values[:options['limit']]
        else:
            raise ConfigurationError(f'unknown dataset kind {kind!r}; use one of {KINDS}')

        if options['shuffle_pixels']:
            dataset = shuffle_pixels(dataset, seed=seed)
        if options['dequantize']:
            dataset = add_dequantization_noise(dataset, seed=seed)

        output = save_dataset(options['output'], dataset, extra={
            'provenance': provenance_lines('gen_data', extra={'kind': kind, 'seed': seed}),
        })
        self.success(f'{len(dataset)} x {dataset.dim} {dataset.generator} samples -> {output}')
