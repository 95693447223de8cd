"""
Draw samples from a trained model.
"""

from pathlib import Path

from detector.data import Dataset, save_dataset
from detector.exceptions import ConfigurationError
from detector.flow import sample
from detector.manifold import load_model
from detector.reports import provenance_lines

from ._base import ConfigCommand


class Command(ConfigCommand):
    help = 'Sample n points (mode full or manifold) into a tensor file with a metadata sidecar'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='Checkpoint (default checkpoint.path)')
        parser.add_argument('--n', type=int, default=1000)
        parser.add_argument('--mode', default='full', help='full | manifold')
        parser.add_argument('--seed', type=int, help='Sampling seed (default: the config seed)')
        parser.add_argument('--output', help='Tensor path (default <output.dir>/samples.tensor)')

    def run(self, *args, **options):
        config = self.config
        seed = config.seed if options['seed'] is None else options['seed']
        checkpoint = self.checkpoint_path(options['checkpoint'])
        model, _, _ = load_model(checkpoint)
        if options['n'] < 0:
            raise ConfigurationError(f"--n must be non-negative, got {options['n']}")
        values = sample(model.flow, options['n'], mode=options['mode'], d=model.split.d,
                        seed=seed, manifold_flow=model.manifold_flow)
        dataset = Dataset(values, 'flow_sample', seed, {'mode': options['mode'], 'n': len(values),
                                                       'checkpoint': str(checkpoint)})
        output = save_dataset(Path(options['output'] or self.output_dir() / 'samples.tensor'), dataset,
                              extra={'provenance': provenance_lines('sample', config)})
        self.success(f'{len(values)} {options["mode"]} samples -> {output}')
