"""
Train a manifold flow from an experiment config.

Writes the checkpoint and a loss history CSV whose header echoes the
resolved config.
"""

from detector.data import load_dataset
from detector.manifold import build_model, save_model, train
from detector.reports import provenance_lines, write_history

from ._base import ConfigCommand, require


class Command(ConfigCommand):
    help = 'Train the flow on data.path and write checkpoint.path plus the loss history'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--history', help='History CSV path (default <output.dir>/history.csv)')

    def run(self, *args, **options):
        config = self.config
        dataset = load_dataset(require(config.data_path, 'data.path is required for training'))
        model = build_model(config)
        checkpoint = self.checkpoint_path()
        header = provenance_lines('train', config)

        model, history = train(model, dataset, config, checkpoint_path=checkpoint)
        save_model(checkpoint, model, config.penalty_spec(), meta={'provenance': header})
        history_path = write_history(options['history'] or self.output_dir() / 'history.csv', history, header)

        if history:
            last = history[-1]
            self.success(f'trained {len(history)} epochs: loss={last.loss:.6f} nll={last.nll:.6f} '
                         f'penalty={last.penalty:.6g}')
        else:
            self.success('0 epochs requested; wrote the initial model')
        self.success(f'checkpoint: {checkpoint}')
        self.success(f'history: {history_path}')
