"""
AUROC per score variant and OOD set, plus hard-threshold confusion counts.
"""

from pathlib import Path

from django.conf import settings

from detector.exceptions import ConfigurationError
from detector.reports import provenance_lines, write_metrics
from detector.scoring import evaluate, read_scores

from ._base import DetectorCommand

MATCHING_HEADER_KEYS = ('dim', 'codec', 'lambda', 'c_const')


def parse_c_sweep(text):
    if not text:
        return ()
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise ConfigurationError(f'--c-sweep takes comma-separated numbers, got {text!r}') from None


def set_names(paths):
    """File stems, with _2, _3, ... appended where two OOD files share one"""
    names = []
    for path in paths:
        stem = name = Path(path).stem
        suffix = 2
        while name in names:
            name = f'{stem}_{suffix}'
            suffix += 1
        names.append(name)
    return names


class Command(DetectorCommand):
    help = 'Evaluate an ID score CSV against one or more OOD score CSVs'

    def add_arguments(self, parser):
        parser.add_argument('id_csv', help='Scores of in-distribution samples')
        parser.add_argument('ood_csvs', nargs='+', help='Scores of out-of-distribution samples')
        parser.add_argument('--c-sweep', help='Comma list of C values to recompute AUROC for')
        parser.add_argument('--output', help='Metrics file (default <DETECTOR_OUTPUT_DIR>/metrics.txt)')

    def run(self, *args, **options):
        id_header, id_records = read_scores(options['id_csv'])
        groups = []
        for name, path in zip(set_names(options['ood_csvs']), options['ood_csvs']):
            header, records = read_scores(path)
            for key in MATCHING_HEADER_KEYS:
                if header.get(key) != id_header.get(key):
                    raise ConfigurationError(
                        f'{path}: header {key}={header.get(key)!r} does not match ID file ({id_header.get(key)!r})')
            groups.append((name, records))

        result = evaluate(id_records, groups, c_sweep=parse_c_sweep(options['c_sweep']),
                          base_c=float(id_header.get('c_const', 1.0)))
        header = provenance_lines('eval', extra={
            'id': options['id_csv'],
            'ood': ','.join(options['ood_csvs']),
            'seed': id_header.get('seed', ''),
        })
        output = write_metrics(options['output'] or Path(settings.DETECTOR_OUTPUT_DIR) / 'metrics.txt',
                               result, header)
        self.success(f'auroc={result.auroc!r}')
        for variant in result.variants:
            self.success(f'auroc.{variant}={result.overall[variant]!r}')
        self.success(f'metrics: {output}')
