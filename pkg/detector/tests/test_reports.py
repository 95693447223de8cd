import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from detector.exceptions import FormatError
from detector.huber_density import FittedScale, lambda_coefficient
from detector.manifold import EpochRecord
from detector.reports import (
    provenance_lines, read_calibration, read_history, reconstruction_summary, write_calibration,
    write_history,
)


class ReportTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_calibration_reads_back_exactly(self):
        fit = FittedScale('huber', 0.123456789012345, 400, delta=0.1, nll=-1.5, iterations=7)
        path = write_calibration(self.dir / 'calibration.txt', fit, c_const=2.0, rmse=0.2, sqrt_huber=0.1,
                                 header_lines=provenance_lines('fit_scale', extra={'data': 'x.tensor'}))
        loaded, values = read_calibration(path)
        self.assertEqual(loaded, fit)
        self.assertEqual(float(values['lambda']), lambda_coefficient(fit, 2.0))
        self.assertEqual(values['fallback'], 'false')
        self.assertEqual(values['at_boundary'], '')
        self.assertIn('# data = x.tensor\n', path.read_text(encoding='utf-8'))

    def test_gaussian_calibration_has_no_norm_const(self):
        fit = FittedScale('gaussian', 0.5, 10, nll=1.0)
        _, values = read_calibration(write_calibration(self.dir / 'c.txt', fit))
        self.assertEqual(values['log_norm_const'], '')
        self.assertEqual(float(values['lambda']), 2.0)

    def test_missing_key(self):
        path = self.dir / 'broken.txt'
        path.write_text('kind = huber\n', encoding='utf-8')
        with self.assertRaises(FormatError):
            read_calibration(path)

    def test_history(self):
        history = [EpochRecord(1, 2.5, 2.0, 0.5), EpochRecord(2, 1.5, 1.25, 0.25)]
        rows = read_history(write_history(self.dir / 'h.csv', history, ['command = train']))
        self.assertEqual(rows[1], {'epoch': 2.0, 'loss': 1.5, 'nll': 1.25, 'penalty': 0.25})

    def test_reconstruction_summary(self):
        summary = reconstruction_summary([[3.0, 4.0], [0.0, 0.0]], delta=None)
        self.assertEqual(summary['rmse'], 2.5)
        self.assertIsNone(summary['sqrt_huber'])
