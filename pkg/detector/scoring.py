"""
OOD scoring and evaluation

Score per sample (higher means more out-of-distribution):

    NLL(x) + lambda * C(x, x~; delta)                     without complexity
    NLL(x) / (D ln 2) + lambda * C(x, x~; delta) - bits/D with complexity

plus bits per dimension, AUROC by rank summation, and the hard threshold
rule (maximum in-distribution score).
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .complexity import complexity_bits, quantize
from .config import parse_key_value_lines
from .exceptions import ConfigurationError, EvaluationError, FormatError
from .huber_density import lambda_coefficient
from .manifold import forward_terms

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

SCORE_COLUMNS = ('id', 'nll_nats', 'bpd', 'penalty', 'lambda', 'ic_bits', 'score', 'valid')


def bpd(nll_nats, dim):
    """Bits per dimension: NLL / (D ln 2)"""
    if not dim > 0:
        raise ConfigurationError(f'dimension must be positive, got {dim}')
    return nll_nats / (dim * LN2)


def combined_score(nll_nats, penalty, lambda_score, dim, ic_bits=None):
    """The one place the combined score is computed, so it recomputes bit-exactly"""
    if ic_bits is None:
        return nll_nats + lambda_score * penalty
    return bpd(nll_nats, dim) + lambda_score * penalty - ic_bits / dim


@dataclass
class ScoreRecord:
    sample_id: int
    nll_nats: float
    penalty: float
    lambda_score: float
    dim: int
    ic_bits: int = None
    score: float = float('nan')
    valid: bool = True
    # quantized input left [0, 1]; not written to score files
    clamped: bool = field(default=False, compare=False)

    @property
    def bpd(self):
        return bpd(self.nll_nats, self.dim)

    def recompute(self, lambda_score=None, use_ic=None):
        """Combined score from the stored components"""
        lam = self.lambda_score if lambda_score is None else lambda_score
        bits = self.ic_bits if use_ic is None or use_ic else None
        return combined_score(self.nll_nats, self.penalty, lam, self.dim, bits)

    def components(self):
        return {'nll': self.nll_nats, 'penalty': self.penalty, 'ic_bits': self.ic_bits}


def ood_score(model, x, spec, fit, use_ic=False, codec=None, c_const=1.0, start_id=0, image_shape=None):
    """
    ScoreRecords for a batch of samples.

    Rows whose NLL or penalty is not finite come back with valid=False and
    a NaN score; they are counted and logged, never clamped.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.split.D:
        raise ConfigurationError(f'data shape {x.shape} does not match model dimension {model.split.D}')
    if use_ic and codec is None:
        raise ConfigurationError('complexity scoring needs a codec')
    dim = model.split.D
    lam = lambda_coefficient(fit, c_const)

    with np.errstate(all='ignore'):
        terms = forward_terms(model, x, spec, check=False)
    nll = terms['nll_u'] + terms['nll_v'] - terms['logdet']
    pen = terms['penalty']

    records = []
    for i in range(len(x)):
        valid = bool(np.isfinite(nll[i]) and np.isfinite(pen[i]))
        bits = None
        clamped = False
        if use_ic and np.all(np.isfinite(x[i])):
            quantized = quantize(x[i], shape=image_shape)
            clamped = quantized.clamped
            bits = complexity_bits(quantized, codec, sample_index=start_id + i)
        record = ScoreRecord(start_id + i, float(nll[i]), float(pen[i]), lam, dim, ic_bits=bits, valid=valid,
                             clamped=clamped)
        if use_ic and bits is None:
            record.valid = False
        if record.valid:
            record.score = record.recompute()
        records.append(record)

    invalid = sum(not r.valid for r in records)
    if invalid:
        logger.warning('%d of %d samples have non-finite scores and are excluded', invalid, len(records))
    clamped = sum(r.clamped for r in records)
    if clamped:
        logger.warning('%d of %d samples had values outside [0, 1] clamped before compression',
                       clamped, len(records))
    return records


# ============================================
# EVALUATION
# ============================================

@dataclass
class EvalLabeling:
    """Scores with labels: in-distribution 0, out-of-distribution 1"""
    scores: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_groups(cls, id_scores, ood_scores):
        id_scores = np.asarray(id_scores, dtype=float).ravel()
        ood_scores = np.asarray(ood_scores, dtype=float).ravel()
        return cls(
            scores=np.concatenate([id_scores, ood_scores]),
            labels=np.concatenate([np.zeros(id_scores.size, dtype=int), np.ones(ood_scores.size, dtype=int)]),
        )


def auroc(labeling):
    """
    Mann-Whitney statistic P(s_ood > s_id) + P(s_ood == s_id) / 2 from
    mid-ranks.
    """
    scores = np.asarray(labeling.scores, dtype=float)
    labels = np.asarray(labeling.labels)
    n_ood = int(np.sum(labels == 1))
    n_id = int(np.sum(labels == 0))
    if n_ood == 0 or n_id == 0:
        raise EvaluationError(f'AUROC needs both classes, got {n_id} ID and {n_ood} OOD scores')
    if not np.all(np.isfinite(scores)):
        raise EvaluationError('AUROC scores must be finite')
    ranks = stats.rankdata(scores, method='average')
    u = ranks[labels == 1].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u / (n_id * n_ood))


def hard_threshold(id_scores):
    """The largest in-distribution score"""
    id_scores = np.asarray(id_scores, dtype=float)
    if id_scores.size == 0:
        raise EvaluationError('threshold needs at least one in-distribution score')
    return float(np.max(id_scores))


def classify(scores, threshold):
    """True (OOD) iff score > threshold"""
    return np.asarray(scores, dtype=float) > threshold


def confusion_counts(id_scores, ood_scores, threshold):
    id_flags = classify(id_scores, threshold)
    ood_flags = classify(ood_scores, threshold)
    return {
        'tp': int(ood_flags.sum()),
        'fn': int((~ood_flags).sum()),
        'fp': int(id_flags.sum()),
        'tn': int((~id_flags).sum()),
    }


SCORE_VARIANTS = ('nll', 'penalty', 'combined', 'combined+ic')


def variant_scores(records, variant, c_scale=1.0):
    """
    One score per record for a variant, recomputed from stored components.

    c_scale multiplies lambda (lambda' = lambda * C'/C for a C sweep).
    """
    if variant == 'nll':
        return np.array([r.nll_nats for r in records])
    if variant == 'penalty':
        return np.array([r.penalty for r in records])
    if variant == 'combined':
        return np.array([r.recompute(r.lambda_score * c_scale, use_ic=False) for r in records])
    if variant == 'combined+ic':
        if any(r.ic_bits is None for r in records):
            raise EvaluationError('combined+ic needs complexity bits for every sample')
        return np.array([r.recompute(r.lambda_score * c_scale, use_ic=True) for r in records])
    raise ConfigurationError(f'unknown score variant {variant!r}; use one of {SCORE_VARIANTS}')


def available_variants(*groups):
    records = [r for group in groups for r in group]
    if records and all(r.ic_bits is not None for r in records):
        return SCORE_VARIANTS
    return SCORE_VARIANTS[:3]


def _valid(records):
    return [r for r in records if r.valid]


@dataclass
class EvaluationResult:
    """AUROCs keyed by variant (pooled and per OOD set) plus threshold counts"""
    auroc: float
    overall: dict
    per_set: list
    threshold: float
    confusion: dict
    excluded: dict
    sweep: list
    variants: tuple = ()


def evaluate(id_records, ood_groups, c_sweep=(), base_c=1.0):
    """
    Evaluate scored ID records against one or more scored OOD sets.

    ood_groups is a list of (name, records). 'auroc' is computed on the
    stored score column over all OOD sets pooled; invalid records are
    excluded and counted.
    """
    id_valid = _valid(id_records)
    groups = [(name, _valid(records)) for name, records in ood_groups]
    ood_valid = [r for _, records in groups for r in records]
    excluded = {'id': len(id_records) - len(id_valid), 'ood': sum(len(r) for _, r in ood_groups) - len(ood_valid)}
    if excluded['id'] or excluded['ood']:
        logger.warning('excluding %d ID and %d OOD invalid records', excluded['id'], excluded['ood'])
    if not id_valid or not ood_valid:
        raise EvaluationError(f'evaluation needs both classes, got {len(id_valid)} ID and {len(ood_valid)} OOD records')

    variants = available_variants(id_valid, ood_valid)

    def aurocs(ood, c_scale=1.0):
        return {
            v: auroc(EvalLabeling.from_groups(variant_scores(id_valid, v, c_scale), variant_scores(ood, v, c_scale)))
            for v in variants
        }

    stored_id = np.array([r.score for r in id_valid])
    stored_ood = np.array([r.score for r in ood_valid])
    threshold = hard_threshold(stored_id)

    sweep = []
    for c_value in c_sweep:
        if not c_value > 0:
            raise ConfigurationError(f'C values must be positive, got {c_value}')
        sweep.append((c_value, aurocs(ood_valid, c_value / base_c)))

    return EvaluationResult(
        auroc=auroc(EvalLabeling.from_groups(stored_id, stored_ood)),
        overall=aurocs(ood_valid),
        per_set=[(name, aurocs(records)) for name, records in groups if records],
        threshold=threshold,
        confusion=confusion_counts(stored_id, stored_ood, threshold),
        excluded=excluded,
        sweep=sweep,
        variants=variants,
    )


# ============================================
# SCORE FILES
# ============================================

def _format_float(value):
    return repr(float(value))


def write_scores(path, records, header_lines=()):
    """CSV with '# key = value' header lines followed by the column row"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        for line in header_lines:
            fh.write(f'# {line}\n')
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(SCORE_COLUMNS)
        for r in records:
            writer.writerow([
                r.sample_id,
                _format_float(r.nll_nats),
                _format_float(r.bpd),
                _format_float(r.penalty),
                _format_float(r.lambda_score),
                '' if r.ic_bits is None else r.ic_bits,
                _format_float(r.score),
                'true' if r.valid else 'false',
            ])
    return path


def read_scores(path):
    """Return (header dict, list of ScoreRecord)"""
    path = Path(path)
    try:
        with open(path, encoding='utf-8', newline='') as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError as exc:
        raise ConfigurationError(f'score file not found: {path}') from exc
    comments = [line[1:].strip() for line in lines if line.startswith('#')]
    body = [line for line in lines if not line.startswith('#')]
    header = parse_key_value_lines(comments, source=str(path))
    if 'dim' not in header:
        raise FormatError(f'{path}: score file header has no dim')
    dim = int(header['dim'])

    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != SCORE_COLUMNS:
        raise FormatError(f'{path}: expected columns {",".join(SCORE_COLUMNS)}')
    records = []
    for row in reader:
        records.append(ScoreRecord(
            sample_id=int(row['id']),
            nll_nats=float(row['nll_nats']),
            penalty=float(row['penalty']),
            lambda_score=float(row['lambda']),
            dim=dim,
            ic_bits=int(row['ic_bits']) if row['ic_bits'] else None,
            score=float(row['score']),
            valid=row['valid'] == 'true',
        ))
    return header, records
