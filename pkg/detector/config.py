"""
Experiment configuration

The on-disk format is flat UTF-8 "key = value" lines; '#' starts a comment.
ExperimentConfigForm (forms.py) validates the raw strings, this module holds
the parsed result and the reader/writer for the line format.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigurationError, FormatError
from .manifold import PenaltySpec

# Dotted file key -> ExperimentConfig attribute, in echo order
KEYS = {
    'dims.D': 'D',
    'dims.d': 'd',
    'penalty.kind': 'penalty_kind',
    'penalty.delta': 'penalty_delta',
    'penalty.lambda': 'penalty_lambda',
    'optim.lr': 'lr',
    'optim.batch': 'batch',
    'optim.epochs': 'epochs',
    'seed': 'seed',
    'data.path': 'data_path',
    'checkpoint.path': 'checkpoint_path',
    'manifold_flow.enabled': 'manifold_flow_enabled',
    'flow.blocks': 'flow_blocks',
    'flow.hidden': 'flow_hidden',
    'flow.clamp': 'flow_clamp',
    'manifold_flow.blocks': 'manifold_flow_blocks',
    'eval.id_path': 'eval_id_path',
    'eval.ood_paths': 'eval_ood_paths',
    'score.use_ic': 'use_ic',
    'score.c_const': 'c_const',
    'score.codec': 'codec',
    'output.dir': 'output_dir',
}


@dataclass(frozen=True)
class ExperimentConfig:
    D: int
    d: int
    penalty_kind: str = 'huber'
    penalty_delta: float = 0.1
    penalty_lambda: float = 1.0
    lr: float = 1e-5
    batch: int = 64
    epochs: int = 10
    seed: int = 0
    data_path: str = ''
    checkpoint_path: str = ''
    manifold_flow_enabled: bool = False
    flow_blocks: int = 8
    flow_hidden: int = 32
    flow_clamp: float = 5.0
    manifold_flow_blocks: int = 6
    eval_id_path: str = ''
    eval_ood_paths: tuple = ()
    use_ic: bool = True
    c_const: float = 1.0
    codec: str = 'deflate'
    output_dir: str = ''

    def penalty_spec(self):
        return PenaltySpec(kind=self.penalty_kind, delta=self.penalty_delta, weight=self.penalty_lambda)

    def echo(self):
        """Resolved config as "key = value" lines in documented order"""
        return [f'{key} = {format_value(getattr(self, attr))}' for key, attr in KEYS.items()]

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return ','.join(str(v) for v in value)
    return str(value)


def parse_key_value_lines(lines, source='<config>'):
    """Parse "key = value" lines into an ordered dict of raw strings"""
    values = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise FormatError(f'{source}:{number}: expected "key = value", got {line!r}')
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise FormatError(f'{source}:{number}: empty key')
        if key in values:
            raise ConfigurationError(f'{source}:{number}: duplicate key {key!r}')
        values[key] = value
    return values


def read_key_value_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError as exc:
        raise ConfigurationError(f'config file not found: {path}') from exc
    return parse_key_value_lines(text.splitlines(), source=str(path))


def load_config(path):
    """Read, validate and resolve an experiment config file"""
    from .forms import ExperimentConfigForm
    return ExperimentConfigForm.from_raw(read_key_value_file(path), source=str(path)).to_config()
