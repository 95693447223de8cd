"""
Forms for experiment configuration
"""

from dataclasses import MISSING, fields

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from .complexity import CODECS
from .config import KEYS, ExperimentConfig, format_value
from .exceptions import ConfigurationError
from .manifold import PENALTY_KINDS

BOOLEAN_CHOICES = [('true', 'true'), ('false', 'false')]


def _boolean_field():
    return forms.TypedChoiceField(choices=BOOLEAN_CHOICES, coerce=lambda value: value == 'true')


def _config_fields():
    """One typed field per documented key, fresh for every form instance"""
    return {
        'dims.D': forms.IntegerField(min_value=1),
        'dims.d': forms.IntegerField(min_value=1),
        'penalty.kind': forms.ChoiceField(choices=[(k, k) for k in PENALTY_KINDS]),
        'penalty.delta': forms.FloatField(),
        'penalty.lambda': forms.FloatField(min_value=0.0),
        'optim.lr': forms.FloatField(),
        'optim.batch': forms.IntegerField(min_value=1),
        'optim.epochs': forms.IntegerField(min_value=0),
        'seed': forms.IntegerField(min_value=0),
        'data.path': forms.CharField(required=False),
        'checkpoint.path': forms.CharField(required=False),
        'manifold_flow.enabled': _boolean_field(),
        'flow.blocks': forms.IntegerField(min_value=1),
        'flow.hidden': forms.IntegerField(min_value=1),
        'flow.clamp': forms.FloatField(),
        'manifold_flow.blocks': forms.IntegerField(min_value=1),
        'eval.id_path': forms.CharField(required=False),
        'eval.ood_paths': forms.CharField(required=False),
        'score.use_ic': _boolean_field(),
        'score.c_const': forms.FloatField(),
        'score.codec': forms.ChoiceField(choices=[(name, name) for name in sorted(CODECS)]),
        'output.dir': forms.CharField(required=False),
    }


def config_defaults():
    """Documented defaults as raw strings; keys without a default are absent"""
    defaults = {}
    attrs = {f.name: f for f in fields(ExperimentConfig)}
    for key, attr in KEYS.items():
        f = attrs[attr]
        if f.default is not MISSING:
            defaults[key] = format_value(f.default)
    return defaults


class ExperimentConfigForm(forms.Form):
    """Validates the raw "key = value" strings of an experiment config"""

    def __init__(self, data=None, *args, **kwargs):
        self.source = kwargs.pop('source', '<config>')
        self.unknown_keys = [key for key in (data or {}) if key not in KEYS]
        merged = dict(config_defaults())
        merged['score.codec'] = getattr(settings, 'DETECTOR_CODEC', merged['score.codec'])
        merged.update(data or {})
        super().__init__(merged, *args, **kwargs)
        for key, field in _config_fields().items():
            self.fields[key] = field

    def clean(self):
        cleaned_data = super().clean()
        for key in self.unknown_keys:
            self.add_error(None, f"Unknown config key '{key}'.")

        D = cleaned_data.get('dims.D')
        d = cleaned_data.get('dims.d')
        if D is not None and d is not None and d > D:
            self.add_error('dims.d', f'dims.d must not exceed dims.D ({D}).')

        if cleaned_data.get('penalty.kind') == 'huber':
            delta = cleaned_data.get('penalty.delta')
            if delta is not None and not delta > 0:
                self.add_error('penalty.delta', 'The Huber threshold must be positive.')

        for key in ('optim.lr', 'flow.clamp', 'score.c_const'):
            value = cleaned_data.get(key)
            if value is not None and not value > 0:
                self.add_error(key, 'Must be positive.')

        return cleaned_data

    def error_summary(self):
        parts = []
        for key, errors in self.errors.items():
            label = 'config' if key == '__all__' else key
            parts.extend(f'{label}: {message}' for message in errors)
        return '; '.join(parts)

    @classmethod
    def from_raw(cls, raw, source='<config>'):
        """Bound, validated form; ConfigurationError names every bad key"""
        form = cls(raw, source=source)
        if not form.is_valid():
            raise ConfigurationError(f'{source}: {form.error_summary()}')
        return form

    def to_config(self):
        if not self.is_valid():
            raise ValidationError(self.error_summary())
        values = {attr: self.cleaned_data[key] for key, attr in KEYS.items()}
        values['eval_ood_paths'] = tuple(
            path.strip() for path in values['eval_ood_paths'].split(',') if path.strip()
        )
        return ExperimentConfig(**values)
