"""
Run configuration.

Values resolve with this precedence, highest first:
  command-line flag, environment variable, config file, built-in default.
Config files hold ``key = value`` lines with ``#`` comments; keys are
case-insensitive and match environment variables in upper case.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from decouple import Config, Csv, RepositoryEmpty, RepositoryEnv, UndefinedValueError
from django.conf import settings
from django.core.exceptions import ValidationError

from apps.backbone.config import DESK_CHANNELS, BackboneConfig
from apps.backbone.services import check_placement, placement

logger = logging.getLogger(__name__)

PATH_KEYS = ('data_dir', 'out_dir', 'checkpoint')
TRUE_WORDS = frozenset(('y', 'yes', 't', 'true', 'on', '1'))
FALSE_WORDS = frozenset(('n', 'no', 'f', 'false', 'off', '0', ''))


class RunConfigRepository(RepositoryEnv):
    """``key = value`` file whose keys are looked up in upper case."""

    def __init__(self, source, encoding='utf-8'):
        super().__init__(source, encoding=encoding)
        self.data = {key.upper(): value for key, value in self.data.items()}


def _optional_int(value: Any) -> Optional[int]:
    if isinstance(value, int):
        return value
    value = str(value).strip()
    return None if value.lower() in ('', 'none', 'default') else int(value)


def _int_tuple(value: Any) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(Csv(cast=int)(value))


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a run needs: backbone shape, fusion toggles, optimization
    schedule, seed and paths.
    """

    volume_size: int = 32
    depth: int = 4
    channels: Tuple[int, ...] = DESK_CHANNELS
    heads: int = 4
    tau: float = 1.0
    learning_rate: float = 1e-4
    lr_floor: float = 0.0
    warmup_steps: int = 10
    total_steps: int = 300
    batch_size: int = 1
    seed: int = 0
    aware: bool = True
    shift: bool = True
    aware_layers: Optional[int] = None
    mosaic: bool = True
    gumbel_hard: bool = True
    augment: bool = True
    checkpoint_every: int = 100
    data_dir: str = 'data'
    out_dir: str = 'runs'
    checkpoint: str = ''

    CASTS = {
        'volume_size': int,
        'depth': int,
        'channels': _int_tuple,
        'heads': int,
        'tau': float,
        'learning_rate': float,
        'lr_floor': float,
        'warmup_steps': int,
        'total_steps': int,
        'batch_size': int,
        'seed': int,
        'aware': _bool,
        'shift': _bool,
        'aware_layers': _optional_int,
        'mosaic': _bool,
        'gumbel_hard': _bool,
        'augment': _bool,
        'checkpoint_every': int,
        'data_dir': str,
        'out_dir': str,
        'checkpoint': str,
    }

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> 'RunConfig':
        """
        Resolve a config from an optional file, the environment and explicit
        overrides (command-line flags).

        Raises:
            ValidationError: for unreadable files, unknown keys or bad values
        """
        if path:
            if not Path(path).is_file():
                raise ValidationError({'config': f"config file {path} does not exist"})
            repository = RunConfigRepository(path)
            unknown = sorted(set(repository.data) - {key.upper() for key in cls.keys()})
            if unknown:
                raise ValidationError({'config': f"unknown keys in {path}: {', '.join(k.lower() for k in unknown)}"})
        else:
            repository = RepositoryEmpty()
        source = Config(repository)

        defaults = cls(checkpoint_every=settings.MASM['CHECKPOINT_EVERY'])
        values: Dict[str, Any] = {}
        errors: Dict[str, str] = {}
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        for key in cls.keys():
            cast = cls.CASTS[key]
            try:
                if key in overrides:
                    values[key] = cast(overrides[key])
                else:
                    raw = source(key.upper(), default=None)
                    values[key] = getattr(defaults, key) if raw is None else cast(raw)
            except (ValueError, TypeError, UndefinedValueError) as exc:
                errors[key] = f"invalid value: {exc}"
        if errors:
            raise ValidationError(errors)
        config = cls(**values)
        logger.debug("resolved run config %s", config.as_dict())
        return config

    def with_overrides(self, **changes) -> 'RunConfig':
        return replace(self, **changes)

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(volume_size=self.volume_size, depth=self.depth, channels=tuple(self.channels))

    def fusion_kinds(self) -> List[str]:
        return placement(self.depth, self.aware_layers, self.aware, self.shift)

    def clean(self) -> None:
        """
        Validate every value before any side effect of a run.

        Raises:
            ValidationError: with a message per offending key
        """
        errors: Dict[str, Any] = {}
        try:
            self.backbone.clean()
        except ValidationError as exc:
            errors.update(exc.message_dict)
        if self.heads < 1:
            errors['heads'] = f"heads must be positive, got {self.heads}"
        if not self.tau > 0:
            errors['tau'] = f"tau must be positive, got {self.tau}"
        if not self.learning_rate > 0:
            errors['learning_rate'] = f"learning rate must be positive, got {self.learning_rate}"
        if not 0.0 <= self.lr_floor <= 1.0:
            errors['lr_floor'] = f"lr floor must lie in [0, 1], got {self.lr_floor}"
        if self.total_steps < 1:
            errors['total_steps'] = f"total steps must be at least 1, got {self.total_steps}"
        if not 0 <= self.warmup_steps <= max(self.total_steps, 0):
            errors['warmup_steps'] = f"warmup steps must lie in [0, total_steps], got {self.warmup_steps}"
        if self.batch_size < 1:
            errors['batch_size'] = f"batch size must be at least 1, got {self.batch_size}"
        if self.checkpoint_every < 0:
            errors['checkpoint_every'] = "checkpoint cadence must be non-negative"
        if self.seed < 0:
            errors['seed'] = f"seed must be non-negative, got {self.seed}"
        if not errors:
            try:
                check_placement(self.backbone, self.fusion_kinds(), self.heads)
            except ValidationError as exc:
                errors.update(exc.message_dict)
        if errors:
            raise ValidationError(errors)

    def as_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['channels'] = ','.join(str(c) for c in self.channels)
        values['aware_layers'] = self.depth - 1 if self.aware_layers is None else self.aware_layers
        return values

    def lines(self, include_paths: bool = True) -> List[str]:
        """``key=value`` lines in declaration order."""
        return [
            f'{key}={value}' for key, value in self.as_dict().items()
            if include_paths or key not in PATH_KEYS
        ]
