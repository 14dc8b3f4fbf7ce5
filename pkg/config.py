# Run configuration: one JSON file validated by pydantic models, one settings model per stage.

import json
import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from utils import canonical_json, sha256_text

ROLES = ('teacher', 'annotator', 'judge', 'model_under_test')


class ConfigError(Exception):
    # path is the dotted field path, e.g. decontam.tau
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f'{path}: {reason}')


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class Endpoint(_Section):
    backend: Literal['openai', 'mock'] = 'openai'
    model: str
    base_url: Optional[str] = None
    api_key_env: str = 'MEDFORGE_API_KEY'
    mock_script: Optional[str] = None
    developer_role: bool = True
    requests_per_second: Optional[float] = Field(default=None, gt=0)
    timeout: float = Field(default=60.0, gt=0)

    @model_validator(mode='after')
    def _backend_fields(self):
        if self.backend == 'mock' and not self.mock_script:
            raise ValueError('mock backend needs mock_script')
        if self.backend == 'openai' and not self.base_url:
            raise ValueError('openai backend needs base_url')
        return self


class GatewaySettings(_Section):
    max_attempts: int = Field(default=5, ge=1)
    backoff_base: float = Field(default=0.5, ge=0)
    backoff_factor: float = Field(default=2.0, ge=1)
    max_in_flight: int = Field(default=8, ge=1)


class SourceSettings(_Section):
    schema_name: Literal['mcq_options_label', 'context_question_answer', 'consumer_qa',
                         'guideline_corpus'] = Field(alias='schema')
    input_path: str
    expected_count: Optional[int] = Field(default=None, ge=0)
    split: str = 'train'
    system_prompt: Optional[str] = None

    model_config = ConfigDict(extra='forbid', populate_by_name=True)


class IngestSettings(_Section):
    sources: dict[str, SourceSettings] = Field(default_factory=dict)
    tokenizer: str = 'regex'


class DecontamSettings(_Section):
    n: int = Field(default=8, ge=2)
    tau: float = Field(default=0.5, ge=0, le=1)
    tokenizer: str = 'regex'
    refs: list[str] = Field(default_factory=list)
    workers: int = Field(default=1, ge=1)


class MooveResponseSettings(_Section):
    enabled: bool = True
    temperature: float = Field(default=0.7, ge=0, le=2)
    max_tokens: int = Field(default=2048, gt=0)


class SynthSettings(_Section):
    date: str
    reasoning: str = 'low'
    max_attempts: int = Field(default=8, ge=1)
    temperature: float = Field(default=0.7, ge=0, le=2)
    max_tokens: int = Field(default=4096, gt=0)
    target_size: Optional[int] = Field(default=None, ge=1)
    review_every: int = Field(default=500, ge=1)
    position_threshold: float = Field(default=0.25, gt=0)
    position_min_window: int = Field(default=200, ge=1)
    letters: str = 'ABCD'
    moove_response: MooveResponseSettings = Field(default_factory=MooveResponseSettings)

    @field_validator('letters')
    @classmethod
    def _letters(cls, v):
        if not v or any(c not in 'ABCDE' for c in v) or len(set(v)) != len(v):
            raise ValueError('letters must be distinct letters from A-E')
        return v


class AxisSettings(_Section):
    vocabulary: Optional[list[str]] = None
    template: Optional[str] = None


class ProfileSettings(_Section):
    axes: list[str] = Field(default_factory=lambda: ['specialty', 'urgency', 'difficulty'])
    overrides: dict[str, AxisSettings] = Field(default_factory=dict)
    chunk_size: int = Field(default=256, ge=1)


class ArenaSettings(_Section):
    judge_temperature: float = Field(default=0.0, ge=0, le=2)
    judge_parse_retries: int = Field(default=2, ge=0)
    judge_reasoning: Optional[str] = None
    response_temperature: float = Field(default=0.0, ge=0, le=2)
    max_tokens: int = Field(default=2048, gt=0)


class PanelSettings(_Section):
    min_items: int = Field(default=10, ge=1)
    n_boot: int = Field(default=10000, ge=1)


class RunConfig(_Section):
    seed: int
    log_path: Optional[str] = None
    log_level: str = 'INFO'
    endpoints: dict[str, Endpoint] = Field(default_factory=dict)
    gateway: GatewaySettings = Field(default_factory=GatewaySettings)
    ingest: IngestSettings = Field(default_factory=IngestSettings)
    decontam: DecontamSettings = Field(default_factory=DecontamSettings)
    synth: Optional[SynthSettings] = None
    profile: ProfileSettings = Field(default_factory=ProfileSettings)
    arena: ArenaSettings = Field(default_factory=ArenaSettings)
    panel: PanelSettings = Field(default_factory=PanelSettings)

    _hash: Optional[str] = PrivateAttr(default=None)

    @field_validator('endpoints')
    @classmethod
    def _roles(cls, v):
        unknown = sorted(set(v) - set(ROLES))
        if unknown:
            raise ValueError(f'unknown endpoint roles {unknown}, choose from {list(ROLES)}')
        return v

    def config_hash(self):
        # fixed at load time, before paths are resolved against the config directory
        if self._hash is None:
            self._hash = sha256_text(canonical_json(self.model_dump(mode='json', by_alias=True)))
        return self._hash


def set_dotted(data, path, value):
    # data['a']['b'] = value for path 'a.b'; intermediate sections are created
    keys = path.split('.')
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return data


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def resolve_paths(config, base_dir):
    """Resolves relative input paths against base_dir and checks that each exists."""
    missing = []

    def check(field, path):
        full = _resolve(base_dir, path)
        if not os.path.exists(full):
            missing.append((field, full))
        return full

    for role, ep in config.endpoints.items():
        if ep.mock_script:
            ep.mock_script = check(f'endpoints.{role}.mock_script', ep.mock_script)
    for name, src in config.ingest.sources.items():
        src.input_path = check(f'ingest.sources.{name}.input_path', src.input_path)
    config.decontam.refs = [check(f'decontam.refs.{i}', p) for i, p in enumerate(config.decontam.refs)]
    if config.log_path:
        config.log_path = _resolve(base_dir, config.log_path)
    if missing:
        field, full = missing[0]
        raise ConfigError(field, f'path does not exist: {full}')
    return config


def format_validation_error(e):
    err = e.errors()[0]
    path = '.'.join(str(x) for x in err['loc']) or '<root>'
    return ConfigError(path, err['msg'])


def load_config(path=None, overrides=None, data=None):
    """Reads the JSON config at `path` (or uses `data`), applies dotted overrides, validates.

    Raises ConfigError naming the offending field.
    """
    if data is None:
        if path is None:
            raise ConfigError('<config>', 'no config file given')
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError('<config>', f'config file not found: {path}')
        except json.JSONDecodeError as e:
            raise ConfigError('<config>', f'invalid JSON at line {e.lineno}: {e.msg}')
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(data, key, value)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise format_validation_error(e)
    config.config_hash()
    base_dir = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    return resolve_paths(config, base_dir)
