# Unified record model and line-delimited JSON persistence shared by every pipeline stage.
#
# One record per line, UTF-8, LF line endings, `"format": 1` on every line. Unknown fields are kept
# on the record and written back unchanged.

import json
import re
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from utils import atomic_write, sha256_text

FORMAT_VERSION = 1
MCQ_LABEL_RE = re.compile(r'^[A-E]$')
LETTERS = 'ABCDE'


class CorpusError(Exception):
    pass


class CorpusFormatError(CorpusError):
    def __init__(self, path, line_no, reason):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f'{path}:{line_no}: {reason}')


class InvariantError(CorpusError):
    def __init__(self, record_id, invariant):
        self.record_id = record_id
        self.invariant = invariant
        super().__init__(f'record {record_id!r} violates invariant: {invariant}')


class Message(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    role: Literal['system', 'user', 'assistant']
    content: str

    @field_validator('content')
    @classmethod
    def _normalize(cls, v):
        v = v.strip()
        if not v:
            raise ValueError('message content is empty')
        return v


class SourceProvenance(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    kind: Literal['source'] = 'source'


class SyntheticProvenance(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    kind: Literal['synthetic'] = 'synthetic'
    component: Literal['curated_qa', 'guidelines_qa', 'moove']
    teacher: str
    attempts_used: int = Field(ge=1)


class AnnotationProfile(BaseModel):
    # `unknown` marks an axis the annotator could not map onto its vocabulary
    model_config = ConfigDict(frozen=True, extra='allow')

    specialty: str = 'unknown'
    urgency: str = 'unknown'
    difficulty: Optional[int] = Field(default=None, ge=1, le=5)
    geographic_context: str = 'unknown'
    resource_setting: str = 'unknown'
    level_of_care: str = 'unknown'
    severity: str = 'unknown'
    question_type_label: str = 'unknown'
    demographics: str = 'unknown'

    def get(self, axis):
        value = getattr(self, axis, None)
        if axis == 'difficulty':
            return 'unknown' if value is None else str(value)
        return 'unknown' if value is None else value


class ChatRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    format: Literal[1] = FORMAT_VERSION
    id: str
    source: str
    messages: list[Message]
    question_type: Literal['mcq', 'open']
    gold_label: Optional[str] = None
    provenance: SourceProvenance | SyntheticProvenance = Field(default_factory=SourceProvenance,
                                                               discriminator='kind')
    annotations: Optional[AnnotationProfile] = None

    @property
    def first_user(self):
        for m in self.messages:
            if m.role == 'user':
                return m.content
        return None

    @property
    def assistant_text(self):
        texts = [m.content for m in self.messages if m.role == 'assistant']
        return texts[-1] if texts else None

    def to_line(self):
        return json.dumps(self.model_dump(mode='json'), ensure_ascii=False)


class GuidelineDoc(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    format: Literal[1] = FORMAT_VERSION
    id: str
    institution: str
    text: str = Field(min_length=1)
    token_count: int = Field(ge=0)


def source_record_id(source, split, index):
    return f'{source}/{split}/{index}'


def synthetic_record_id(component, prompt_text, attempt, item=None):
    key = f'{prompt_text}\x00{attempt}' if item is None else f'{prompt_text}\x00{attempt}\x00{item}'
    return f'synth/{component}/{sha256_text(key)[:16]}'


def check_invariants(record):
    """Returns the list of violated ChatRecord invariants (empty when the record is valid)."""
    problems = []
    msgs = record.messages
    if not msgs:
        problems.append('messages must be non-empty')
        return problems
    for prev, cur in zip(msgs, msgs[1:]):
        if prev.role == cur.role:
            problems.append(f'consecutive messages share role {cur.role!r}')
            break
    first = next((m.role for m in msgs if m.role != 'system'), None)
    if first != 'user':
        problems.append('first non-system message must be from user')
    if record.question_type == 'mcq':
        if record.gold_label is None or not MCQ_LABEL_RE.match(record.gold_label):
            problems.append(f'mcq gold_label must match ^[A-E]$, got {record.gold_label!r}')
    return problems


def validate_record(record):
    problems = check_invariants(record)
    if problems:
        raise InvariantError(record.id, problems[0])
    return record


def _parse_line(path, line_no, line, model):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(path, line_no, f'invalid JSON: {e.msg}')
    if not isinstance(obj, dict):
        raise CorpusFormatError(path, line_no, 'line is not a JSON object')
    if obj.get('format') != FORMAT_VERSION:
        raise CorpusFormatError(path, line_no, f'missing or unsupported format version {obj.get("format")!r}')
    try:
        return model.model_validate(obj)
    except ValidationError as e:
        err = e.errors()[0]
        loc = '.'.join(str(x) for x in err['loc'])
        raise CorpusFormatError(path, line_no, f'{loc}: {err["msg"]}')


def read_corpus(path):
    """Streams ChatRecords in file order. Blank lines are skipped."""
    seen = set()
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            record = _parse_line(path, line_no, line, ChatRecord)
            problems = check_invariants(record)
            if problems:
                raise CorpusFormatError(path, line_no, problems[0])
            if record.id in seen:
                raise CorpusFormatError(path, line_no, f'duplicate id {record.id!r}')
            seen.add(record.id)
            yield record


def write_corpus(records, path):
    """Writes records atomically; returns the count written."""
    seen = set()
    n = 0
    with atomic_write(path) as f:
        for record in records:
            validate_record(record)
            if record.id in seen:
                raise InvariantError(record.id, 'id must be unique within a corpus file')
            seen.add(record.id)
            f.write(record.to_line() + '\n')
            n += 1
    return n


def read_guidelines(path):
    seen = set()
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            doc = _parse_line(path, line_no, line, GuidelineDoc)
            if doc.id in seen:
                raise CorpusFormatError(path, line_no, f'duplicate id {doc.id!r}')
            seen.add(doc.id)
            yield doc


def write_guidelines(docs, path):
    n = 0
    with atomic_write(path) as f:
        for doc in docs:
            f.write(json.dumps(doc.model_dump(mode='json'), ensure_ascii=False) + '\n')
            n += 1
    return n
