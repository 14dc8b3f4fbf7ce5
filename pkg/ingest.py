# Adapters converting raw source-dataset files into ChatRecords / GuidelineDocs.
# Adapters are declared per schema family; each item is either emitted or discarded with a reason.

import json
import os
from collections import Counter
from typing import Literal, Optional

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from choose import choose_tokenizer
from corpus import LETTERS, ChatRecord, GuidelineDoc, Message, check_invariants, source_record_id

# alternative key names seen across source datasets, first match wins
OPTION_COLUMNS = ('opa', 'opb', 'opc', 'opd', 'ope')
LABEL_KEYS = ('label', 'answer_idx', 'answer_letter', 'label_letter')
RATIONALE_KEYS = ('rationale', 'explanation', 'exp')
LONG_ANSWER_KEYS = ('long_answer', 'answer')
DECISION_KEYS = ('final_decision', 'decision')
TEXT_KEYS = ('text', 'clean_text', 'body')
INSTITUTION_KEYS = ('institution', 'source')


class IngestError(Exception):
    pass


class SchemaMismatchError(IngestError):
    def __init__(self, dataset_name, index, reason):
        self.dataset_name = dataset_name
        self.index = index
        super().__init__(f'{dataset_name}: item {index} does not fit the declared schema: {reason}')


class Discard(Exception):
    # per-item ambiguity; the item is dropped and the reason counted
    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


class SourceSpec(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    dataset_name: str
    schema_name: Literal['mcq_options_label', 'context_question_answer', 'consumer_qa',
                         'guideline_corpus'] = Field(alias='schema')
    input_path: str
    expected_count: Optional[int] = Field(default=None, ge=0)
    split: str = 'train'
    system_prompt: Optional[str] = None

    @classmethod
    def from_settings(cls, name, settings):
        return cls(dataset_name=name, **settings.model_dump(by_alias=True))


class IngestReport(BaseModel):
    dataset_name: str
    read: int = 0
    emitted: int = 0
    discarded: int = 0
    discard_reasons: dict[str, int] = Field(default_factory=dict)

    def discard(self, reason):
        self.discarded += 1
        self.discard_reasons[reason] = self.discard_reasons.get(reason, 0) + 1


def read_items(path):
    """Raw items from .jsonl, .json (a list of objects) or .csv."""
    ext = os.path.splitext(path)[1].lower()
    if ext == '.csv':
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        yield from df.to_dict('records')
    elif ext == '.json':
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        if isinstance(data, dict):
            data = list(data.values())
        yield from data
    else:
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                if line.strip():
                    yield json.loads(line)


def first_key(item, keys):
    for k in keys:
        if k in item and item[k] is not None and item[k] != '':
            return item[k]
    return None


def as_text(value):
    if not isinstance(value, str):
        raise Discard('non_text_payload')
    value = value.strip()
    if not value:
        raise Discard('empty_text')
    return value


def letter_of(label, n_options):
    # option index 0-4 <-> A-E
    if isinstance(label, bool):
        raise Discard('ambiguous_label')
    if isinstance(label, int):
        index = label
    elif isinstance(label, str) and label.strip().isdigit():
        index = int(label.strip())
    elif isinstance(label, str) and len(label.strip()) == 1 and label.strip().upper() in LETTERS:
        index = LETTERS.index(label.strip().upper())
    else:
        raise Discard('ambiguous_label')
    if not 0 <= index < n_options:
        raise Discard('label_out_of_range')
    return LETTERS[index]


def with_system(spec, messages):
    if spec.system_prompt:
        return [Message(role='system', content=spec.system_prompt)] + messages
    return messages


def mcq_options_label(spec, item):
    if 'question' not in item or not ('options' in item or 'opa' in item):
        raise KeyError('question and options are required')
    question = as_text(item['question'])
    options = item.get('options')
    if options is None:
        options = [item[c] for c in OPTION_COLUMNS if c in item]
    elif isinstance(options, dict):
        options = [options[k] for k in sorted(options)]
    if not isinstance(options, list):
        raise Discard('non_text_payload')
    if len(options) > len(LETTERS):
        raise Discard('too_many_options')
    if len(options) < 2:
        raise Discard('too_few_options')
    options = [as_text(o) for o in options]
    label = first_key(item, LABEL_KEYS)
    if label is None:
        raise Discard('missing_label')
    gold = letter_of(label, len(options))

    stem = question + '\n' + '\n'.join(f'{LETTERS[i]}) {o}' for i, o in enumerate(options))
    rationale = first_key(item, RATIONALE_KEYS)
    answer = f'Answer: {gold}'
    if rationale is not None:
        answer = as_text(rationale) + '\n\n' + answer
    messages = [Message(role='user', content=stem), Message(role='assistant', content=answer)]
    return dict(messages=with_system(spec, messages), question_type='mcq', gold_label=gold)


def _context_text(context):
    if isinstance(context, dict):
        context = context.get('contexts', [])
    if isinstance(context, list):
        context = '\n'.join(c for c in context if isinstance(c, str))
    return as_text(context)


def context_question_answer(spec, item):
    if 'question' not in item or 'context' not in item:
        raise KeyError('question and context are required')
    question = as_text(item['question'])
    context = _context_text(item['context'])
    long_answer = first_key(item, LONG_ANSWER_KEYS)
    decision = first_key(item, DECISION_KEYS)
    if long_answer is None and decision is None:
        raise Discard('missing_answer')
    if decision is not None:
        decision = as_text(decision).lower()
        answer = f'Answer: {decision}'
        if long_answer is not None:
            answer = as_text(long_answer) + '\n\n' + answer
    else:
        answer = as_text(long_answer)
    messages = [Message(role='user', content=f'Context:\n{context}\n\nQuestion: {question}'),
                Message(role='assistant', content=answer)]
    return dict(messages=with_system(spec, messages), question_type='open', gold_label=decision)


def merge_turns(turns):
    # consecutive turns of one role are joined with a blank line
    merged = []
    for role, content in turns:
        if merged and merged[-1][0] == role:
            merged[-1] = (role, merged[-1][1] + '\n\n' + content)
        else:
            merged.append((role, content))
    return merged


def consumer_qa(spec, item):
    if 'messages' in item:
        raw = item['messages']
        if not isinstance(raw, list):
            raise Discard('non_text_payload')
        turns = []
        for m in raw:
            if not isinstance(m, dict) or m.get('role') not in ('system', 'user', 'assistant'):
                raise Discard('unknown_role')
            if isinstance(m.get('content'), str) and m['content'].strip():
                turns.append((m['role'], m['content'].strip()))
    elif 'question' in item and 'answer' in item:
        turns = [('user', as_text(item['question'])), ('assistant', as_text(item['answer']))]
    else:
        raise KeyError('question/answer or messages are required')
    turns = merge_turns(turns)
    if not any(role == 'assistant' for role, _ in turns):
        raise Discard('missing_answer')
    messages = [Message(role=role, content=content) for role, content in turns]
    return dict(messages=with_system(spec, messages), question_type='open', gold_label=None)


ADAPTERS = {
    'mcq_options_label': mcq_options_label,
    'context_question_answer': context_question_answer,
    'consumer_qa': consumer_qa,
}


def check_expected(spec, report):
    if spec.expected_count is not None and report.emitted != spec.expected_count:
        logger.warning(f'{spec.dataset_name}: emitted {report.emitted} records, '
                       f'expected {spec.expected_count}')


def ingest_dataset(spec):
    """Returns (stream of ChatRecord, IngestReport). The report fills in as the stream is consumed."""
    if spec.schema_name == 'guideline_corpus':
        raise IngestError(f'{spec.dataset_name}: guideline corpora are read with ingest_guidelines')
    adapter = ADAPTERS[spec.schema_name]
    report = IngestReport(dataset_name=spec.dataset_name)

    def stream():
        log = logger.bind(stage='ingest')
        for index, item in enumerate(read_items(spec.input_path)):
            report.read += 1
            record_id = source_record_id(spec.dataset_name, spec.split, index)
            if not isinstance(item, dict):
                raise SchemaMismatchError(spec.dataset_name, index, 'item is not an object')
            try:
                fields = adapter(spec, item)
                record = ChatRecord(id=record_id, source=spec.dataset_name, **fields)
                problems = check_invariants(record)
                if problems:
                    raise Discard('invariant_violation')
            except KeyError as e:
                raise SchemaMismatchError(spec.dataset_name, index, e.args[0])
            except Discard as d:
                report.discard(d.reason)
                log.bind(record_id=record_id, outcome='discarded').debug(d.reason)
                continue
            except ValueError:
                # pydantic rejects empty or malformed message content
                report.discard('non_text_payload')
                continue
            report.emitted += 1
            yield record
        check_expected(spec, report)
        log.info(f'{spec.dataset_name}: read {report.read}, emitted {report.emitted}, '
                 f'discarded {report.discarded}')

    return stream(), report


def ingest_guidelines(spec, tokenizer='regex', report=None):
    """Streams GuidelineDocs; token_count comes from `tokenizer`. Empty bodies are discarded."""
    tokenize = choose_tokenizer(tokenizer)
    report = report if report is not None else IngestReport(dataset_name=spec.dataset_name)
    for index, item in enumerate(read_items(spec.input_path)):
        report.read += 1
        if not isinstance(item, dict) or not any(k in item for k in TEXT_KEYS + INSTITUTION_KEYS):
            raise SchemaMismatchError(spec.dataset_name, index, 'text and institution are required')
        text = first_key(item, TEXT_KEYS)
        institution = first_key(item, INSTITUTION_KEYS)
        if not isinstance(text, str) or not text.strip():
            report.discard('empty_body')
            continue
        if not isinstance(institution, str):
            report.discard('missing_institution')
            continue
        text = text.strip()
        doc_id = str(item.get('id', source_record_id(spec.dataset_name, spec.split, index)))
        report.emitted += 1
        yield GuidelineDoc(id=doc_id, institution=institution, text=text, token_count=len(tokenize(text)))
    check_expected(spec, report)


def institution_counts(docs):
    return dict(sorted(Counter(d.institution for d in docs).items()))
