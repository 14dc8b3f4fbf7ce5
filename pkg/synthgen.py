# Synthetic data generation: exemplar draws, answer extraction, gold-label rejection sampling,
# answer-position monitoring and the curated QA / guidelines QA / MOOVE pipelines.

import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from tqdm import tqdm

from corpus import ChatRecord, Message, SyntheticProvenance, synthetic_record_id
from gateway import ChatMessage, ChatRequest, GatewayError
from prompts import (ParseError, build_prompt, make_template, parse_curated_output, parse_guideline_batch,
                     parse_moove_output)
from utils import derive_seed

MCQ_ANSWER_RE = re.compile(r'Answer:\s*\(?([A-E])(?![A-Za-z0-9])\)?', re.IGNORECASE)
YESNO_ANSWER_RE = re.compile(r'Answer:\s*(yes|no|maybe)\b', re.IGNORECASE)
OPEN_ANSWER_RE = re.compile(r'^[ \t]*Answer:', re.IGNORECASE | re.MULTILINE)

FAMILIES = ('mcq', 'yesno', 'open')


class SynthError(Exception):
    pass


def extract_answer(raw, family='mcq'):
    """Dataset-specific answer extraction; the last occurrence wins. None when nothing matches.

    mcq: "Answer: C", "Answer: (C)" -> "C"; a letter starting a longer word does not count.
    yesno: "Answer: yes|no|maybe" -> lowercase word.
    open: text after the final line starting with "Answer:", else the whole text.
    """
    raw = raw or ''
    if family == 'mcq':
        found = MCQ_ANSWER_RE.findall(raw)
        return found[-1].upper() if found else None
    if family == 'yesno':
        found = YESNO_ANSWER_RE.findall(raw)
        return found[-1].lower() if found else None
    if family == 'open':
        marks = list(OPEN_ANSWER_RE.finditer(raw))
        text = raw[marks[-1].end():] if marks else raw
        return text.strip() or None
    raise SynthError(f'no extraction pattern for family {family!r}, choose from {FAMILIES}')


def answer_family(record):
    if record.question_type == 'mcq':
        return 'mcq'
    if record.gold_label is not None and record.gold_label.lower() in ('yes', 'no', 'maybe'):
        return 'yesno'
    return 'open'


def answers_match(extracted, gold):
    if extracted is None:
        return False
    if gold is None:
        return True
    return extracted.strip().casefold() == gold.strip().casefold()


class ExemplarDraw(BaseModel):
    pool_id: Literal['labeled', 'unlabeled', 'moove_train']
    exemplar_ids: list[str]
    rng_seed: int


def draw_exemplars(pool, k=5, rng_seed=0, pool_id='labeled'):
    """k distinct records drawn uniformly without replacement; returns (ExemplarDraw, records)."""
    if len(pool) < k:
        raise SynthError(f'{pool_id} pool has {len(pool)} items, need at least {k}')
    rng = np.random.default_rng(rng_seed)
    picked = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]
    draw = ExemplarDraw(pool_id=pool_id, exemplar_ids=[r.id for r in picked], rng_seed=rng_seed)
    return draw, picked


class Attempt(BaseModel):
    raw_text: str = ''
    extracted_answer: Optional[str] = None
    matched: bool = False
    error: Optional[str] = None


class RejectionOutcome(BaseModel):
    attempts: list[Attempt] = Field(default_factory=list)
    accepted: bool = False
    final_record: Optional[ChatRecord] = None

    @property
    def attempts_used(self):
        return len(self.attempts)


def rejection_sample(prompt, gold, gateway, family='mcq', max_attempts=8, temperature=0.7, parse=None,
                     make_record=None):
    """Regenerates until the extracted answer equals gold, at most max_attempts times.

    parse maps raw text to (question, answer); extraction runs on the answer. With gold None the
    first parseable output with an extractable answer is accepted. make_record(question, answer,
    extracted, attempts_used) builds the accepted record.
    """
    outcome = RejectionOutcome()
    req = prompt.with_temperature(temperature)
    for n in range(1, max_attempts + 1):
        try:
            resp = gateway.complete(req)
        except GatewayError as e:
            outcome.attempts.append(Attempt(error=f'{type(e).__name__}: {e}'))
            continue
        try:
            question, answer = parse(resp.text) if parse else (None, resp.text)
        except ParseError as e:
            outcome.attempts.append(Attempt(raw_text=resp.text, error=e.reason))
            continue
        extracted = extract_answer(answer, family)
        matched = answers_match(extracted, gold)
        outcome.attempts.append(Attempt(raw_text=resp.text, extracted_answer=extracted, matched=matched))
        if matched:
            outcome.accepted = True
            if make_record is not None:
                outcome.final_record = make_record(question, answer, extracted, n)
            break
    return outcome


class PositionMonitor(object):
    """Running gold-letter counts over accepted mcq items. Synchronized; shareable between workers."""

    def __init__(self, letters='ABCD', threshold=0.25, min_window=200):
        self.letters = letters
        self.threshold = threshold
        self.min_window = min_window
        self.counts = Counter({c: 0 for c in letters})
        self.window = 0
        self.alerts = []
        self._alerting = False
        self._lock = threading.Lock()

    def deviation(self):
        # max |observed - expected| / expected over the configured letters plus any other letter seen
        if self.window == 0:
            return 0.0
        expected = self.window / len(self.counts)
        return max(abs(n - expected) / expected for n in self.counts.values())

    def update(self, letter):
        """Counts one letter; returns an alert dict when the deviation first crosses the threshold."""
        with self._lock:
            self.counts[letter] += 1
            self.window += 1
            dev = self.deviation()
            over = self.window >= self.min_window and dev > self.threshold
            alert = None
            if over and not self._alerting:
                alert = {'window': self.window, 'deviation': dev, 'counts': dict(sorted(self.counts.items()))}
                self.alerts.append(alert)
                logger.bind(stage='synth', outcome='position_alert').warning(
                    f'answer-position deviation {dev:.3f} > {self.threshold} over {self.window} items')
            self._alerting = over
            return alert

    def summary(self):
        with self._lock:
            return {'counts': dict(sorted(self.counts.items())), 'window': self.window,
                    'deviation': self.deviation(), 'alerts': list(self.alerts)}


def monitor_positions(accepted, letters='ABCD', threshold=0.25, min_window=200):
    monitor = PositionMonitor(letters, threshold, min_window)
    for record in accepted:
        if record.question_type == 'mcq':
            monitor.update(record.gold_label)
    return monitor, monitor.alerts


def review_bundle(records, every, component):
    """Markdown export of every `every`-th accepted record, starting with the first."""
    lines = [f'# Review bundle: {component}', '', f'Every {every}th accepted item.', '']
    for i, record in enumerate(records):
        if i % every:
            continue
        gold = record.gold_label or '-'
        lines += [f'## {i + 1}. {record.id}', '',
                  f'gold: {gold}, attempts: {record.provenance.attempts_used}', '',
                  '**Question**', '', record.first_user, '']
        if record.assistant_text:
            lines += ['**Answer**', '', record.assistant_text, '']
    return '\n'.join(lines)


class SynthResult(BaseModel):
    component: str
    records: list[ChatRecord] = Field(default_factory=list)
    stats: dict[str, int] = Field(default_factory=dict)
    attempts_histogram: dict[int, int] = Field(default_factory=dict)
    positions: dict = Field(default_factory=dict)


def _synthetic(component, model, attempts, question, answer, prompt_text, key, question_type, gold, **extra):
    messages = [Message(role='user', content=question)]
    if answer:
        messages.append(Message(role='assistant', content=answer))
    return ChatRecord(id=synthetic_record_id(component, prompt_text, attempts, item=key), source=f'synth_{component}',
                      messages=messages, question_type=question_type, gold_label=gold,
                      provenance=SyntheticProvenance(component=component, teacher=model, attempts_used=attempts),
                      **extra)


def _run_jobs(jobs, worker, max_in_flight, desc):
    # results in job order regardless of completion order
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(tqdm(pool.map(worker, jobs), total=len(jobs), desc=desc, disable=None))


def _finish(component, results, settings):
    """Sorts accepted records by seed key, updates the position monitor and counts outcomes."""
    result = SynthResult(component=component)
    monitor = PositionMonitor(settings.letters, settings.position_threshold, settings.position_min_window)
    stats = Counter()
    attempts = Counter()
    for key, status, records, used in sorted(results, key=lambda r: r[0]):
        stats['jobs'] += 1
        stats[status] += 1
        attempts[used] += 1
        for record in records:
            if record.question_type == 'mcq':
                monitor.update(record.gold_label)
            result.records.append(record)
    stats['records'] = len(result.records)
    result.stats = dict(sorted(stats.items()))
    result.attempts_histogram = dict(sorted(attempts.items()))
    result.positions = monitor.summary()
    logger.bind(stage='synth').info(f'{component}: {stats["jobs"]} jobs, {len(result.records)} records')
    return result


def job_keys(pool, target_size=None):
    # cycles through the pool (sorted by id) until target_size jobs exist
    target = target_size or len(pool)
    return [(pool[j % len(pool)], f'{pool[j % len(pool)].id}#{j // len(pool)}') for j in range(target)]


def run_curated(pool, gateway, model, settings, seed, max_in_flight=8):
    """Curated QA: five exemplars from the seed item's bucket, one new item per call.

    Labeled seeds are rejection-sampled against the seed's gold; unlabeled seeds accept the first
    parseable output.
    """
    pool = sorted(pool, key=lambda r: r.id)
    buckets = {'labeled': [r for r in pool if r.question_type == 'mcq'],
               'unlabeled': [r for r in pool if r.question_type == 'open']}
    template = make_template('curated_qa', settings.date, settings.reasoning)

    def worker(job):
        seed_item, key = job
        labeled = seed_item.question_type == 'mcq'
        pool_id = 'labeled' if labeled else 'unlabeled'
        _, exemplars = draw_exemplars(buckets[pool_id], 5, derive_seed(seed, key), pool_id)
        prompt = build_prompt(template, exemplars=[(r.first_user, r.assistant_text) for r in exemplars],
                              labeled=labeled, model=model, max_tokens=settings.max_tokens, seed_tag=key)
        prompt_text = prompt.messages[-1].content
        gold = seed_item.gold_label if labeled else None
        family = answer_family(seed_item) if labeled else 'open'

        def make_record(question, answer, extracted, used):
            return _synthetic('curated_qa', model, used, question, answer, prompt_text, key,
                              'mcq' if labeled else 'open', extracted if labeled else None, seed_item=seed_item.id)

        outcome = rejection_sample(prompt, gold, gateway, family, settings.max_attempts, settings.temperature,
                                   parse=parse_curated_output, make_record=make_record)
        if not outcome.accepted:
            logger.bind(stage='synth', record_id=seed_item.id, outcome='rejected').debug(
                f'no match after {outcome.attempts_used} attempts')
            return key, 'rejected', [], outcome.attempts_used
        return key, 'accepted', [outcome.final_record], outcome.attempts_used

    return _finish('curated_qa', _run_jobs(job_keys(pool, settings.target_size), worker, max_in_flight, 'curated'),
                   settings)


def generate_until_parsed(req, gateway, parse, max_attempts):
    """Calls until parse succeeds; returns (parsed, attempts) or (None, attempts)."""
    for n in range(1, max_attempts + 1):
        try:
            resp = gateway.complete(req)
            return parse(resp.text), n
        except (GatewayError, ParseError) as e:
            logger.bind(stage='synth', outcome='retry').debug(f'{req.seed_tag}: {e}')
    return None, max_attempts


def run_guidelines(docs, gateway, model, settings, seed, max_in_flight=8):
    """Guidelines QA: one guideline per call, up to ten items per batch; gold read from each answer."""
    template = make_template('guidelines_qa', settings.date, settings.reasoning)
    docs = sorted(docs, key=lambda d: d.id)

    def worker(doc):
        prompt = build_prompt(template, guideline=doc.text, model=model, temperature=settings.temperature,
                              max_tokens=settings.max_tokens, seed_tag=doc.id)
        parsed, used = generate_until_parsed(prompt, gateway, parse_guideline_batch, settings.max_attempts)
        if parsed is None:
            return doc.id, 'parse_failed', [], used
        pairs, skipped = parsed
        if len(pairs) < 10:
            logger.bind(stage='synth', record_id=doc.id).info(f'{len(pairs)} items parsed, {len(skipped)} skipped')
        records = []
        for k, (question, answer) in enumerate(pairs):
            letter = extract_answer(answer, 'mcq')
            if letter is None:
                continue
            records.append(_synthetic('guidelines_qa', model, used, question, answer, prompt.messages[-1].content,
                                      f'{doc.id}#{k}', 'mcq', letter, guideline_id=doc.id))
        return doc.id, 'accepted' if records else 'no_answer_letter', records, used

    return _finish('guidelines_qa', _run_jobs(docs, worker, max_in_flight, 'guidelines'), settings)


def run_moove(pool, gateway, model, settings, seed, max_in_flight=8):
    """MOOVE: a new open-ended clinical stem from five exemplar prompts, then a response call."""
    pool = sorted(pool, key=lambda r: r.id)
    template = make_template('moove', settings.date, settings.reasoning)
    resp_cfg = settings.moove_response

    def worker(job):
        seed_item, key = job
        _, exemplars = draw_exemplars(pool, 5, derive_seed(seed, key), 'moove_train')
        prompt = build_prompt(template, exemplars=[r.first_user for r in exemplars], model=model,
                              temperature=settings.temperature, max_tokens=settings.max_tokens, seed_tag=key)
        stem, used = generate_until_parsed(prompt, gateway, parse_moove_output, settings.max_attempts)
        if stem is None:
            return key, 'parse_failed', [], used
        answer = None
        if resp_cfg.enabled:
            req = ChatRequest(model=model, messages=[ChatMessage(role='user', content=stem)],
                              temperature=resp_cfg.temperature, max_tokens=resp_cfg.max_tokens,
                              seed_tag=f'{key}/response')
            resp = gateway.complete_safe(req)
            if not resp.ok or not resp.text.strip():
                return key, 'response_failed', [], used
            answer = resp.text
        record = _synthetic('moove', model, used, stem, answer, prompt.messages[-1].content, key, 'open', None,
                            seed_item=seed_item.id)
        return key, 'accepted', [record], used

    return _finish('moove', _run_jobs(job_keys(pool, settings.target_size), worker, max_in_flight, 'moove'),
                   settings)


COMPONENTS = {'curated': run_curated, 'guidelines': run_guidelines, 'moove': run_moove}
