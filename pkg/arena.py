# Pairwise judging arena with order-swap debiasing, win-rate / Likert aggregation and an MCQA accuracy harness.

import os
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from gateway import ChatMessage, ChatRequest, GatewayError
from prompts import SYSTEM_TEXT, fill
from synthgen import extract_answer
from utils import derive_seed, rows_to_csv, write_json, write_jsonl

CRITERIA = {
    'question_comprehension': 'Question Comprehension',
    'logical_reasoning': 'Logical Reasoning',
    'relevance_completeness': 'Relevance and Completeness',
    'harmlessness': 'Harmlessness',
    'fairness': 'Fairness',
    'contextual_awareness': 'Contextual Awareness',
    'communication': 'Communication',
    'clarity': 'Clarity',
    'alignment_with_guidelines': 'Alignment with Guidelines',
}
NAME_TO_CRITERION = {name.casefold(): key for key, name in CRITERIA.items()}

JUDGE_TEMPLATE = """You are a senior physician comparing two AI assistant responses to the same clinical prompt.

=== PROMPT ===
{prompt}

=== MODEL 1 RESPONSE ===
{response_1}

=== MODEL 2 RESPONSE ===
{response_2}

Compare the two responses on these nine criteria: {criteria}.
First explain your reasoning in free text. Then end your reply with exactly ten lines:
one line per criterion in the form "<Criterion>: <Model 1 score>/<Model 2 score>", each score an
integer from 1 (Poor) to 5 (Excellent), followed by the line "WINNER: Model 1", "WINNER: Model 2"
or "WINNER: Tie"."""

SCORE_LINE_RE = re.compile(r'^[ \t*]*([A-Za-z][A-Za-z ,&-]*?)[ \t*]*:[ \t*]*(\d+)[ \t]*/[ \t]*(\d+)[ \t*]*$', re.MULTILINE)
WINNER_RE = re.compile(r'WINNER:\s*\**\s*(Model 1|Model 2|Tie)\b', re.IGNORECASE)
WINNERS = {'model 1': 'model1', 'model 2': 'model2', 'tie': 'tie'}
MIRROR = {'model1': 'model2', 'model2': 'model1', 'tie': 'tie'}


class ArenaError(Exception):
    pass


class JudgeParseError(ArenaError):
    pass


class PairTask(BaseModel):
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    prompt_id: str
    prompt_text: str
    model_a: str
    response_a: str
    model_b: str
    response_b: str
    swap: bool = False  # true: presented as Model 1 = b


class JudgeVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    winner: Optional[Literal['model1', 'model2', 'tie']] = None
    scores: dict[str, tuple[int, int]] = Field(default_factory=dict)
    rationale_text: str = ''
    parse_ok: bool = False
    reason: Optional[str] = None
    attempts: int = 0

    def mirrored(self):
        return self.model_copy(update={'winner': MIRROR[self.winner] if self.winner else None,
                                       'scores': {k: (b, a) for k, (a, b) in self.scores.items()}})


class PairwiseAggregate(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_a: str
    model_b: str
    n: int
    wins: int
    ties: int
    losses: int
    invalid_count: int
    net: Optional[float] = None
    adjusted: Optional[float] = None
    delta_likert: dict[str, float] = Field(default_factory=dict)
    delta_likert_mean: Optional[float] = None
    mean_a: dict[str, float] = Field(default_factory=dict)
    mean_b: dict[str, float] = Field(default_factory=dict)


def swap_flag(seed, prompt_id):
    # seeded Bernoulli(0.5) per prompt
    return bool(np.random.default_rng(derive_seed(seed, prompt_id)).random() < 0.5)


def make_tasks(prompts, responses_a, responses_b, model_a, model_b, seed):
    """prompts: (prompt_id, text) pairs; responses_*: prompt_id -> text. Prompts lacking a response are skipped."""
    tasks = []
    for prompt_id, text in prompts:
        a, b = responses_a.get(prompt_id), responses_b.get(prompt_id)
        if not a or not b:
            logger.bind(stage='arena', record_id=prompt_id, outcome='skipped').warning('missing response')
            continue
        tasks.append(PairTask(prompt_id=prompt_id, prompt_text=text, model_a=model_a, response_a=a,
                              model_b=model_b, response_b=b, swap=swap_flag(seed, prompt_id)))
    return tasks


def judge_request(task, judge_model, temperature=0.0, reasoning=None, date='', max_tokens=2048):
    first, second = (task.response_b, task.response_a) if task.swap else (task.response_a, task.response_b)
    user = fill(JUDGE_TEMPLATE, prompt=task.prompt_text, response_1=first, response_2=second,
                criteria=', '.join(CRITERIA.values()))
    messages = []
    if reasoning:
        messages.append(ChatMessage(role='system', content=fill(SYSTEM_TEXT, date=date, reasoning=reasoning)))
    messages.append(ChatMessage(role='user', content=user))
    return ChatRequest(model=judge_model, messages=messages, temperature=temperature, max_tokens=max_tokens,
                       seed_tag=f'judge/{task.prompt_id}')


def parse_verdict(text):
    """Reads the trailer only: nine score lines plus the WINNER line; the last occurrence of each wins."""
    winners = WINNER_RE.findall(text or '')
    if not winners:
        raise JudgeParseError('no WINNER line')
    scores = {}
    for name, s1, s2 in SCORE_LINE_RE.findall(text):
        key = NAME_TO_CRITERION.get(' '.join(name.split()).casefold())
        if key is not None:
            scores[key] = (int(s1), int(s2))
    missing = [CRITERIA[k] for k in CRITERIA if k not in scores]
    if missing:
        raise JudgeParseError(f'missing criteria: {", ".join(missing)}')
    for key, (s1, s2) in scores.items():
        if not (1 <= s1 <= 5 and 1 <= s2 <= 5):
            raise JudgeParseError(f'{CRITERIA[key]} score {s1}/{s2} out of range 1-5')
    rationale = text[:SCORE_LINE_RE.search(text).start()].strip()
    return JudgeVerdict(winner=WINNERS[winners[-1].casefold()], scores={k: scores[k] for k in CRITERIA},
                        rationale_text=rationale, parse_ok=True)


def judge_pair(task, gateway, judge_model, parse_retries=2, temperature=0.0, reasoning=None, date='',
               max_tokens=2048):
    """One judge call; on a parse failure up to parse_retries more at temperature 0."""
    req = judge_request(task, judge_model, temperature, reasoning, date, max_tokens)
    reason = None
    for n in range(1, parse_retries + 2):
        try:
            resp = gateway.complete(req)
        except GatewayError as e:
            return JudgeVerdict(parse_ok=False, reason=f'{type(e).__name__}: {e}', attempts=n)
        try:
            return parse_verdict(resp.text).model_copy(update={'attempts': n})
        except JudgeParseError as e:
            reason = str(e)
            req = req.with_temperature(0.0)
    logger.bind(stage='arena', record_id=task.prompt_id, outcome='parse_failed').warning(reason)
    return JudgeVerdict(parse_ok=False, reason=reason, attempts=parse_retries + 1)


def judge_all(tasks, gateway, judge_model, settings, max_in_flight=8, date=''):
    def work(task):
        return judge_pair(task, gateway, judge_model, settings.judge_parse_retries, settings.judge_temperature,
                          settings.judge_reasoning, date, settings.max_tokens)

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(zip(tasks, pool.map(work, tasks)))


def canonical(task, verdict):
    """(winner, scores) with model1 = model A, undoing the presentation swap."""
    return verdict.mirrored() if task.swap else verdict


def adjusted_from_net(net):
    return (100 + net) / 2


def aggregate(pairs):
    """Win/tie/loss counts from model A's perspective, net and adjusted win rates, Likert deltas."""
    pairs = list(pairs)
    if not pairs:
        raise ArenaError('no verdicts to aggregate')
    model_pairs = {(t.model_a, t.model_b) for t, _ in pairs}
    if len(model_pairs) > 1:
        raise ArenaError(f'verdicts mix model pairs: {sorted(model_pairs)}')
    model_a, model_b = model_pairs.pop()
    wins = ties = losses = invalid = 0
    diffs = {k: [] for k in CRITERIA}
    a_scores = {k: [] for k in CRITERIA}
    b_scores = {k: [] for k in CRITERIA}
    for task, verdict in pairs:
        if not verdict.parse_ok:
            invalid += 1
            continue
        v = canonical(task, verdict)
        if v.winner == 'model1':
            wins += 1
        elif v.winner == 'model2':
            losses += 1
        else:
            ties += 1
        for k, (sa, sb) in v.scores.items():
            diffs[k].append(sa - sb)
            a_scores[k].append(sa)
            b_scores[k].append(sb)
    n = wins + ties + losses
    agg = PairwiseAggregate(model_a=model_a, model_b=model_b, n=n, wins=wins, ties=ties, losses=losses,
                            invalid_count=invalid)
    if n:
        agg.net = 100 * (wins - losses) / n
        agg.adjusted = 100 * (wins + ties / 2) / n
        agg.delta_likert = {k: float(np.mean(d)) for k, d in diffs.items()}
        agg.delta_likert_mean = float(np.mean(list(agg.delta_likert.values())))
        agg.mean_a = {k: float(np.mean(s)) for k, s in a_scores.items()}
        agg.mean_b = {k: float(np.mean(s)) for k, s in b_scores.items()}
    return agg


def verdict_log(pairs):
    """Per-item rows; `verdict` is in the canonical frame (model1 = model A)."""
    rows = []
    for task, verdict in pairs:
        v = canonical(task, verdict)
        rows.append({'prompt_id': task.prompt_id, 'model_a': task.model_a, 'model_b': task.model_b,
                     'swap': task.swap, 'presented_winner': verdict.winner, 'verdict': v.winner,
                     'scores': {k: list(s) for k, s in v.scores.items()}, 'parse_ok': verdict.parse_ok,
                     'reason': verdict.reason, 'attempts': verdict.attempts,
                     'rationale': verdict.rationale_text})
    return rows


def write_arena(agg, pairs, out_dir):
    paths = [write_json(agg.model_dump(mode='json'), os.path.join(out_dir, 'aggregate.json'))]
    path = os.path.join(out_dir, 'verdicts.jsonl')
    write_jsonl(verdict_log(pairs), path)
    paths.append(path)
    rows = [{'criterion': k, 'mean_A': agg.mean_a.get(k), 'mean_B': agg.mean_b.get(k)} for k in CRITERIA]
    paths.append(rows_to_csv(rows, os.path.join(out_dir, 'radar.csv'), columns=['criterion', 'mean_A', 'mean_B']))
    return paths


def prompt_messages(record):
    # everything before the first assistant turn
    out = []
    for m in record.messages:
        if m.role == 'assistant':
            break
        out.append(ChatMessage(role=m.role, content=m.content))
    return out


def generate_responses(records, gateway, model, temperature=0.0, max_tokens=2048, max_in_flight=8):
    """prompt_id -> response text; failed or empty responses are left out and logged."""
    records = list(records)
    reqs = [ChatRequest(model=model, messages=prompt_messages(r), temperature=temperature, max_tokens=max_tokens,
                        seed_tag=f'respond/{r.id}') for r in records]
    out = {}
    for i, resp in gateway.complete_many(reqs, max_in_flight):
        if resp.ok and resp.text.strip():
            out[records[i].id] = resp.text.strip()
        else:
            logger.bind(stage='arena', record_id=records[i].id, outcome='error').warning(
                f'{model}: {resp.error or "empty response"}')
    return out


def mcqa_eval(records, gateway, model, temperature=0.0, max_tokens=1024, max_in_flight=8):
    """Greedy completion per item, letter extraction, accuracy = matches / n. Returns (accuracy, log rows)."""
    records = [r for r in records]
    if not records:
        raise ArenaError('empty benchmark')
    for r in records:
        if r.question_type != 'mcq':
            raise ArenaError(f'{r.id}: benchmark records must be mcq with a gold label')
    reqs = [ChatRequest(model=model, messages=prompt_messages(r), temperature=temperature, max_tokens=max_tokens,
                        seed_tag=f'mcqa/{r.id}') for r in records]
    log = [None] * len(records)
    for i, resp in gateway.complete_many(reqs, max_in_flight):
        predicted = extract_answer(resp.text, 'mcq') if resp.ok else None
        log[i] = {'id': records[i].id, 'gold': records[i].gold_label, 'predicted': predicted,
                  'correct': predicted == records[i].gold_label, 'error': resp.error}
        if predicted is None:
            logger.bind(stage='arena', record_id=records[i].id, outcome='unanswered').debug(resp.error or 'no letter')
    accuracy = sum(row['correct'] for row in log) / len(log)
    return accuracy, log
