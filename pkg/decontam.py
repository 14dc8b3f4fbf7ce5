# Benchmark decontamination: n-gram candidate flagging, then token-alignment confirmation.
#
# A record sharing an n-gram with a reference is a candidate. Around each hit, record windows of the
# reference's length are compared with the reference by token-level Levenshtein distance; the best
# normalized distance is the record's alignment score, and the record is removed when score <= tau.

import json
import os
from collections import Counter, defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Literal, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from rapidfuzz.distance import Levenshtein
from tqdm import tqdm

from choose import choose_tokenizer

SEP = '\x00'  # never produced by a tokenizer; keeps n-grams inside one message
SCOPE = 'full_conversation'


class DecontamError(Exception):
    pass


class ReferenceIndex(object):
    """Immutable after build; safe to share between screening threads."""

    def __init__(self, n, grams, references, tokenizer_id, tokenizer):
        self.n = n
        self.grams = grams
        self.references = references
        self.tokenizer_id = tokenizer_id
        self.tokenizer = tokenizer

    def __len__(self):
        return len(self.references)


class DecontamDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    stage: Literal['clean', 'flagged_retained', 'removed']
    matched_reference_id: Optional[str] = None
    alignment_score: Optional[float] = Field(default=None, ge=0, le=1)
    threshold: float
    excerpt: Optional[str] = None


class DecontamReport(BaseModel):
    n: int
    tau: float
    tokenizer_id: str
    scope: str = SCOPE
    scanned: int = 0
    clean: int = 0
    flagged: int = 0
    flagged_retained: int = 0
    removed: int = 0
    removals: list[dict] = Field(default_factory=list)
    retained_candidates: list[dict] = Field(default_factory=list)
    per_reference: dict[str, int] = Field(default_factory=dict)

    def add(self, decision):
        self.scanned += 1
        if decision.stage == 'clean':
            self.clean += 1
            return
        self.flagged += 1
        entry = {'record_id': decision.record_id, 'reference_id': decision.matched_reference_id,
                 'score': decision.alignment_score, 'excerpt': decision.excerpt}
        if decision.stage == 'removed':
            self.removed += 1
            self.removals.append(entry)
            ref = decision.matched_reference_id
            self.per_reference[ref] = self.per_reference.get(ref, 0) + 1
        else:
            self.flagged_retained += 1
            self.retained_candidates.append(entry)


def ngrams(tokens, n):
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i:i + n])
        if SEP not in gram:
            yield i, gram


def build_index(references, n=8, tokenizer='regex'):
    """Indexes every n-gram of every reference with all its occurrences.

    references: iterable of text or of (reference_id, text); plain texts get ids ref/<i>.
    """
    if n < 2:
        raise DecontamError(f'n-gram order must be >= 2, got {n}')
    tokenize = choose_tokenizer(tokenizer)
    tokenizer_id = getattr(tokenize, 'tokenizer_id', str(tokenizer))
    grams = defaultdict(list)
    refs = {}
    for i, ref in enumerate(tqdm(references, desc='index', disable=None)):
        ref_id, text = (f'ref/{i}', ref) if isinstance(ref, str) else ref
        if ref_id in refs:
            raise DecontamError(f'duplicate reference id {ref_id!r}')
        tokens = tuple(tokenize(text))
        refs[ref_id] = tokens
        if len(tokens) < n:
            logger.bind(stage='decontam').warning(f'reference {ref_id} has {len(tokens)} tokens < n={n}, '
                                                  f'not indexed')
            continue
        for offset, gram in ngrams(tokens, n):
            grams[gram].append((ref_id, offset))
    if not refs:
        raise DecontamError('no references to index')
    return ReferenceIndex(n, dict(grams), refs, tokenizer_id, tokenize)


def record_tokens(record, tokenize):
    tokens = []
    for m in record.messages:
        if tokens:
            tokens.append(SEP)
        tokens.extend(tokenize(m.content))
    return tokens


def alignment_score(tokens, reference, hit_positions):
    """min over windows of Levenshtein(window, reference) / |reference|, clamped to [0, 1]."""
    L = len(reference)
    last_start = max(0, len(tokens) - L)
    starts = set()
    for i in hit_positions:
        starts.update(range(max(0, i - L), min(i + L, last_start) + 1))
    best = 1.0
    for s in sorted(starts):
        d = Levenshtein.distance(tokens[s:s + L], reference, score_cutoff=int(best * L))
        best = min(best, d / L)
        if best == 0.0:
            break
    return min(max(best, 0.0), 1.0)


def screen(record, index, tau):
    if not 0 <= tau <= 1:
        raise DecontamError(f'tau must be in [0, 1], got {tau}')
    tokens = record_tokens(record, index.tokenizer)
    hits = defaultdict(list)
    excerpts = {}
    for i, gram in ngrams(tokens, index.n):
        for ref_id, _ in index.grams.get(gram, ()):
            if not hits[ref_id] or hits[ref_id][-1] != i:
                hits[ref_id].append(i)
            excerpts.setdefault(ref_id, ' '.join(gram))
    if not hits:
        return DecontamDecision(record_id=record.id, stage='clean', threshold=tau)
    best_ref, best = None, None
    for ref_id in sorted(hits):
        score = alignment_score(tokens, index.references[ref_id], hits[ref_id])
        if best is None or score < best:
            best_ref, best = ref_id, score
        if best == 0.0:
            break
    stage = 'removed' if best <= tau else 'flagged_retained'
    return DecontamDecision(record_id=record.id, stage=stage, matched_reference_id=best_ref,
                            alignment_score=best, threshold=tau, excerpt=excerpts[best_ref])


def bounded_map(pool, fn, items, window):
    """Like pool.map, in input order, but with at most `window` items submitted ahead of the consumer."""
    items = iter(items)
    pending = deque(pool.submit(fn, item) for item in islice(items, window))
    while pending:
        result = pending.popleft().result()
        for item in islice(items, 1):
            pending.append(pool.submit(fn, item))
        yield result


def decontaminate(corpus, index, tau=0.5, workers=1):
    """Returns (stream of kept records in input order, DecontamReport filled as the stream is consumed)."""
    report = DecontamReport(n=index.n, tau=tau, tokenizer_id=index.tokenizer_id)

    def decide(record):
        return record, screen(record, index, tau)

    def stream():
        log = logger.bind(stage='decontam')
        if workers > 1:
            pool = ThreadPoolExecutor(max_workers=workers)
            decisions = bounded_map(pool, decide, corpus, workers * 4)
        else:
            pool = None
            decisions = map(decide, corpus)
        try:
            for record, decision in decisions:
                report.add(decision)
                if decision.stage == 'clean':
                    yield record
                    continue
                log.bind(record_id=record.id, outcome=decision.stage).debug(
                    f'{decision.matched_reference_id} score {decision.alignment_score:.3f}')
                if decision.stage == 'flagged_retained':
                    yield record
        finally:
            if pool is not None:
                pool.shutdown()
        log.info(f'scanned {report.scanned}, clean {report.clean}, flagged {report.flagged}, '
                 f'removed {report.removed}')

    return stream(), report


def read_references(paths):
    """(reference_id, text) pairs from .txt (one prompt per line), .json lists or .jsonl files.

    JSON objects contribute their prompt/question/text field, or the user turns of a chat record.
    """
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        ext = os.path.splitext(path)[1].lower()
        with open(path, 'r', encoding='utf-8') as f:
            if ext == '.txt':
                items = [line.rstrip('\n') for line in f]
            elif ext == '.json':
                items = json.load(f)
            else:
                items = [json.loads(line) if line.strip() else '' for line in f]
        for i, item in enumerate(items):
            text = _reference_text(item)
            if text and text.strip():
                yield f'{name}/{i}', text


def _reference_text(item):
    if isinstance(item, str):
        return item
    for key in ('prompt', 'question', 'text'):
        if isinstance(item.get(key), str):
            return item[key]
    if isinstance(item.get('messages'), list):
        return '\n'.join(m['content'] for m in item['messages'] if m.get('role') == 'user')
    return None


def report_to_json(report):
    out = report.model_dump(mode='json')
    out['per_reference'] = dict(sorted(Counter(report.per_reference).items()))
    return out
