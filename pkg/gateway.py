# Chat-completion gateway: the single place where pipeline stages call a model.
# Backends: an OpenAI-compatible HTTP client and a scripted mock used by tests and offline runs.

import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from typing import Literal, Optional

import openai
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential_jitter

from utils import canonical_json, read_json, sha256_text

TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    # transient; retried with backoff up to the attempt cap
    pass


class APIError(GatewayError):
    def __init__(self, status, body=''):
        self.status = status
        self.body = body
        super().__init__(f'API error {status}: {body[:200]}')


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal['system', 'developer', 'user', 'assistant']
    content: str


class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    messages: list[ChatMessage] = Field(min_length=1)
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    max_tokens: int = Field(default=1024, gt=0)
    seed_tag: Optional[str] = None

    def with_temperature(self, temperature):
        return self.model_copy(update={'temperature': temperature})

    @property
    def text(self):
        return '\n'.join(m.content for m in self.messages)


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str = ''
    finish_reason: Literal['stop', 'length', 'error']
    latency_ms: int = 0
    attempts: int = 1
    error: Optional[str] = None

    @property
    def ok(self):
        return self.finish_reason != 'error'


def messages_key(messages):
    return sha256_text(canonical_json([{'role': m.role, 'content': m.content} for m in messages]))


def request_key(req):
    return sha256_text(canonical_json({'model': req.model, 'messages': messages_key(req.messages),
                                       'temperature': req.temperature, 'seed_tag': req.seed_tag}))


class TokenBucket:
    """Blocking token-bucket rate limiter, `rate` requests per second."""

    def __init__(self, rate, capacity=None):
        self.rate = float(rate)
        self.capacity = capacity or max(1.0, self.rate)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                delay = (1 - self.tokens) / self.rate
            time.sleep(delay)


class OpenAIBackend:
    def __init__(self, base_url, api_key, developer_role=True, timeout=60.0):
        self.client = openai.OpenAI(base_url=base_url, api_key=api_key, max_retries=0, timeout=timeout)
        self.developer_role = developer_role

    def _messages(self, req):
        # without a developer role the developer prompt moves into a second system-position message
        out = []
        for m in req.messages:
            role = m.role
            if role == 'developer' and not self.developer_role:
                role = 'system'
            out.append({'role': role, 'content': m.content})
        return out

    def __call__(self, req):
        try:
            resp = self.client.chat.completions.create(model=req.model, messages=self._messages(req),
                                                       temperature=req.temperature, max_tokens=req.max_tokens)
        except openai.APIConnectionError as e:
            raise TransportError(str(e)) from e
        except openai.APIStatusError as e:
            if e.status_code in TRANSIENT_STATUS:
                raise TransportError(f'status {e.status_code}') from e
            raise APIError(e.status_code, e.response.text[:500]) from e
        choice = resp.choices[0]
        finish = 'length' if choice.finish_reason == 'length' else 'stop'
        return choice.message.content or '', finish


class MockBackend:
    """Scripted backend. A reply is a pure function of (model, messages, temperature, seed_tag, call ordinal).

    Lookup order: exact messages hash in `script`, then the first matching rule, then `responder`,
    then `default`. A reply is a string, a dict ({"text", "finish_reason"} or {"error": "transport"|"api",
    "status", "body"}) or a list of those; lists are read by call ordinal, the last entry repeating,
    or, for rules with "select": "hash", starting at a position derived from the request hash.
    """

    def __init__(self, script=None, rules=None, default=None, responder=None, delay=0.0):
        self.script = script or {}
        self.rules = rules or []
        self.default = default
        self.responder = responder
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self._ordinals = Counter()
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        data = read_json(path)
        rules = data.pop('__rules__', [])
        default = data.pop('__default__', None)
        return cls(script=data, rules=rules, default=default)

    def __call__(self, req):
        full_key = request_key(req)
        with self._lock:
            ordinal = self._ordinals[full_key]
            self._ordinals[full_key] += 1
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
        try:
            delay = self.delay(req) if callable(self.delay) else self.delay
            if delay:
                time.sleep(delay)
            return self._realize(self._lookup(req, full_key, ordinal))
        finally:
            with self._lock:
                self.in_flight -= 1

    def _lookup(self, req, full_key, ordinal):
        key = messages_key(req.messages)
        if key in self.script:
            return self._pick(self.script[key], ordinal)
        text = req.text
        for rule in self.rules:
            if 'model' in rule and rule['model'] != req.model:
                continue
            if 'contains' in rule and rule['contains'] not in text:
                continue
            return self._pick(rule['replies'], ordinal, rule.get('select', 'ordinal'), full_key)
        if self.responder is not None:
            return self.responder(req, ordinal)
        if self.default is not None:
            return self._pick(self.default, ordinal)
        raise APIError(404, f'no scripted reply for request {key[:12]}')

    @staticmethod
    def _pick(replies, ordinal, select='ordinal', full_key=None):
        if not isinstance(replies, list):
            return replies
        if select == 'hash':
            return replies[(int(full_key[:8], 16) + ordinal) % len(replies)]
        return replies[min(ordinal, len(replies) - 1)]

    @staticmethod
    def _realize(reply):
        if isinstance(reply, str):
            return reply, 'stop'
        if reply.get('error') == 'transport':
            raise TransportError(reply.get('body', 'scripted transport failure'))
        if reply.get('error') == 'api':
            raise APIError(reply.get('status', 500), reply.get('body', 'scripted API failure'))
        return reply['text'], reply.get('finish_reason', 'stop')


class Gateway:
    """Shared by concurrent callers. Retries transport failures only; parse failures belong to callers."""

    def __init__(self, backend, max_attempts=5, backoff_base=0.5, backoff_factor=2.0,
                 requests_per_second=None, max_in_flight=None):
        self.backend = backend
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.limiter = TokenBucket(requests_per_second) if requests_per_second else None
        self._slots = threading.BoundedSemaphore(max_in_flight) if max_in_flight else None
        self.counts = defaultdict(Counter)
        self._lock = threading.Lock()

    def _count(self, model, key, n=1):
        with self._lock:
            self.counts[model][key] += n

    def _call(self, req):
        if self.limiter:
            self.limiter.acquire()
        self._count(req.model, 'attempts')
        if self._slots is None:
            return self.backend(req)
        with self._slots:
            return self.backend(req)

    def _log_retry(self, model, state):
        self._count(model, 'retries')
        logger.bind(outcome='retry').warning(
            f'{state.outcome.exception()}; attempt {state.attempt_number}/{self.max_attempts}, retrying')

    def complete(self, req):
        self._count(req.model, 'requests')
        start = time.monotonic()
        retrying = Retrying(stop=stop_after_attempt(self.max_attempts),
                            wait=wait_exponential_jitter(initial=self.backoff_base, exp_base=self.backoff_factor,
                                                         jitter=self.backoff_base),
                            retry=retry_if_exception_type(TransportError),
                            before_sleep=lambda state: self._log_retry(req.model, state),
                            reraise=True)
        try:
            for attempt in retrying:
                with attempt:
                    text, finish = self._call(req)
        except GatewayError:
            self._count(req.model, 'errors')
            raise
        n = attempt.retry_state.attempt_number
        latency = int((time.monotonic() - start) * 1000)
        logger.debug(f'{req.model}: completed in {n} attempt(s), {latency} ms')
        return ChatResponse(text=text, finish_reason=finish, latency_ms=latency, attempts=n)

    def complete_safe(self, req):
        # errors become an in-stream error response instead of an exception
        start = time.monotonic()
        try:
            return self.complete(req)
        except GatewayError as e:
            return ChatResponse(finish_reason='error', error=f'{type(e).__name__}: {e}',
                                latency_ms=int((time.monotonic() - start) * 1000))

    def complete_many(self, reqs, max_in_flight):
        """Yields (index, ChatResponse) as requests finish; at most max_in_flight are outstanding."""
        if max_in_flight < 1:
            raise ValueError('max_in_flight must be >= 1')
        it = enumerate(reqs)
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            pending = {}

            def submit_next():
                try:
                    i, req = next(it)
                except StopIteration:
                    return False
                pending[pool.submit(self.complete_safe, req)] = i
                return True

            for _ in range(max_in_flight):
                if not submit_next():
                    break
            while pending:
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    i = pending.pop(fut)
                    yield i, fut.result()
                    submit_next()

    def complete_all(self, reqs, max_in_flight):
        # same as complete_many, results in request order
        results = dict(self.complete_many(reqs, max_in_flight))
        return [results[i] for i in range(len(results))]

    def stats(self):
        # totals plus per-model counts of requests, attempts, retries and errors
        with self._lock:
            total = sum(self.counts.values(), Counter())
            return dict(total, by_model={m: dict(c) for m, c in self.counts.items()})
