# Shared pytest fixtures. Living at the repository root puts the flat modules on the import path.

import pytest

from corpus import ChatRecord, Message
from gateway import Gateway, MockBackend


@pytest.fixture
def make_record():
    def make(record_id='src/train/0', user='What is the dose?', assistant='Answer: A', question_type='mcq',
             gold='A', source='src'):
        messages = [Message(role='user', content=user)]
        if assistant is not None:
            messages.append(Message(role='assistant', content=assistant))
        return ChatRecord(id=record_id, source=source, messages=messages, question_type=question_type,
                          gold_label=gold)
    return make


@pytest.fixture
def mock_gateway():
    # builds a no-backoff gateway over a MockBackend; returns (gateway, backend)
    def make(max_attempts=5, max_in_flight=None, **backend_kwargs):
        backend = MockBackend(**backend_kwargs)
        return Gateway(backend, max_attempts=max_attempts, backoff_base=0.0, max_in_flight=max_in_flight), backend
    return make
