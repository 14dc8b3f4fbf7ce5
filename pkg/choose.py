# Functions for choosing tokenizers and chat backends by their string names.

import os

from dotenv import load_dotenv

from tokenizers import LowerSpacy, RegexTokenizer, WhitespaceTokenizer

TOKENIZERS = {
    'regex': RegexTokenizer,
    'whitespace': WhitespaceTokenizer,
    'spacy': LowerSpacy,
}


def choose_tokenizer(tokenizer_id):
    # an already-built tokenizer (any callable) is passed through
    if callable(tokenizer_id):
        return tokenizer_id
    try:
        return TOKENIZERS[tokenizer_id]()
    except KeyError:
        raise ValueError(f'unknown tokenizer {tokenizer_id!r}, choose from {sorted(TOKENIZERS)}')


def choose_backend(endpoint):
    """Builds the chat backend for one config endpoint. Credentials come from the environment only."""
    from gateway import MockBackend, OpenAIBackend

    if endpoint.backend == 'mock':
        return MockBackend.from_file(endpoint.mock_script)
    if endpoint.backend == 'openai':
        load_dotenv()
        api_key = os.getenv(endpoint.api_key_env)
        if not api_key:
            raise ValueError(f'environment variable {endpoint.api_key_env} is not set')
        return OpenAIBackend(endpoint.base_url, api_key, developer_role=endpoint.developer_role,
                             timeout=endpoint.timeout)
    raise ValueError(f'unknown backend {endpoint.backend!r}')


def choose_gateway(config, role):
    # one gateway per pipeline role (teacher, annotator, judge, model_under_test)
    from gateway import Gateway

    try:
        endpoint = config.endpoints[role]
    except KeyError:
        raise ValueError(f'no endpoint configured for role {role!r}')
    g = config.gateway
    return Gateway(choose_backend(endpoint), max_attempts=g.max_attempts, backoff_base=g.backoff_base,
                   backoff_factor=g.backoff_factor, requests_per_second=endpoint.requests_per_second,
                   max_in_flight=g.max_in_flight), endpoint.model
