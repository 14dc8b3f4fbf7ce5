# Functions for creating small deterministic test datasets: source-shaped raw files, planted decontamination
# corpora, rater panels, a mock model script and a run config wiring them together.

import json
import os
import sys

import numpy as np
import pandas as pd

from arena import CRITERIA
from corpus import LETTERS, ChatRecord, Message
from utils import atomic_write, write_json

SYLLABLES = ['ba', 'ce', 'di', 'fo', 'gu', 'ha', 'ke', 'li', 'mo', 'nu', 'pa', 're', 'si', 'to', 'vu',
             'wa', 'xe', 'yi', 'zo', 'ru']
SPECIALTY_REPLIES = ['Cardiology', 'definitely neurology!', 'Pediatrics', 'Infectious disease', 'xq zzv']
URGENCY_REPLIES = ['Urgent', 'Non-urgent', 'Emergency', 'semi urgent']
DIFFICULTY_REPLIES = ['2', '3', 'Difficulty: 4', '3']


def make_vocab(n=5000, seed=0):
    # pronounceable pseudo-words, distinct
    rng = np.random.default_rng(seed)
    words = set()
    while len(words) < n:
        k = int(rng.integers(2, 5))
        words.add(''.join(SYLLABLES[i] for i in rng.integers(0, len(SYLLABLES), size=k)))
    return sorted(words)


def random_text(rng, vocab, n):
    return ' '.join(vocab[i] for i in rng.integers(0, len(vocab), size=n))


def write_items(items, path):
    with atomic_write(path) as f:
        for item in items:
            f.write(json.dumps(item, ensure_ascii=False, sort_keys=True) + '\n')
    return path


def mcq_items(n, rng, vocab, n_options=4, rationale=True):
    items = []
    for _ in range(n):
        item = {'question': f'Case {random_text(rng, vocab, 14)}. Which is the most likely diagnosis?',
                'options': [random_text(rng, vocab, 3) for _ in range(n_options)],
                'label': int(rng.integers(0, n_options))}
        if rationale:
            item['rationale'] = random_text(rng, vocab, 12) + '.'
        items.append(item)
    return items


def context_items(n, rng, vocab):
    return [{'question': f'Does {random_text(rng, vocab, 6)} improve outcomes?',
             'context': [random_text(rng, vocab, 20) + '.', random_text(rng, vocab, 15) + '.'],
             'long_answer': random_text(rng, vocab, 10) + '.',
             'final_decision': ['yes', 'no', 'maybe'][int(rng.integers(0, 3))]} for _ in range(n)]


def consumer_items(n, rng, vocab):
    return [{'question': f'I have {random_text(rng, vocab, 10)}. What should I do?',
             'answer': random_text(rng, vocab, 25) + '.'} for _ in range(n)]


def guideline_items(institutions=16, per=2, seed=0, vocab=None):
    rng = np.random.default_rng(seed)
    vocab = vocab or make_vocab(seed=seed)
    items = []
    for i in range(institutions):
        for j in range(per):
            items.append({'id': f'gl-{i:02d}-{j}', 'institution': f'institution_{i:02d}',
                          'text': random_text(rng, vocab, 60) + '.'})
    return items


def chat(record_id, user, assistant=None, question_type='open', gold=None, source='fixture'):
    messages = [Message(role='user', content=user)]
    if assistant:
        messages.append(Message(role='assistant', content=assistant))
    return ChatRecord(id=record_id, source=source, messages=messages, question_type=question_type, gold_label=gold)


def paraphrase(rng, vocab, tokens, fraction=0.25, keep=10):
    # substitutes `fraction` of the tokens after the first `keep`, so one n-gram of the original survives
    tokens = list(tokens)
    tail = np.arange(keep, len(tokens))
    for i in rng.choice(tail, size=int(round(fraction * len(tokens))), replace=False):
        tokens[i] = vocab[int(rng.integers(0, len(vocab)))]
    return tokens


def planted_decontam_corpus(n_unrelated=925, n_exact=50, n_para=25, ref_len=24, n_refs=100, seed=0,
                             para_fraction=0.25):
    """Returns (records, references, exact_ids, paraphrase_ids).

    references are (reference_id, text); exact plants embed one reference between random text,
    paraphrase plants substitute `para_fraction` of a reference's tokens.
    """
    rng = np.random.default_rng(seed)
    vocab = make_vocab(seed=seed)
    references = [(f'bench/{i}', random_text(rng, vocab, ref_len)) for i in range(n_refs)]
    records, exact_ids, para_ids = [], [], []
    for i in range(n_unrelated):
        records.append(chat(f'fixture/train/u{i}', random_text(rng, vocab, int(rng.integers(12, 60))),
                            random_text(rng, vocab, 20)))
    for i in range(n_exact):
        _, text = references[i]
        user = f'{random_text(rng, vocab, 5)} {text} {random_text(rng, vocab, 5)}'
        records.append(chat(f'fixture/train/e{i}', user, random_text(rng, vocab, 20)))
        exact_ids.append(f'fixture/train/e{i}')
    for i in range(n_para):
        _, text = references[n_exact + i]
        user = ' '.join(paraphrase(rng, vocab, text.split(), para_fraction))
        records.append(chat(f'fixture/train/p{i}', user, random_text(rng, vocab, 20)))
        para_ids.append(f'fixture/train/p{i}')
    order = rng.permutation(len(records))
    return [records[i] for i in order], references, exact_ids, para_ids


def verdict_text(winner, s1, s2):
    lines = ['Both responses address the scenario; the comparison below weighs accuracy and safety.', '']
    lines += [f'{name}: {s1}/{s2}' for name in CRITERIA.values()]
    lines.append(f'WINNER: {winner}')
    return '\n'.join(lines)


def curated_reply(rng, vocab, letter):
    options = '\n'.join(f'{c}) {random_text(rng, vocab, 3)}' for c in 'ABCD')
    return (f'<question>Case {random_text(rng, vocab, 14)}. Which is the next best step?\n{options}\n'
            f'<answer>{random_text(rng, vocab, 12)}.\n\nAnswer: {letter}')


def guideline_reply(rng, vocab, n=10):
    blocks = []
    for k in range(n):
        options = '\n'.join(f'{c}) {random_text(rng, vocab, 3)}' for c in 'ABCD')
        blocks.append(f'<qa>\n<question>\nA patient {random_text(rng, vocab, 12)}.\n{options}\n</question>\n'
                      f'<answer>{random_text(rng, vocab, 10)}. Answer: {LETTERS[k % 4]}</answer>\n</qa>')
    return '\n\n'.join(blocks)


def mock_script(seed=0):
    """Rule-based mock replies for every pipeline role, keyed by model name and prompt markers."""
    rng = np.random.default_rng(seed)
    vocab = make_vocab(seed=seed + 1)
    rules = [
        {'model': 'teacher-mock', 'contains': 'Here are example questions and answers',
         'replies': [curated_reply(rng, vocab, c) for c in 'ABCD'], 'select': 'hash'},
        {'model': 'teacher-mock', 'contains': '=== GUIDELINE START ===',
         'replies': [guideline_reply(rng, vocab)]},
        {'model': 'teacher-mock', 'contains': 'Here are example prompts',
         'replies': [f'<question>\nSCENARIO {random_text(rng, vocab, 20)}?\n</question>' for _ in range(3)],
         'select': 'hash'},
        {'model': 'teacher-mock', 'contains': 'SCENARIO',
         'replies': [random_text(rng, vocab, 30) + '.' for _ in range(3)], 'select': 'hash'},
        {'model': 'annotator-mock', 'contains': 'the medical specialty', 'replies': SPECIALTY_REPLIES,
         'select': 'hash'},
        {'model': 'annotator-mock', 'contains': 'how urgently', 'replies': URGENCY_REPLIES, 'select': 'hash'},
        {'model': 'annotator-mock', 'contains': 'difficulty for a practising physician',
         'replies': DIFFICULTY_REPLIES, 'select': 'hash'},
        {'model': 'model-a', 'replies': [f'{random_text(rng, vocab, 15)}. Answer: {c}' for c in 'ABCD'],
         'select': 'hash'},
        {'model': 'model-b', 'replies': [f'{random_text(rng, vocab, 8)}. Answer: {c}' for c in 'ABCD'],
         'select': 'hash'},
        {'model': 'judge-mock', 'replies': [verdict_text('Model 1', 4, 3), verdict_text('Model 1', 5, 3),
                                            verdict_text('Model 2', 3, 4), verdict_text('Tie', 4, 4),
                                            'I cannot decide.'], 'select': 'hash'},
    ]
    return {'__rules__': rules}


def panel_rows(item_ids, n_raters=12, accuracy=0.8, seed=0):
    """Raters copy a hidden truth with probability `accuracy`, else pick a verdict at random."""
    rng = np.random.default_rng(seed)
    verdicts = ['model1', 'model2', 'tie']
    truth = {i: verdicts[int(rng.integers(0, 3))] for i in item_ids}
    rows = []
    for r in range(n_raters):
        for item in item_ids:
            v = truth[item] if rng.random() < accuracy else verdicts[int(rng.integers(0, 3))]
            row = {'rater_id': f'rater{r:02d}', 'item_id': item, 'verdict': v}
            for k in CRITERIA:
                hi, lo = int(rng.integers(3, 6)), int(rng.integers(1, 4))
                row[f'{k}_model1'], row[f'{k}_model2'] = (hi, lo) if v == 'model1' else (lo, hi)
            rows.append(row)
    return rows, truth


def create_pipeline_fixture(out_dir, seed=0):
    """Writes the tiny 200-record pipeline fixture, its mock script, panel and run config. Returns paths."""
    rng = np.random.default_rng(seed)
    vocab = make_vocab(seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, name)
    medqa = mcq_items(80, rng, vocab)
    write_items(medqa, p('medqa_like.jsonl'))
    write_items(context_items(40, rng, vocab), p('pubmedqa_like.jsonl'))
    write_items(consumer_items(40, rng, vocab), p('consumer_like.jsonl'))
    write_items(consumer_items(40, rng, vocab), p('moove_like.jsonl'))
    write_items(guideline_items(3, 2, seed, vocab), p('guidelines_raw.jsonl'))
    # three benchmark prompts planted verbatim in the mcq source
    with atomic_write(p('benchmark_prompts.txt')) as f:
        for item in medqa[:3]:
            f.write(item['question'] + '\n')
        for _ in range(20):
            f.write(random_text(rng, vocab, 24) + '\n')
    write_json(mock_script(seed), p('mock_script.json'))
    rows, _ = panel_rows([f'moove_like/train/{i}' for i in range(40)], seed=seed)
    pd.DataFrame(rows).to_csv(p('panel.csv'), index=False, lineterminator='\n')
    mock = lambda model: {'backend': 'mock', 'model': model, 'mock_script': 'mock_script.json'}
    config = {
        'seed': 7,
        'endpoints': {'teacher': mock('teacher-mock'), 'annotator': mock('annotator-mock'),
                      'judge': mock('judge-mock'), 'model_under_test': mock('model-a')},
        'gateway': {'backoff_base': 0.0, 'max_in_flight': 4},
        'ingest': {'sources': {
            'medqa_like': {'schema': 'mcq_options_label', 'input_path': 'medqa_like.jsonl', 'expected_count': 80},
            'pubmedqa_like': {'schema': 'context_question_answer', 'input_path': 'pubmedqa_like.jsonl'},
            'consumer_like': {'schema': 'consumer_qa', 'input_path': 'consumer_like.jsonl'},
            'moove_like': {'schema': 'consumer_qa', 'input_path': 'moove_like.jsonl'},
            'guidelines': {'schema': 'guideline_corpus', 'input_path': 'guidelines_raw.jsonl'}}},
        'decontam': {'refs': ['benchmark_prompts.txt']},
        'synth': {'date': '2025-06-01', 'target_size': 24, 'review_every': 5},
        'profile': {'axes': ['specialty', 'urgency', 'difficulty']},
        'panel': {'n_boot': 500},
    }
    write_json(config, p('config.json'))
    return {'dir': out_dir, 'config': p('config.json'), 'panel': p('panel.csv'),
            'refs': p('benchmark_prompts.txt'), 'mock_script': p('mock_script.json')}


if __name__ == '__main__':
    # writes the pipeline fixture into the given directory
    print(create_pipeline_fixture(sys.argv[1] if len(sys.argv) > 1 else './fixture'))
