import json

import pandas as pd
import pytest

from arena import (CRITERIA, ArenaError, JudgeParseError, JudgeVerdict, PairTask, adjusted_from_net, aggregate,
                   judge_all, judge_pair, judge_request, make_tasks, mcqa_eval, parse_verdict, swap_flag,
                   write_arena)
from config import ArenaSettings
from create_test_datasets import chat, verdict_text

# (net, adjusted) pairs from ten model comparisons, adjusted rounded to one decimal
REFERENCE_PAIRS = [(59.3, 79.6), (67.2, 83.7), (8.0, 54.0), (72.5, 86.3), (75.7, 87.8), (93.2, 96.6), (29.8, 64.9),
                   (32.7, 66.3), (5.8, 52.9), (24.7, 62.4)]


@pytest.mark.parametrize('net, adjusted', REFERENCE_PAIRS)
def test_adjusted_matches_reference_pairs(net, adjusted):
    assert abs(adjusted_from_net(net) - adjusted) <= 0.15


def task(i, swap=False, model_a='a', model_b='b'):
    return PairTask(prompt_id=f'p{i}', prompt_text=f'prompt {i}', model_a=model_a, response_a='ALPHA answer',
                    model_b=model_b, response_b='BETA answer', swap=swap)


def verdict(winner, s1=4, s2=3):
    return JudgeVerdict(winner=winner, scores={k: (s1, s2) for k in CRITERIA}, parse_ok=True)


def test_win_rate_fixture():
    outcomes = ['model1'] * 1389 + ['model2'] * 203 + ['tie'] * 408
    agg = aggregate([(task(i), verdict(w)) for i, w in enumerate(outcomes)])
    assert (agg.wins, agg.losses, agg.ties, agg.n) == (1389, 203, 408, 2000)
    assert agg.net == pytest.approx(59.3)
    assert agg.adjusted == pytest.approx(79.65)
    assert agg.adjusted == pytest.approx(adjusted_from_net(agg.net))


def test_all_ties():
    agg = aggregate([(task(i), verdict('tie', 3, 3)) for i in range(10)])
    assert agg.net == 0 and agg.adjusted == 50
    assert agg.delta_likert_mean == 0


def test_invalid_verdicts_are_excluded():
    pairs = [(task(0), verdict('model1')), (task(1), JudgeVerdict(parse_ok=False, reason='no WINNER line'))]
    agg = aggregate(pairs)
    assert agg.n == 1 and agg.invalid_count == 1 and agg.net == 100


def test_only_invalid_verdicts():
    agg = aggregate([(task(0), JudgeVerdict(parse_ok=False))])
    assert agg.n == 0 and agg.net is None and agg.adjusted is None


def test_mixed_model_pairs_raise():
    with pytest.raises(ArenaError):
        aggregate([(task(0), verdict('tie')), (task(1, model_b='c'), verdict('tie'))])
    with pytest.raises(ArenaError):
        aggregate([])


def test_swap_is_undone():
    # presented as Model 1 = b; the judge picked Model 2, i.e. model a
    agg = aggregate([(task(0, swap=True), verdict('model2', 2, 5))])
    assert agg.wins == 1
    assert agg.delta_likert['clarity'] == 3
    assert agg.mean_a['clarity'] == 5 and agg.mean_b['clarity'] == 2


def test_delta_likert_antisymmetry():
    pairs = [(task(i, swap=i % 3 == 0), verdict(w, s1, s2))
             for i, (w, s1, s2) in enumerate([('model1', 5, 2), ('model2', 1, 4), ('tie', 3, 3), ('model1', 4, 3)])]
    forward = aggregate(pairs)
    reversed_pairs = [(PairTask(prompt_id=t.prompt_id, prompt_text=t.prompt_text, model_a=t.model_b,
                                response_a=t.response_b, model_b=t.model_a, response_b=t.response_a,
                                swap=not t.swap), v) for t, v in pairs]
    backward = aggregate(reversed_pairs)
    assert (backward.wins, backward.losses) == (forward.losses, forward.wins)
    for k in CRITERIA:
        assert backward.delta_likert[k] == pytest.approx(-forward.delta_likert[k])
    assert backward.net == pytest.approx(-forward.net)


def test_parse_full_trailer():
    v = parse_verdict(verdict_text('Model 2', 3, 5))
    assert v.parse_ok and v.winner == 'model2'
    assert len(v.scores) == 9 and all(s == (3, 5) for s in v.scores.values())
    assert v.rationale_text.startswith('Both responses address the scenario')


def test_last_trailer_wins():
    v = parse_verdict(verdict_text('Model 1', 2, 2) + '\n\nOn reflection:\n' + verdict_text('Tie', 4, 4))
    assert v.winner == 'tie'
    assert v.scores['harmlessness'] == (4, 4)


@pytest.mark.parametrize('text, reason', [
    (verdict_text('Model 1', 6, 3), 'out of range'),
    ('I cannot decide.', 'no WINNER'),
    (verdict_text('Model 1', 4, 3).replace('Fairness: 4/3\n', ''), 'Fairness'),
])
def test_parse_failures(text, reason):
    with pytest.raises(JudgeParseError, match=reason):
        parse_verdict(text)


def test_judge_request_presents_swapped_order():
    req = judge_request(task(0, swap=True), 'judge')
    text = req.messages[-1].content
    assert text.index('BETA answer') < text.index('ALPHA answer')
    assert '=== MODEL 1 RESPONSE ===\nBETA answer' in text
    assert req.temperature == 0.0 and req.seed_tag == 'judge/p0'


def test_judge_reasoning_system_message():
    req = judge_request(task(0), 'judge', reasoning='high', date='2025-06-01')
    assert req.messages[0].role == 'system'
    assert 'Reasoning: high' in req.messages[0].content


def test_swap_flag_is_seeded():
    flags = [swap_flag(7, f'p{i}') for i in range(400)]
    assert flags == [swap_flag(7, f'p{i}') for i in range(400)]
    assert 150 < sum(flags) < 250


def alpha_judge(req, ordinal):
    # always prefers the ALPHA response, wherever it is presented
    text = req.messages[-1].content
    first = text.split('=== MODEL 1 RESPONSE ===')[1].split('=== MODEL 2 RESPONSE ===')[0]
    if 'ALPHA' in first:
        return verdict_text('Model 1', 5, 2)
    return verdict_text('Model 2', 2, 5)


def test_coherent_judge_is_swap_invariant(mock_gateway):
    gateway, _ = mock_gateway(responder=alpha_judge)
    tasks = [task(i, swap=swap_flag(3, f'p{i}')) for i in range(50)]
    assert any(t.swap for t in tasks) and not all(t.swap for t in tasks)
    agg = aggregate(judge_all(tasks, gateway, 'judge', ArenaSettings(), max_in_flight=4))
    assert agg.wins == 50 and agg.net == 100
    assert agg.delta_likert_mean == 3


def test_position_biased_judge_nets_out(mock_gateway):
    gateway, _ = mock_gateway(default=verdict_text('Model 1', 4, 4))
    tasks = [task(i, swap=swap_flag(11, f'p{i}')) for i in range(400)]
    agg = aggregate(judge_all(tasks, gateway, 'judge', ArenaSettings(), max_in_flight=8))
    assert abs(agg.net) <= 15


def test_parse_retry_then_success(mock_gateway):
    gateway, backend = mock_gateway(default=['I cannot decide.', verdict_text('Tie', 3, 3)])
    v = judge_pair(task(0), gateway, 'judge', parse_retries=2)
    assert v.parse_ok and v.attempts == 2 and backend.calls == 2


def test_parse_retries_exhausted(mock_gateway):
    gateway, backend = mock_gateway(default='I cannot decide.')
    v = judge_pair(task(0), gateway, 'judge', parse_retries=2)
    assert not v.parse_ok and v.attempts == 3 and backend.calls == 3
    assert v.reason == 'no WINNER line'


def test_make_tasks_skips_missing_responses():
    tasks = make_tasks([('p0', 'x'), ('p1', 'y')], {'p0': 'A0', 'p1': 'A1'}, {'p0': 'B0'}, 'a', 'b', seed=1)
    assert [t.prompt_id for t in tasks] == ['p0']


def mcq_records(n):
    return [chat(f'bench/{i}', f'question {i}\nA) x\nB) y\nC) z\nD) w', None, 'mcq', 'ABCD'[i % 4])
            for i in range(n)]


def test_mcqa_all_correct(mock_gateway):
    records = mcq_records(40)
    gold = {f'mcqa/{r.id}': r.gold_label for r in records}
    gateway, _ = mock_gateway(responder=lambda req, _: f'Reasoning. Answer: {gold[req.seed_tag]}')
    accuracy, log = mcqa_eval(records, gateway, 'model', max_in_flight=4)
    assert accuracy == 1.0
    assert [row['id'] for row in log] == [r.id for r in records]


def test_mcqa_alternating(mock_gateway):
    records = mcq_records(500)
    index = {f'mcqa/{r.id}': i for i, r in enumerate(records)}

    def responder(req, _):
        i = index[req.seed_tag]
        return f'Answer: {records[i].gold_label}' if i % 2 == 0 else 'The answer is unclear.'

    gateway, _ = mock_gateway(responder=responder)
    accuracy, log = mcqa_eval(records, gateway, 'model', max_in_flight=8)
    assert accuracy == 0.5
    assert sum(row['predicted'] is None for row in log) == 250


def test_mcqa_rejects_open_records(mock_gateway):
    gateway, _ = mock_gateway(default='x')
    with pytest.raises(ArenaError):
        mcqa_eval([chat('o/0', 'q', None)], gateway, 'model')


def test_write_arena(tmp_path):
    pairs = [(task(0), verdict('model1')), (task(1, swap=True), verdict('model1'))]
    agg = aggregate(pairs)
    write_arena(agg, pairs, tmp_path)
    assert json.loads((tmp_path / 'aggregate.json').read_text())['wins'] == 1
    rows = [json.loads(line) for line in (tmp_path / 'verdicts.jsonl').read_text().splitlines()]
    assert [r['verdict'] for r in rows] == ['model1', 'model2']
    assert [r['presented_winner'] for r in rows] == ['model1', 'model1']
    radar = pd.read_csv(tmp_path / 'radar.csv')
    assert list(radar.columns) == ['criterion', 'mean_A', 'mean_B'] and len(radar) == 9
