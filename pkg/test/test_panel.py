import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from create_test_datasets import panel_rows
from panel import (PanelError, PanelRating, _kappa_rows, cohen_kappa, consensus, human_criterion_deltas,
                   judge_criterion_deltas, normalize_verdict, panel_validate, read_judge_log, read_panel,
                   summarize_kappas, write_panel)
from utils import write_jsonl

VERDICTS = ['model1', 'model2', 'tie']


def kappa_oracle(a, b):
    labels = sorted(set(a) | set(b))
    n = len(a)
    po = sum(x == y for x, y in zip(a, b)) / n
    pe = sum((a.count(c) / n) * (b.count(c) / n) for c in labels)
    if po == 1.0:
        return 1.0
    return (po - pe) / (1 - pe)


def test_identical_sequences():
    assert cohen_kappa(['model1', 'tie', 'model2'], ['model1', 'tie', 'model2']) == 1.0
    assert cohen_kappa(['tie'] * 5, ['tie'] * 5) == 1.0


def test_independent_sequences_near_zero():
    rng = np.random.default_rng(0)
    a = [VERDICTS[i] for i in rng.integers(0, 3, size=10000)]
    b = [VERDICTS[i] for i in rng.integers(0, 3, size=10000)]
    assert abs(cohen_kappa(a, b)) <= 0.03


def test_confusion_matrix_example():
    # [[20, 5], [10, 15]]: p_o = 0.7, p_e = 0.5
    a = ['yes'] * 25 + ['no'] * 25
    b = ['yes'] * 20 + ['no'] * 5 + ['yes'] * 10 + ['no'] * 15
    assert abs(cohen_kappa(a, b) - 0.4) <= 1e-12


def test_kappa_matches_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(5, 60))
        a = [VERDICTS[i] for i in rng.integers(0, 3, size=n)]
        b = [VERDICTS[i] for i in rng.integers(0, 3, size=n)]
        expected = kappa_oracle(a, b)
        assert abs(cohen_kappa(a, b) - expected) <= 1e-12
        codes = {v: i for i, v in enumerate(VERDICTS)}
        rows = _kappa_rows(np.array([[codes[x] for x in a]]), np.array([[codes[x] for x in b]]), 3)
        assert abs(rows[0] - expected) <= 1e-12


def test_kappa_is_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(5, 40))
        a = [VERDICTS[i] for i in rng.integers(0, 3, size=n)]
        b = [VERDICTS[i] for i in rng.integers(0, 3, size=n)]
        assert cohen_kappa(a, b) == pytest.approx(cohen_kappa(b, a), abs=1e-15)


def test_kappa_length_mismatch():
    with pytest.raises(PanelError):
        cohen_kappa(['tie'], ['tie', 'tie'])
    with pytest.raises(PanelError):
        cohen_kappa([], [])


@pytest.mark.parametrize('verdicts, expected', [
    (['model1', 'model1', 'tie'], 'model1'),
    (['model1', 'model2'], None),
    (['tie', 'tie', 'model1', 'model2'], None),
    (['model2'], 'model2'),
    ([], None),
])
def test_consensus(verdicts, expected):
    assert consensus(verdicts) == expected


def test_percentile_and_z_small_panel():
    report = summarize_kappas({'r1': 0.1, 'r2': 0.2, 'r3': 0.3, 'r4': 0.4}, judge_kappa=0.25, n_boot=100)
    assert report.judge_percentile == 0.5
    assert report.judge_z == pytest.approx(0.0, abs=1e-12)
    assert report.human_mean == pytest.approx(0.25)


@pytest.mark.parametrize('judge, percentile', [(0.1, 0.25), (0.2, 0.5), (0.4, 1.0), (0.05, 0.0)])
def test_percentile_counts_ties_with_raters(judge, percentile):
    report = summarize_kappas({'r1': 0.1, 'r2': 0.2, 'r3': 0.3, 'r4': 0.4}, judge_kappa=judge, n_boot=50)
    assert report.judge_percentile == percentile


def test_judge_z_on_large_panel():
    base = np.linspace(-1.0, 1.0, 204)
    base = (base - base.mean()) / base.std()
    kappas = 0.320 + 0.228 * base
    report = summarize_kappas({f'r{i:03d}': float(k) for i, k in enumerate(kappas)}, judge_kappa=0.232,
                              n_boot=200)
    assert report.human_mean == pytest.approx(0.320, abs=1e-9)
    assert report.human_std == pytest.approx(0.228, abs=1e-9)
    assert abs(report.judge_z - (-0.39)) <= 0.01
    assert report.n_raters_included == 204


def ratings_from(rows):
    return [PanelRating(rater_id=r['rater_id'], item_id=r['item_id'], verdict=r['verdict']) for r in rows]


def agreeing_panel(n_items=20, raters=('r0', 'r1', 'r2')):
    truth = {f'i{j:02d}': VERDICTS[j % 3] for j in range(n_items)}
    rows = [{'rater_id': r, 'item_id': i, 'verdict': v} for r in raters for i, v in truth.items()]
    return rows, truth


def test_rater_with_too_few_items_is_excluded():
    rows, truth = agreeing_panel()
    rows += [{'rater_id': 'late', 'item_id': i, 'verdict': v} for i, v in list(truth.items())[:9]]
    report = panel_validate(ratings_from(rows), truth, min_items=10, n_boot=100)
    assert 'late' not in report.per_rater
    assert report.n_raters_excluded == 1 and report.n_raters_included == 3
    assert report.judge_kappa == 1.0


def test_no_ties_mode_drops_tie_items():
    rows, truth = agreeing_panel(30)
    with_ties = panel_validate(ratings_from(rows), truth, mode='with_ties', min_items=5, n_boot=100)
    no_ties = panel_validate(ratings_from(rows), truth, mode='no_ties', min_items=5, n_boot=100)
    assert with_ties.per_rater_items['r0'] == 30
    assert no_ties.per_rater_items['r0'] == 20
    assert no_ties.judge_items == 20


def test_no_eligible_raters():
    rows, truth = agreeing_panel(5)
    with pytest.raises(PanelError):
        panel_validate(ratings_from(rows), truth, min_items=10)


def test_duplicate_rating_rejected():
    rows, truth = agreeing_panel(12)
    with pytest.raises(PanelError):
        panel_validate(ratings_from(rows + rows[:1]), truth)


def test_unknown_mode():
    rows, truth = agreeing_panel()
    with pytest.raises(PanelError):
        panel_validate(ratings_from(rows), truth, mode='sometimes')


def test_simulated_panel():
    items = [f'item{i}' for i in range(60)]
    rows, truth = panel_rows(items, n_raters=12, accuracy=0.8, seed=3)
    report = panel_validate(ratings_from(rows), truth, seed=5, n_boot=500)
    assert report.n_raters_included == 12
    assert 0.3 < report.human_mean < 1.0
    assert report.judge_kappa > report.human_mean
    assert report.judge_percentile >= 0.5
    lo, hi = report.judge_ci
    assert lo <= report.judge_kappa <= hi


def test_bootstrap_is_deterministic():
    rows, truth = panel_rows([f'item{i}' for i in range(40)], n_raters=6, seed=1)
    r1 = panel_validate(ratings_from(rows), truth, seed=9, n_boot=300)
    r2 = panel_validate(ratings_from(rows), truth, seed=9, n_boot=300)
    r3 = panel_validate(ratings_from(rows), truth, seed=10, n_boot=300)
    assert r1.human_ci == r2.human_ci and r1.judge_ci == r2.judge_ci
    assert r1.human_ci != r3.human_ci


@pytest.mark.parametrize('raw, expected', [('Model 1', 'model1'), (' m2 ', 'model2'), ('TIE', 'tie')])
def test_normalize_verdict(raw, expected):
    assert normalize_verdict(raw) == expected


def test_normalize_verdict_unknown():
    with pytest.raises(PanelError, match="'model1', 'model2', 'tie'"):
        normalize_verdict('both')
    with pytest.raises(ValidationError):
        PanelRating(rater_id='r0', item_id='i0', verdict='both')


def test_read_panel_and_deltas(tmp_path):
    rows, _ = panel_rows([f'item{i}' for i in range(10)], n_raters=3, seed=2)
    path = tmp_path / 'panel.csv'
    pd.DataFrame(rows).to_csv(path, index=False)
    ratings, df = read_panel(path)
    assert len(ratings) == 30
    deltas = human_criterion_deltas(df)
    # the preferred side always scores higher in the simulated panel
    assert all(v > 0 for v in deltas.values()) and len(deltas) == 9


def test_read_panel_missing_columns(tmp_path):
    path = tmp_path / 'panel.csv'
    path.write_text('rater_id,item\nr0,i0\n')
    with pytest.raises(PanelError, match='verdict'):
        read_panel(path)


def test_judge_log_and_write(tmp_path):
    log = [{'prompt_id': 'i00', 'verdict': 'model1', 'parse_ok': True, 'scores': {'clarity': [5, 2]}},
           {'prompt_id': 'i01', 'verdict': 'model2', 'parse_ok': True, 'scores': {'clarity': [4, 5]}},
           {'prompt_id': 'i02', 'verdict': None, 'parse_ok': False, 'scores': {}}]
    write_jsonl(log, tmp_path / 'verdicts.jsonl')
    judge, rows = read_judge_log(tmp_path / 'verdicts.jsonl')
    assert judge == {'i00': 'model1', 'i01': 'model2'}
    deltas = judge_criterion_deltas(rows)
    assert deltas == {'clarity': 2.0}
    report = summarize_kappas({'r1': 0.2, 'r2': 0.6}, judge_kappa=0.5, n_boot=50)
    paths = write_panel(report, deltas, {}, tmp_path)
    assert len(paths) == 4
    assert json.loads((tmp_path / 'kappa_with_ties.json').read_text())['judge_percentile'] == 0.5
    hist = pd.read_csv(tmp_path / 'kappa_hist_with_ties.csv')
    assert hist['count'].sum() == 2
