# Judge validation against a human rater panel: per-rater Cohen's kappa against the leave-one-out
# consensus, judge kappa against the full-panel consensus, percentile, z-score and bootstrap CIs.

import math
import os
import warnings
from collections import Counter, defaultdict
from typing import Literal, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import cohen_kappa_score

from arena import CRITERIA
from utils import read_jsonl, rows_to_csv, write_json

VERDICTS = ('model1', 'model2', 'tie')
VERDICT_ALIASES = {'model1': 'model1', 'model 1': 'model1', 'm1': 'model1',
                   'model2': 'model2', 'model 2': 'model2', 'm2': 'model2', 'tie': 'tie'}
BOOT_CHUNK = 1000


class PanelError(Exception):
    pass


class PanelRating(BaseModel):
    model_config = ConfigDict(frozen=True)

    rater_id: str
    item_id: str
    verdict: Literal[VERDICTS]


class KappaReport(BaseModel):
    mode: Literal['with_ties', 'no_ties']
    per_rater: dict[str, float]
    per_rater_items: dict[str, int] = Field(default_factory=dict)
    n_raters_included: int
    n_raters_excluded: int = 0
    human_mean: float
    human_std: float
    human_median: float
    human_ci: tuple[float, float]
    judge_kappa: Optional[float] = None
    judge_ci: Optional[tuple[float, float]] = None
    judge_items: int = 0
    judge_percentile: Optional[float] = None
    judge_z: Optional[float] = None


def cohen_kappa(a, b):
    """(p_o - p_e) / (1 - p_e); 1.0 whenever the sequences agree everywhere."""
    a, b = list(a), list(b)
    if not a or len(a) != len(b):
        raise PanelError(f'kappa needs two non-empty sequences of equal length, got {len(a)} and {len(b)}')
    if a == b:
        return 1.0
    labels = sorted(set(a) | set(b))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        return float(cohen_kappa_score(a, b, labels=labels))


def _kappa_rows(a, b, k):
    # vectorised kappa for rows of encoded verdicts, shape (m, n)
    po = (a == b).mean(axis=1)
    pe = sum((a == c).mean(axis=1) * (b == c).mean(axis=1) for c in range(k))
    with np.errstate(divide='ignore', invalid='ignore'):
        kappa = (po - pe) / (1 - pe)
    return np.where(po == 1.0, 1.0, kappa)


def consensus(verdicts):
    """Strict-majority verdict, None (abstain) when no verdict has a strict majority."""
    verdicts = list(verdicts)
    if not verdicts:
        return None
    verdict, count = Counter(verdicts).most_common(1)[0]
    return verdict if count * 2 > len(verdicts) else None


def _keep(mode, x, y):
    return mode == 'with_ties' or (x != 'tie' and y != 'tie')


def rater_pairs(by_item, rater, mode):
    """(rater verdicts, leave-one-out consensus) over the rater's usable items."""
    mine, theirs = [], []
    for item_id in sorted(by_item):
        ratings = by_item[item_id]
        if rater not in ratings or len(ratings) < 2:
            continue
        cons = consensus(v for r, v in ratings.items() if r != rater)
        if cons is None or not _keep(mode, ratings[rater], cons):
            continue
        mine.append(ratings[rater])
        theirs.append(cons)
    return mine, theirs


def judge_pairs(by_item, judge, mode):
    jv, cv = [], []
    for item_id in sorted(by_item):
        if judge.get(item_id) is None:
            continue
        cons = consensus(by_item[item_id].values())
        if cons is None or not _keep(mode, judge[item_id], cons):
            continue
        jv.append(judge[item_id])
        cv.append(cons)
    return jv, cv


def index_ratings(ratings):
    by_item = defaultdict(dict)
    for r in ratings:
        if r.rater_id in by_item[r.item_id]:
            raise PanelError(f'rater {r.rater_id!r} rated item {r.item_id!r} twice')
        by_item[r.item_id][r.rater_id] = r.verdict
    return by_item


def bootstrap_mean_ci(values, n_boot, rng):
    values = np.asarray(values, dtype=float)
    means = values[rng.integers(0, len(values), size=(n_boot, len(values)))].mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


def bootstrap_kappa_ci(a, b, n_boot, rng):
    codes = {v: i for i, v in enumerate(sorted(set(a) | set(b)))}
    a = np.array([codes[x] for x in a])
    b = np.array([codes[x] for x in b])
    kappas = []
    for start in range(0, n_boot, BOOT_CHUNK):
        m = min(BOOT_CHUNK, n_boot - start)
        idx = rng.integers(0, len(a), size=(m, len(a)))
        kappas.append(_kappa_rows(a[idx], b[idx], len(codes)))
    kappas = np.concatenate(kappas)
    return float(np.nanpercentile(kappas, 2.5)), float(np.nanpercentile(kappas, 97.5))


def summarize_kappas(per_rater, judge_kappa=None, mode='with_ties', seed=0, n_boot=10000, judge_seqs=None,
                     per_rater_items=None, n_excluded=0):
    """Distribution statistics of per-rater kappas and where the judge falls in it.

    Percentile is the fraction of raters with kappa <= judge kappa; z uses the population std.
    """
    if not per_rater:
        raise PanelError('no eligible raters')
    values = [per_rater[r] for r in sorted(per_rater)]
    mean = math.fsum(values) / len(values)
    std = float(np.std(values))
    rng = np.random.default_rng(seed)
    report = KappaReport(mode=mode, per_rater=dict(sorted(per_rater.items())),
                         per_rater_items=dict(sorted((per_rater_items or {}).items())),
                         n_raters_included=len(values), n_raters_excluded=n_excluded, human_mean=mean,
                         human_std=std, human_median=float(np.median(values)),
                         human_ci=bootstrap_mean_ci(values, n_boot, rng))
    if judge_kappa is not None:
        report.judge_kappa = judge_kappa
        report.judge_percentile = sum(v <= judge_kappa for v in values) / len(values)
        report.judge_z = (judge_kappa - mean) / std if std > 0 else None
        if judge_seqs is not None:
            report.judge_items = len(judge_seqs[0])
            report.judge_ci = bootstrap_kappa_ci(judge_seqs[0], judge_seqs[1], n_boot, rng)
    return report


def panel_validate(ratings, judge, mode='with_ties', seed=0, min_items=10, n_boot=10000):
    """ratings: PanelRatings; judge: item_id -> verdict in the same frame as the panel."""
    if mode not in ('with_ties', 'no_ties'):
        raise PanelError(f'unknown mode {mode!r}')
    by_item = index_ratings(ratings)
    raters = sorted({r for item in by_item.values() for r in item})
    per_rater, items, excluded = {}, {}, 0
    for rater in raters:
        mine, theirs = rater_pairs(by_item, rater, mode)
        if len(mine) < min_items:
            excluded += 1
            logger.bind(stage='validate-judge', outcome='excluded').debug(f'rater {rater}: {len(mine)} usable items')
            continue
        per_rater[rater] = cohen_kappa(mine, theirs)
        items[rater] = len(mine)
    if not per_rater:
        raise PanelError(f'no rater has {min_items} usable items')
    jv, cv = judge_pairs(by_item, judge, mode)
    judge_kappa = cohen_kappa(jv, cv) if jv else None
    if judge_kappa is None:
        logger.bind(stage='validate-judge').warning('judge log shares no usable items with the panel')
    return summarize_kappas(per_rater, judge_kappa, mode, seed, n_boot, (jv, cv) if jv else None, items, excluded)


def normalize_verdict(value):
    v = VERDICT_ALIASES.get(str(value).strip().casefold())
    if v is None:
        raise PanelError(f'unknown verdict {value!r}, expected one of {list(VERDICTS)}')
    return v


def read_panel(path):
    """Panel CSV with rater_id,item_id,verdict and optional <criterion>_model1/_model2 score columns."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = {'rater_id', 'item_id', 'verdict'} - set(df.columns)
    if missing:
        raise PanelError(f'{path}: missing columns {sorted(missing)}')
    ratings = [PanelRating(rater_id=r['rater_id'], item_id=r['item_id'], verdict=normalize_verdict(r['verdict']))
               for r in df.to_dict('records')]
    return ratings, df


def read_judge_log(path):
    """item_id -> canonical verdict from an arena verdict log; unparsed verdicts are skipped."""
    rows = list(read_jsonl(path))
    return {row['prompt_id']: row['verdict'] for row in rows if row.get('parse_ok')}, rows


def chosen_minus_rejected(winner, s1, s2):
    return s1 - s2 if winner == 'model1' else s2 - s1


def judge_criterion_deltas(rows):
    diffs = defaultdict(list)
    for row in rows:
        if not row.get('parse_ok') or row['verdict'] == 'tie':
            continue
        for k, (s1, s2) in row['scores'].items():
            diffs[k].append(chosen_minus_rejected(row['verdict'], s1, s2))
    return {k: float(np.mean(diffs[k])) for k in CRITERIA if diffs[k]}


def human_criterion_deltas(df):
    diffs = defaultdict(list)
    for row in df.to_dict('records'):
        verdict = normalize_verdict(row['verdict'])
        if verdict == 'tie':
            continue
        for k in CRITERIA:
            s1, s2 = row.get(f'{k}_model1', ''), row.get(f'{k}_model2', '')
            if s1 == '' or s2 == '':
                continue
            diffs[k].append(chosen_minus_rejected(verdict, int(s1), int(s2)))
    return {k: float(np.mean(diffs[k])) for k in CRITERIA if diffs[k]}


def kappa_histogram(report, bins=20):
    counts, edges = np.histogram(list(report.per_rater.values()), bins=bins, range=(-1.0, 1.0))
    return [{'bin_left': float(lo), 'bin_right': float(hi), 'count': int(c)}
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def write_panel(report, judge_deltas, human_deltas, out_dir):
    paths = [write_json(report.model_dump(mode='json'), os.path.join(out_dir, f'kappa_{report.mode}.json'))]
    rows = [{'rater_id': r, 'kappa': k, 'n_items': report.per_rater_items.get(r)} for r, k in report.per_rater.items()]
    paths.append(rows_to_csv(rows, os.path.join(out_dir, f'per_rater_kappa_{report.mode}.csv'),
                             columns=['rater_id', 'kappa', 'n_items']))
    paths.append(rows_to_csv(kappa_histogram(report), os.path.join(out_dir, f'kappa_hist_{report.mode}.csv'),
                             columns=['bin_left', 'bin_right', 'count']))
    rows = [{'criterion': k, 'judge': judge_deltas.get(k), 'human': human_deltas.get(k)} for k in CRITERIA]
    paths.append(rows_to_csv(rows, os.path.join(out_dir, 'criterion_deltas.csv'),
                             columns=['criterion', 'judge', 'human']))
    return paths
