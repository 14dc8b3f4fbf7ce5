import time

import numpy as np
import pytest
from rapidfuzz.distance import Levenshtein

from create_test_datasets import chat, make_vocab, planted_decontam_corpus, random_text
from decontam import (DecontamError, alignment_score, build_index, decontaminate, read_references,
                      record_tokens, report_to_json, screen)


@pytest.fixture(scope='module')
def vocab():
    return make_vocab(seed=3)


def words(rng, vocab, n):
    return random_text(rng, vocab, n).split()


def kept(corpus, index, tau=0.5, workers=1):
    stream, report = decontaminate(corpus, index, tau, workers)
    return list(stream), report


def test_one_gram_for_reference_of_length_n():
    index = build_index(['a b c d e f g h'], n=8)
    assert len(index.grams) == 1


def test_reference_of_ten_tokens():
    index = build_index(['a b c d e f g h i j'], n=8)
    assert len(index.grams) == 3


def test_shared_gram_lists_both_occurrences():
    index = build_index([('r1', 'a b c d e f g h x'), ('r2', 'y a b c d e f g h')], n=8)
    assert index.grams[tuple('abcdefgh')] == [('r1', 0), ('r2', 1)]


def test_short_reference_is_not_indexed():
    index = build_index([('short', 'a b c'), ('long', 'a b c d e f g h')], n=8)
    assert len(index) == 2
    assert all(ref == 'long' for occ in index.grams.values() for ref, _ in occ)


@pytest.mark.parametrize('n', [0, 1])
def test_bad_gram_order(n):
    with pytest.raises(DecontamError):
        build_index(['a b c'], n=n)


def test_exact_copy_removed(vocab):
    rng = np.random.default_rng(0)
    ref = random_text(rng, vocab, 30)
    index = build_index([('bench/0', ref)])
    decision = screen(chat('c/train/0', ref, 'some answer'), index, 0.5)
    assert decision.stage == 'removed'
    assert decision.alignment_score == 0.0
    assert decision.matched_reference_id == 'bench/0'


def test_disjoint_vocabulary_is_clean(vocab):
    rng = np.random.default_rng(0)
    index = build_index([random_text(rng, vocab[:100], 30)])
    decision = screen(chat('c/train/0', random_text(rng, vocab[200:], 40)), index, 0.5)
    assert decision.stage == 'clean'
    assert decision.alignment_score is None


def test_incidental_overlap_is_retained(vocab):
    rng = np.random.default_rng(1)
    ref = words(rng, vocab, 24)
    text = words(rng, vocab, 240)
    text[100:108] = ref[5:13]
    index = build_index([('bench/0', ' '.join(ref))])
    record = chat('c/train/0', ' '.join(text))
    decision = screen(record, index, 0.5)
    assert decision.stage == 'flagged_retained'
    assert decision.alignment_score > 0.5
    # brute force over every window start
    tokens = record_tokens(record, index.tokenizer)
    brute = min(Levenshtein.distance(tokens[s:s + 24], ref) for s in range(len(tokens) - 23)) / 24
    assert decision.alignment_score == pytest.approx(brute)


def test_alignment_score_bounds():
    assert alignment_score(list('abcdefgh'), tuple('abcdefgh'), [0]) == 0.0
    assert 0.0 < alignment_score(list('abcdefgx'), tuple('abcdefgh'), [0]) <= 1.0
    assert alignment_score(list('ab'), tuple('abcdefgh'), [0]) == pytest.approx(6 / 8)


def test_separator_keeps_grams_inside_one_message():
    index = build_index([('r', 'a b c d e f g h')], n=8)
    split = chat('c/train/0', 'x y a b c d', 'e f g h z')
    assert screen(split, index, 0.5).stage == 'clean'


def test_tau_out_of_range():
    index = build_index(['a b c d e f g h'])
    with pytest.raises(DecontamError):
        screen(chat('c/train/0', 'a'), index, 1.5)


def test_no_hits_returns_identical_corpus(vocab):
    rng = np.random.default_rng(2)
    corpus = [chat(f'c/train/{i}', random_text(rng, vocab, 20)) for i in range(10)]
    index = build_index([random_text(rng, vocab, 20)])
    out, report = kept(corpus, index)
    assert out == corpus
    assert report.removed == 0 and report.clean == 10


def test_five_clean_three_planted(vocab):
    rng = np.random.default_rng(3)
    refs = [(f'bench/{i}', random_text(rng, vocab, 16)) for i in range(3)]
    corpus = [chat(f'c/train/{i}', random_text(rng, vocab, 30)) for i in range(5)]
    corpus[1:1] = [chat(f'c/train/planted{i}', text) for i, (_, text) in enumerate(refs)]
    out, report = kept(corpus, build_index(refs))
    assert [r.id for r in out] == [f'c/train/{i}' for i in range(5)]
    assert report.removed == 3
    assert sorted(e['reference_id'] for e in report.removals) == ['bench/0', 'bench/1', 'bench/2']
    assert report_to_json(report)['per_reference'] == {'bench/0': 1, 'bench/1': 1, 'bench/2': 1}


@pytest.fixture(scope='module')
def planted():
    records, references, exact_ids, para_ids = planted_decontam_corpus()
    return records, build_index(references), set(exact_ids), set(para_ids)


def test_plant_and_detect(planted):
    records, index, exact_ids, para_ids = planted
    assert len(records) == 1000
    start = time.monotonic()
    out, report = kept(records, index, 0.5)
    assert time.monotonic() - start < 10
    removed = {e['record_id'] for e in report.removals}
    assert exact_ids <= removed
    assert para_ids <= removed
    assert removed == exact_ids | para_ids
    assert report.scanned == report.clean + report.flagged_retained + report.removed == 1000
    assert len(out) == 1000 - report.removed == 925


def test_forty_percent_substitutions_are_removed():
    records, references, exact_ids, para_ids = planted_decontam_corpus(n_unrelated=50, n_exact=0, n_para=25,
                                                                       seed=5, para_fraction=0.4)
    _, report = kept(records, build_index(references), 0.5)
    removals = {e['record_id']: e['score'] for e in report.removals}
    assert set(removals) == set(para_ids)
    # 10 of 24 tokens substituted
    assert max(removals.values()) <= 10 / 24 + 1e-12


def test_idempotent(planted):
    records, index, _, _ = planted
    once, _ = kept(records, index)
    twice, report = kept(once, index)
    assert twice == once
    assert report.removed == 0


def test_removed_set_grows_with_tau(planted):
    records, index, _, _ = planted
    previous = set()
    for tau in (0.0, 0.1, 0.25, 0.5, 0.9, 1.0):
        _, report = kept(records, index, tau)
        removed = {e['record_id'] for e in report.removals}
        assert previous <= removed
        previous = removed


def test_threaded_screening_matches_serial(planted):
    records, index, _, _ = planted
    serial, r1 = kept(records, index, workers=1)
    threaded, r2 = kept(records, index, workers=4)
    assert serial == threaded
    assert r1 == r2


def test_threaded_screening_reads_ahead_a_bounded_window(planted):
    records, index, _, _ = planted
    pulled = 0

    def source():
        nonlocal pulled
        for record in records:
            pulled += 1
            yield record

    stream, report = decontaminate(source(), index, workers=4)
    next(stream)
    assert pulled - report.scanned == 16
    assert pulled < len(records)
    rest = list(stream)
    assert pulled == report.scanned == len(records)
    assert len(rest) + 1 == report.clean + report.flagged_retained


def test_read_references(tmp_path):
    (tmp_path / 'bench.txt').write_text('first prompt\n\nsecond prompt\n')
    (tmp_path / 'qa.jsonl').write_text('{"question": "q one"}\n'
                                      '{"messages": [{"role": "user", "content": "hi"}]}\n')
    refs = list(read_references([str(tmp_path / 'bench.txt'), str(tmp_path / 'qa.jsonl')]))
    assert refs == [('bench/0', 'first prompt'), ('bench/2', 'second prompt'), ('qa/0', 'q one'), ('qa/1', 'hi')]
