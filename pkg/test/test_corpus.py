import json

import pytest
from pydantic import ValidationError

from corpus import (AnnotationProfile, ChatRecord, CorpusFormatError, GuidelineDoc, InvariantError, Message,
                    SyntheticProvenance, check_invariants, read_corpus, read_guidelines, synthetic_record_id,
                    write_corpus, write_guidelines)


def records(n, make_record):
    return [make_record(record_id=f'src/train/{i}', gold='ABCDE'[i % 5]) for i in range(n)]


def test_empty_file(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('')
    assert list(read_corpus(path)) == []


def test_round_trip(tmp_path, make_record):
    rs = records(100, make_record)
    path = tmp_path / 'c.jsonl'
    assert write_corpus(rs, path) == 100
    assert list(read_corpus(path)) == rs


def test_lines_are_versioned_lf_utf8(tmp_path, make_record):
    path = tmp_path / 'c.jsonl'
    write_corpus([make_record(user='Fièvre et toux?')], path)
    raw = path.read_bytes()
    assert b'\r\n' not in raw and raw.endswith(b'\n')
    line = json.loads(raw.decode('utf-8'))
    assert line['format'] == 1
    assert 'Fièvre' in raw.decode('utf-8')


def test_three_lines_in_order_with_blank_lines(tmp_path, make_record):
    rs = records(3, make_record)
    path = tmp_path / 'c.jsonl'
    path.write_text('\n'.join(r.to_line() for r in rs[:2]) + '\n\n' + rs[2].to_line() + '\n')
    assert [r.id for r in read_corpus(path)] == [r.id for r in rs]


def test_missing_messages_reports_line(tmp_path, make_record):
    rs = records(3, make_record)
    lines = [json.loads(r.to_line()) for r in rs]
    del lines[1]['messages']
    path = tmp_path / 'c.jsonl'
    path.write_text('\n'.join(json.dumps(x) for x in lines) + '\n')
    with pytest.raises(CorpusFormatError) as e:
        list(read_corpus(path))
    assert e.value.line_no == 2
    assert 'messages' in e.value.reason


@pytest.mark.parametrize('line, reason', [
    ('{not json', 'invalid JSON'),
    ('[1, 2]', 'not a JSON object'),
    ('{"id": "x"}', 'format version'),
])
def test_malformed_lines(tmp_path, line, reason):
    path = tmp_path / 'c.jsonl'
    path.write_text(line + '\n')
    with pytest.raises(CorpusFormatError, match=reason):
        list(read_corpus(path))


def test_duplicate_id_on_read(tmp_path, make_record):
    r = make_record()
    path = tmp_path / 'c.jsonl'
    path.write_text(r.to_line() + '\n' + r.to_line() + '\n')
    with pytest.raises(CorpusFormatError, match='duplicate id') as e:
        list(read_corpus(path))
    assert e.value.line_no == 2


def test_duplicate_id_on_write(tmp_path, make_record):
    with pytest.raises(InvariantError):
        write_corpus([make_record(), make_record()], tmp_path / 'c.jsonl')


def test_mcq_gold_f_rejected(tmp_path, make_record):
    with pytest.raises(InvariantError) as e:
        write_corpus([make_record(gold='F')], tmp_path / 'c.jsonl')
    assert e.value.record_id == 'src/train/0'
    assert 'A-E' in e.value.invariant
    assert not (tmp_path / 'c.jsonl').exists()


def test_consecutive_user_messages_rejected(tmp_path):
    r = ChatRecord(id='x/train/1', source='x', question_type='open',
                   messages=[Message(role='user', content='a'), Message(role='user', content='b')])
    assert check_invariants(r)
    with pytest.raises(InvariantError, match='consecutive'):
        write_corpus([r], tmp_path / 'c.jsonl')


def test_first_non_system_must_be_user():
    r = ChatRecord(id='x/train/1', source='x', question_type='open',
                   messages=[Message(role='system', content='s'), Message(role='assistant', content='a')])
    assert check_invariants(r) == ['first non-system message must be from user']


@pytest.mark.parametrize('content', ['', '   \n'])
def test_empty_message_content(content):
    with pytest.raises(ValidationError):
        Message(role='user', content=content)


def test_message_content_is_stripped():
    assert Message(role='user', content='  hi \n').content == 'hi'


def test_unknown_fields_survive_round_trip(tmp_path, make_record):
    line = json.loads(make_record().to_line())
    line['license'] = 'cc-by'
    line['messages'][0]['lang'] = 'en'
    path = tmp_path / 'c.jsonl'
    path.write_text(json.dumps(line) + '\n')
    r = next(read_corpus(path))
    out = tmp_path / 'out.jsonl'
    write_corpus([r], out)
    again = json.loads(out.read_text())
    assert again['license'] == 'cc-by'
    assert again['messages'][0]['lang'] == 'en'


def test_synthetic_provenance_round_trip(tmp_path, make_record):
    r = make_record().model_copy(update={
        'provenance': SyntheticProvenance(component='moove', teacher='t', attempts_used=2),
        'annotations': AnnotationProfile(specialty='Cardiology', difficulty=3)})
    path = tmp_path / 'c.jsonl'
    write_corpus([r], path)
    back = next(read_corpus(path))
    assert back.provenance.kind == 'synthetic' and back.provenance.attempts_used == 2
    assert back.annotations.get('difficulty') == '3'
    assert back.annotations.get('urgency') == 'unknown'


def test_difficulty_range():
    with pytest.raises(ValidationError):
        AnnotationProfile(difficulty=6)


def test_synthetic_ids_are_deterministic():
    a = synthetic_record_id('curated_qa', 'prompt', 1)
    assert a == synthetic_record_id('curated_qa', 'prompt', 1)
    assert a != synthetic_record_id('curated_qa', 'prompt', 2)
    assert a.startswith('synth/curated_qa/')


def test_streaming_reader_is_lazy(tmp_path, make_record):
    path = tmp_path / 'c.jsonl'
    write_corpus(records(50, make_record), path)
    stream = read_corpus(path)
    assert next(stream).id == 'src/train/0'
    assert sum(1 for _ in stream) == 49


def test_guidelines_round_trip(tmp_path):
    docs = [GuidelineDoc(id=f'g{i}', institution='who', text='body text', token_count=2) for i in range(3)]
    path = tmp_path / 'g.jsonl'
    write_guidelines(docs, path)
    assert list(read_guidelines(path)) == docs
