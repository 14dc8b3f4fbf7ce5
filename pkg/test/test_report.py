import json

import pandas as pd
import pytest

from corpus import SyntheticProvenance
from create_test_datasets import chat
from report import Composition


def synthetic(record_id, component):
    record = chat(record_id, 'one two three', 'four five', source=f'synth_{component}')
    return record.model_copy(update={'provenance': SyntheticProvenance(component=component, teacher='t',
                                                                       attempts_used=1)})


@pytest.fixture
def mixture():
    return [chat('a/0', 'one two', 'three'), chat('a/1', 'one two three four', None),
            synthetic('s/0', 'moove'), synthetic('s/1', 'curated_qa')]


def test_summary(mixture):
    s = Composition(mixture).summary()
    assert s['examples'] == 4
    assert s['tokens'] == 3 + 4 + 5 + 5
    assert s['synthetic_examples'] == 2
    assert s['synthetic_example_share'] == 0.5
    assert s['synthetic_token_share'] == pytest.approx(10 / 17)
    assert s['by_component'] == {'curated_qa': 1, 'moove': 1, 'source': 2}


def test_shares_sum_to_one(mixture):
    table = Composition(mixture).by('source')
    assert table['example_share'].sum() == pytest.approx(1.0)
    assert table['token_share'].sum() == pytest.approx(1.0)


def test_empty_corpus():
    s = Composition([]).summary()
    assert s['examples'] == 0 and s['synthetic_example_share'] == 0.0


def test_write(mixture, tmp_path):
    paths = Composition(mixture).write(str(tmp_path))
    assert len(paths) == 4
    df = pd.read_csv(tmp_path / 'composition_question_type.csv')
    assert dict(zip(df['question_type'], df['examples'])) == {'open': 4}
    assert json.loads((tmp_path / 'composition.json').read_text())['examples'] == 4
