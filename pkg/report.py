# Corpus composition report: example and token counts per source, component and question type,
# plus the synthetic share of the mixture. Written as csv tables and one json summary.

import os

import pandas as pd

from choose import choose_tokenizer
from utils import atomic_write, write_json


class Composition:
    def __init__(self, records, tokenizer='regex'):
        tokenize = choose_tokenizer(tokenizer)
        rows = []
        for r in records:
            synthetic = r.provenance.kind == 'synthetic'
            rows.append({'source': r.source,
                         'component': r.provenance.component if synthetic else 'source',
                         'question_type': r.question_type,
                         'synthetic': synthetic,
                         'tokens': sum(len(tokenize(m.content)) for m in r.messages)})
        self.df = pd.DataFrame(rows, columns=['source', 'component', 'question_type', 'synthetic', 'tokens']).astype(
            {'synthetic': bool, 'tokens': int})
        self.dir = '.'

    def by(self, column):
        g = self.df.groupby(column, sort=True)['tokens']
        out = pd.DataFrame({'examples': g.size(), 'tokens': g.sum()})
        out['example_share'] = out['examples'] / max(len(self.df), 1)
        out['token_share'] = out['tokens'] / max(int(self.df['tokens'].sum()), 1)
        return out.reset_index()

    def summary(self):
        n = len(self.df)
        tokens = int(self.df['tokens'].sum())
        synth = self.df[self.df['synthetic']]
        return {
            'examples': n,
            'tokens': tokens,
            'synthetic_examples': len(synth),
            'synthetic_tokens': int(synth['tokens'].sum()),
            'synthetic_example_share': len(synth) / n if n else 0.0,
            'synthetic_token_share': int(synth['tokens'].sum()) / tokens if tokens else 0.0,
            'by_component': {row['component']: int(row['examples'])
                             for row in self.by('component').to_dict('records')},
        }

    def csv_path(self, name):
        return os.path.join(self.dir, f'composition_{name}.csv')

    def write(self, out_dir):
        self.dir = out_dir
        paths = []
        for column in ('source', 'component', 'question_type'):
            path = self.csv_path(column)
            with atomic_write(path) as f:
                self.by(column).to_csv(f, index=False, lineterminator='\n')
            paths.append(path)
        paths.append(write_json(self.summary(), os.path.join(out_dir, 'composition.json')))
        return paths
