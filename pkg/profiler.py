# Zero-shot metadata annotation through the gateway and source-vs-synthetic distribution drift.
#
# Categorical axes are compared with the base-2 Jensen-Shannon divergence (bounded by 1), the ordinal
# difficulty axis with the Wasserstein-1 distance. `unknown` labels are reported but left out of both.

import os
import re
from collections import Counter

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator
from rapidfuzz.distance import Levenshtein
from scipy.spatial.distance import jensenshannon
from scipy.stats import wasserstein_distance

from corpus import AnnotationProfile
from gateway import ChatMessage, ChatRequest
from prompts import fill
from utils import rows_to_csv, write_json

UNKNOWN = 'unknown'
ORDINAL_AXES = ('difficulty',)

DEFAULT_VOCABULARIES = {
    'specialty': ['Allergy and Immunology', 'Anesthesiology', 'Cardiology', 'Dermatology', 'Emergency Medicine',
                  'Endocrinology', 'Gastroenterology', 'General Surgery', 'Genetics', 'Geriatrics', 'Hematology',
                  'Infectious Disease', 'Internal Medicine', 'Nephrology', 'Neurology', 'Obstetrics and Gynecology',
                  'Oncology', 'Ophthalmology', 'Orthopedics', 'Otolaryngology', 'Pathology', 'Pediatrics',
                  'Pharmacology', 'Psychiatry', 'Public Health', 'Pulmonology', 'Radiology', 'Rheumatology',
                  'Urology'],
    'urgency': ['Non-urgent', 'Semi-urgent', 'Urgent', 'Emergency'],
    'difficulty': ['1', '2', '3', '4', '5'],
    'geographic_context': ['Global', 'High-income country', 'Low- or middle-income country', 'Tropical region',
                           'Not specified'],
    'resource_setting': ['High-resource', 'Limited-resource', 'Not specified'],
    'level_of_care': ['Self-care', 'Primary care', 'Secondary care', 'Tertiary care', 'Emergency care'],
    'severity': ['Mild', 'Moderate', 'Severe', 'Critical'],
    'question_type_label': ['Diagnosis', 'Treatment', 'Management', 'Mechanism', 'Prognosis', 'Prevention',
                            'Epidemiology', 'Other'],
    'demographics': ['Neonate', 'Child', 'Adolescent', 'Adult', 'Older adult', 'Pregnant', 'Not specified'],
}

AXIS_DESCRIPTIONS = {
    'specialty': 'the medical specialty it belongs to',
    'urgency': 'how urgently the described situation needs care',
    'difficulty': 'its difficulty for a practising physician on a scale from 1 (easiest) to 5 (hardest)',
    'geographic_context': 'the geographic context it assumes',
    'resource_setting': 'the resource setting it assumes',
    'level_of_care': 'the level of care at which it arises',
    'severity': 'the clinical severity of the described condition',
    'question_type_label': 'the type of question asked',
    'demographics': 'the patient population it concerns',
}

# default annotator prompt; editable per axis in the run config
DEFAULT_TEMPLATE = """Classify the following medical question by {description}.
Reply with exactly one of: {choices}.

Question:
{text}"""

PUNCT_RE = re.compile(r'[^\w\s]+')
DIGIT_RE = re.compile(r'\b([1-5])\b')


class ProfileError(Exception):
    pass


def _norm(text):
    return ' '.join(PUNCT_RE.sub(' ', text.casefold()).split())


def normalize_label(raw, vocabulary, axis=None):
    """Maps an annotator reply onto the closed vocabulary, else `unknown`.

    Order: exact match after case-folding and punctuation stripping, a single-edit fuzzy match,
    a unique vocabulary entry appearing as whole words in the reply.
    """
    text = _norm(raw or '')
    if not text:
        return UNKNOWN
    if axis in ORDINAL_AXES:
        m = DIGIT_RE.search(text)
        return m.group(1) if m and m.group(1) in vocabulary else UNKNOWN
    normed = {_norm(v): v for v in vocabulary}
    if text in normed:
        return normed[text]
    close = [v for k, v in normed.items() if Levenshtein.distance(text, k, score_cutoff=1) <= 1]
    if len(close) == 1:
        return close[0]
    padded = f' {text} '
    contained = [v for k, v in normed.items() if f' {k} ' in padded]
    if len(contained) > 1:
        # prefer the longest entry when one contains the others ("semi urgent" over "urgent")
        contained.sort(key=lambda v: len(_norm(v)), reverse=True)
        if all(f' {_norm(c)} ' in f' {_norm(contained[0])} ' for c in contained[1:]):
            contained = contained[:1]
    if len(contained) == 1:
        return contained[0]
    return UNKNOWN


class AxisSpec(BaseModel):
    axis: str
    vocabulary: list[str]
    template: str = DEFAULT_TEMPLATE


def axis_specs(axes, overrides=None):
    overrides = overrides or {}
    specs = []
    for axis in axes:
        if axis not in DEFAULT_VOCABULARIES:
            raise ProfileError(f'unknown axis {axis!r}, choose from {sorted(DEFAULT_VOCABULARIES)}')
        o = overrides.get(axis)
        specs.append(AxisSpec(axis=axis,
                              vocabulary=(o.vocabulary if o and o.vocabulary else DEFAULT_VOCABULARIES[axis]),
                              template=(o.template if o and o.template else DEFAULT_TEMPLATE)))
    return specs


def annotation_request(record, spec, model):
    text = fill(spec.template, description=AXIS_DESCRIPTIONS[spec.axis], choices=', '.join(spec.vocabulary),
                text=record.first_user or '')
    return ChatRequest(model=model, messages=[ChatMessage(role='user', content=text)], temperature=0.0,
                       max_tokens=32, seed_tag=f'{record.id}/{spec.axis}')


def _profile_value(axis, label):
    if label == UNKNOWN:
        return None if axis == 'difficulty' else UNKNOWN
    return int(label) if axis == 'difficulty' else label


def annotate(records, gateway, model, specs, max_in_flight=8, chunk_size=256):
    """Returns (stream of annotated records, unknown counts per axis).

    One gateway call per (record, axis) on the first user turn; gateway errors and unmappable
    replies become `unknown`.
    """
    unknown = Counter({s.axis: 0 for s in specs})

    def flush(chunk):
        reqs = [annotation_request(r, s, model) for r in chunk for s in specs]
        labels = [None] * len(reqs)
        for i, resp in gateway.complete_many(reqs, max_in_flight):
            spec = specs[i % len(specs)]
            labels[i] = normalize_label(resp.text, spec.vocabulary, spec.axis) if resp.ok else UNKNOWN
            if labels[i] == UNKNOWN:
                unknown[spec.axis] += 1
                logger.bind(stage='profile', record_id=chunk[i // len(specs)].id, outcome='unknown').debug(
                    f'{spec.axis}: {resp.error or resp.text[:80]!r}')
        for j, record in enumerate(chunk):
            current = record.annotations.model_dump() if record.annotations else {}
            for k, spec in enumerate(specs):
                current[spec.axis] = _profile_value(spec.axis, labels[j * len(specs) + k])
            yield record.model_copy(update={'annotations': AnnotationProfile(**current)})

    def stream():
        chunk = []
        for record in records:
            chunk.append(record)
            if len(chunk) == chunk_size:
                yield from flush(chunk)
                chunk = []
        if chunk:
            yield from flush(chunk)

    return stream(), unknown


class AxisDistribution(BaseModel):
    axis: str
    support: list[str]
    probabilities: list[float]
    n: int
    unknown: int = 0

    @model_validator(mode='after')
    def _check(self):
        if len(self.support) != len(self.probabilities):
            raise ValueError('support and probabilities differ in length')
        if any(p < 0 for p in self.probabilities):
            raise ValueError('negative probability')
        if self.n > 0 and abs(sum(self.probabilities) - 1) > 1e-9:
            raise ValueError('probabilities do not sum to 1')
        return self

    @classmethod
    def from_labels(cls, axis, labels, support=None):
        labels = [str(x) for x in labels if x is not None]
        counts = Counter(x for x in labels if x != UNKNOWN)
        support = list(support) if support else sorted(counts)
        missing = sorted(set(counts) - set(support))
        support += missing
        n = sum(counts.values())
        probs = [counts[s] / n if n else 0.0 for s in support]
        return cls(axis=axis, support=support, probabilities=probs, n=n, unknown=len(labels) - n)

    @classmethod
    def from_histogram(cls, axis, histogram):
        # histogram: category -> count (or weight)
        total = float(sum(histogram.values()))
        support = [str(k) for k in histogram]
        return cls(axis=axis, support=support, probabilities=[v / total for v in histogram.values()],
                   n=int(round(total)))

    def mean(self):
        return float(sum(float(s) * p for s, p in zip(self.support, self.probabilities)))


def aligned(p, q):
    if p.axis != q.axis:
        raise ProfileError(f'cannot compare axis {p.axis!r} with axis {q.axis!r}')
    support = list(p.support) + [s for s in q.support if s not in p.support]
    pm = dict(zip(p.support, p.probabilities))
    qm = dict(zip(q.support, q.probabilities))
    return support, np.array([pm.get(s, 0.0) for s in support]), np.array([qm.get(s, 0.0) for s in support])


def jsd(p, q):
    """Jensen-Shannon divergence, base 2, in [0, 1]."""
    if p.n == 0 or q.n == 0:
        raise ProfileError(f'{p.axis}: empty distribution')
    _, pv, qv = aligned(p, q)
    value = float(jensenshannon(pv, qv, base=2) ** 2)
    return min(max(value, 0.0), 1.0)


def wasserstein1(p, q):
    """Earth-mover distance on the ordinal support (unit spacing)."""
    if p.n == 0 or q.n == 0:
        raise ProfileError(f'{p.axis}: empty distribution')
    support, pv, qv = aligned(p, q)
    values = [float(s) for s in support]
    return float(wasserstein_distance(values, values, u_weights=pv, v_weights=qv))


def axis_labels(records, axis):
    return [r.annotations.get(axis) if r.annotations else UNKNOWN for r in records]


def drift_report(source, synthetic, axes, vocabularies=None):
    """Per-axis JSD (categorical) or W1 and means (difficulty), with sample sizes."""
    source, synthetic = list(source), list(synthetic)
    if not source or not synthetic:
        raise ProfileError('drift report needs non-empty source and synthetic corpora')
    vocabularies = vocabularies or DEFAULT_VOCABULARIES
    report = {'n_source': len(source), 'n_synthetic': len(synthetic), 'axes': {}}
    distributions = {}
    for axis in axes:
        support = vocabularies.get(axis)
        p = AxisDistribution.from_labels(axis, axis_labels(source, axis), support)
        q = AxisDistribution.from_labels(axis, axis_labels(synthetic, axis), support)
        distributions[axis] = (p, q)
        entry = {'n_source': p.n, 'n_synthetic': q.n, 'unknown_source': p.unknown, 'unknown_synthetic': q.unknown,
                 'comparable': p.n > 0 and q.n > 0}
        if axis in ORDINAL_AXES:
            entry['w1'] = wasserstein1(p, q) if entry['comparable'] else None
            entry['source_mean'] = p.mean() if p.n else None
            entry['synthetic_mean'] = q.mean() if q.n else None
        else:
            entry['jsd'] = jsd(p, q) if entry['comparable'] else None
        if not entry['comparable']:
            logger.bind(stage='profile').warning(f'{axis}: no labels on one side, not comparable')
        report['axes'][axis] = entry
    return report, distributions


def write_drift(report, distributions, out_dir):
    """drift.json plus one histogram CSV per axis (category, source, synthetic). Returns written paths."""
    paths = [write_json(report, os.path.join(out_dir, 'drift.json'))]
    for axis, (p, q) in distributions.items():
        support, pv, qv = aligned(p, q)
        rows = [{'category': s, 'source': float(a), 'synthetic': float(b)} for s, a, b in zip(support, pv, qv)]
        paths.append(rows_to_csv(rows, os.path.join(out_dir, f'hist_{axis}.csv'),
                                 columns=['category', 'source', 'synthetic']))
    return paths
