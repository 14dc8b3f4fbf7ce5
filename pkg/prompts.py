# Prompt templates for the three synthetic generation pipelines and parsers for their outputs.
#
# Template texts are kept byte-for-byte, including their hard line wraps. Slots are filled by `fill`,
# so braces inside guideline or exemplar text are never interpreted.

import re
from typing import Literal

from pydantic import BaseModel, ConfigDict

from gateway import ChatMessage, ChatRequest

SYSTEM_TEXT = """You are ChatGPT, a large language model trained by OpenAI.
Knowledge cutoff: 2024-06
Current date: {date}
Reasoning: {reasoning}

# Valid channels: analysis, commentary, final.
# Channel must be included for every message."""

GUIDELINES_DEVELOPER = """You are an expert medical educator and physician tasked with creating
high-quality, clinically accurate content for a medical exam. Your task
is to generate clinical vignette-style questions along with its correct
answer, based STRICTLY on the provided medical guideline. Focus on
realistic patient presentations (age, symptoms, physical exam findings),
identifying 'red flags', and diagnostic reasoning highlighted in the
text. The timeline and objective progress should always be clear and
detailed in the vignettes. Include clear context about site and where
people travelled etc. Do not include outside information or unproven
treatments."""

GUIDELINES_USER = """Here is the medical guideline:

=== GUIDELINE START ===
{guideline_text}
=== GUIDELINE END ===

Based ONLY on the guideline above, generate exactly 10 unique
MULTIPLE-CHOICE clinical vignette questions and their answers. Each
question should present a realistic patient scenario that tests the
diagnostic or management principles in the text. For each vignette,
provide 4-5 plausible multiple-choice options (A-E). Ensure distractors
represent common diagnostic pitfalls or 'next best steps' that are
incorrect based strictly on the provided guideline.

You MUST format EACH of the 10 items exactly as follows, using these
specific XML tags:

<qa>
<question>
Patient scenario and the specific question here.
A) [Option 1]
B) [Option 2]
C) [Option 3]
D) [Option 4]
</question>
<answer>The rationale explaining your chain of thought without
mentioning the guideline and then Answer: correct answer</answer>
</qa>"""

CURATED_DEVELOPER = """You are an expert medical educator and physician tasked with creating
high-quality, clinically accurate content for a medical exam. Your task
is to generate a new, unique, clinical vignette-style question along
with its evidence-based correct answer. The timeline and progress
should always be clear and detailed in the vignettes. Include clear
context about site and where people travelled etc. The content must
reflect realistic clinical scenarios, standard-of-care protocols, and
well established medical consensus. Avoid scientifically controversial
treatments. You will be provided with 5 examples. Use them strictly to
understand the desired format, diagnostic difficulty, and clinical
depth. DO NOT copy them. Generate a completely new, scientifically
rigorous question that would be unconditionally approved by a medical
review board."""

CURATED_HEADER = 'Here are example questions and answers to model your format on:'
CURATED_EXAMPLE = """--- Example {i} ---
<question>{question}
<answer>{answer}"""
CURATED_INSTRUCTION = """Now generate a brand new, unique, and clinically accurate
{kind} medical question and its detailed answer.
Ensure the answer matches the formatting tags above."""

MOOVE_DEVELOPER = """You are an expert medical educator and physician tasked with creating
high-quality, clinically accurate content. Your task is to generate a
new, unique, and realistic medical scenario or question prompt. The
content must reflect realistic clinical presentations, inquiries from
colleagues, or patient encounters. The timeline and objective progress
should always be clear and detailed. Include clear context about site
and where people travelled etc. You will be provided with 5 examples.
Use them strictly to understand the desired format, diagnostic
difficulty, and clinical depth. DO NOT copy them. Generate a completely
new question that would be unconditionally approved by a medical review
board."""

MOOVE_HEADER = 'Here are example prompts to model your format and clinical depth on:'
MOOVE_EXAMPLE = """--- Example {i} ---
<question>
{prompt}
</question>"""
MOOVE_INSTRUCTION = """Now, acting as an expert medical educator, generate a brand new, unique,
and clinically accurate medical scenario or question. Wrap your
generated scenario strictly within <question> and </question> tags."""

QA_BLOCK_RE = re.compile(r'<qa>(.*?)</qa>', re.DOTALL)
QUESTION_RE = re.compile(r'<question>(.*?)</question>', re.DOTALL)
ANSWER_RE = re.compile(r'<answer>(.*?)</answer>', re.DOTALL)


class ParseError(Exception):
    def __init__(self, reason, skipped=None):
        self.reason = reason
        self.skipped = skipped or []
        super().__init__(reason)


SLOT_RE = re.compile(r'\{(\w+)\}')


def fill(template, **slots):
    # single pass: slot values are inserted literally and never re-scanned
    return SLOT_RE.sub(lambda m: slots.get(m.group(1), m.group(0)), template)


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    component: Literal['curated_qa', 'guidelines_qa', 'moove']
    system_text: str = SYSTEM_TEXT
    developer_text: str
    date: str
    reasoning: str = 'low'

    def system_message(self):
        return fill(self.system_text, date=self.date, reasoning=self.reasoning)


DEVELOPER_TEXTS = {
    'curated_qa': CURATED_DEVELOPER,
    'guidelines_qa': GUIDELINES_DEVELOPER,
    'moove': MOOVE_DEVELOPER,
}


def make_template(component, date, reasoning='low'):
    return PromptTemplate(component=component, developer_text=DEVELOPER_TEXTS[component], date=date,
                          reasoning=reasoning)


def curated_user_message(exemplars, labeled):
    # exemplars: (question, answer) pairs in draw order
    blocks = [fill(CURATED_EXAMPLE, i=str(i), question=q, answer=a) for i, (q, a) in enumerate(exemplars, 1)]
    kind = 'MULTIPLE-CHOICE' if labeled else 'OPEN-ENDED'
    return '\n\n'.join([CURATED_HEADER] + blocks + [fill(CURATED_INSTRUCTION, kind=kind)])


def moove_user_message(prompts):
    blocks = [fill(MOOVE_EXAMPLE, i=str(i), prompt=p) for i, p in enumerate(prompts, 1)]
    return '\n\n'.join([MOOVE_HEADER] + blocks + [MOOVE_INSTRUCTION])


def guidelines_user_message(guideline_text):
    return fill(GUIDELINES_USER, guideline_text=guideline_text)


def build_prompt(template, exemplars=None, guideline=None, labeled=True, model='teacher', temperature=0.7,
                 max_tokens=4096, seed_tag=None):
    """Assembles system, developer and user messages for one generation call.

    curated_qa takes exemplars as (question, answer) pairs, moove takes exemplar prompt strings,
    guidelines_qa takes the guideline body text.
    """
    if template.component == 'curated_qa':
        user = curated_user_message(exemplars, labeled)
    elif template.component == 'moove':
        user = moove_user_message(exemplars)
    else:
        user = guidelines_user_message(guideline)
    messages = [ChatMessage(role='system', content=template.system_message()),
                ChatMessage(role='developer', content=template.developer_text),
                ChatMessage(role='user', content=user)]
    return ChatRequest(model=model, messages=messages, temperature=temperature, max_tokens=max_tokens,
                       seed_tag=seed_tag)


def parse_guideline_batch(raw):
    """Returns (pairs, skip_reasons) for the well-formed <qa> blocks of a guideline batch."""
    pairs, skipped = [], []
    blocks = QA_BLOCK_RE.findall(raw or '')
    for i, block in enumerate(blocks, 1):
        q = QUESTION_RE.search(block)
        a = ANSWER_RE.search(block)
        if q is None:
            skipped.append(f'block {i}: missing <question>...</question>')
        elif a is None:
            skipped.append(f'block {i}: missing <answer>...</answer>')
        elif not q.group(1).strip() or not a.group(1).strip():
            skipped.append(f'block {i}: empty question or answer')
        else:
            pairs.append((q.group(1).strip(), a.group(1).strip()))
    if not pairs:
        raise ParseError('no well-formed <qa> blocks', skipped)
    return pairs, skipped


def parse_curated_output(raw):
    # <question>...<answer>...; closing tags are optional
    text = raw or ''
    q_start = text.rfind('<question>')
    if q_start < 0:
        raise ParseError('missing <question>')
    a_start = text.find('<answer>', q_start)
    if a_start < 0:
        raise ParseError('missing <answer>')
    question = text[q_start + len('<question>'):a_start].replace('</question>', '').strip()
    answer = text[a_start + len('<answer>'):].split('</answer>')[0].strip()
    if not question or not answer:
        raise ParseError('empty question or answer')
    return question, answer


def parse_moove_output(raw):
    found = QUESTION_RE.findall(raw or '')
    if not found or not found[-1].strip():
        raise ParseError('missing <question>...</question>')
    return found[-1].strip()
