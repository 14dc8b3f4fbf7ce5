# Different tokenizers. Each has a `tokenizer_id` and maps text to a list of string tokens.
import re

import spacy


class RegexTokenizer(object):
    # lowercase, split on anything that is not a Unicode letter or digit; digits are kept as tokens
    tokenizer_id = 'regex'

    def __init__(self):
        self.word_re = re.compile(r'[^\W_]+', re.UNICODE)

    def __call__(self, text):
        return self.word_re.findall(text.casefold())


class WhitespaceTokenizer(object):
    tokenizer_id = 'whitespace'

    def __init__(self):
        pass

    def __call__(self, text):
        return text.lower().split()


class LowerSpacy(object):
    # rule-based spacy tokenizer without a trained pipeline; punctuation and whitespace tokens are dropped
    tokenizer_id = 'spacy'

    def __init__(self, lang='en'):
        self.tokenizer = spacy.blank(lang).tokenizer

    def __call__(self, text):
        return [tok.text.lower() for tok in self.tokenizer(text) if not (tok.is_punct or tok.is_space)]
