"""Shared rule-based tokenizer.

Every component that looks at text (lexical retrieval, the containment
scorer, the trainable encoders, the answer metrics) goes through this one
function so token boundaries never disagree between stages.
"""

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every character that is not a letter or digit.

    Empty input yields an empty list. The output is idempotent under
    re-tokenization of " ".join(tokens).
    """
    return _TOKEN_RE.findall(text.lower())
