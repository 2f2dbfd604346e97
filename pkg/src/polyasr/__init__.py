"""Desk-scale multilingual speech-transducer toolkit.

Builds character/subword/hybrid vocabularies over synthetic multilingual
corpora, trains toy transducer models with shared or per-language heads, and
scores the results with insertion/deletion/substitution decomposition.
"""

__version__ = "0.1.0"
