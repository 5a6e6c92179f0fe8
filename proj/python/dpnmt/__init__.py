"""Dropped-pronoun aware neural machine translation toolkit."""

from ._dpnmt import (
    BleuResult,
    DataError,
    NumericError,
    ShapeError,
    SignTestResult,
    bleu,
    em_align,
    label_parallel,
    run_cli,
    sentence_bleu,
    sign_test,
    synth_corpus,
)

__all__ = [
    "BleuResult",
    "DataError",
    "NumericError",
    "ShapeError",
    "SignTestResult",
    "bleu",
    "em_align",
    "label_parallel",
    "run_cli",
    "sentence_bleu",
    "sign_test",
    "synth_corpus",
]
