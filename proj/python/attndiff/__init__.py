"""Differential-attention fingerprints for model lineage checks."""

import json

from ._attndiff import (
    AttndiffError,
    DegenerateError,
    FormatError,
    InvalidArgumentError,
    InvalidValueError,
    IoError,
    NumericalError,
    Pack,
    ValidationError,
    adaptive_pool,
    centered_gram,
    cka,
    diff_attention,
    epsilon_and_bound,
    fingerprint,
    gini_coefficient,
    leading_singular_values,
    load_fingerprint,
    mask_causal,
    routing_stats,
    run_cli,
    singular_values,
    write_attention_pack,
)
from ._attndiff import compare_json as _compare_json


def compare(victim, suspect, upper=0.90, lower=0.50):
    """CKA report for two .fpk files, as a dict."""
    return json.loads(_compare_json(victim, suspect, upper, lower))


def load_pack(path):
    """Load a pack and return (pack, manifest dict)."""
    pack = Pack.load(str(path))
    return pack, json.loads(pack.manifest_json)


__all__ = [name for name in dir() if not name.startswith("_")]
