"""Diffing responses and filtering false positives out of the divergences."""

from .canonical import canonical_equivalent, canonical_form
from .classify import CONSERVATIVE_REASON, Finding, Verdict, VerdictKind, classify, classify_round
from .diff import ABSENT, Divergence, diff_records
from .metrics import compute_fdr, deduplicate, detect_spec_defects, fdr_metrics, normalize_path
from .oracle import (CachingOracle, ConsensusOracle, ExternalOracle, LookupOracle, OracleAnswer, OracleConfig,
                     StubFalseOracle, UnavailableOracle, build_messages, make_oracle, parse_answer)

__all__ = [
    "ABSENT", "CONSERVATIVE_REASON", "CachingOracle", "ConsensusOracle", "Divergence", "ExternalOracle", "Finding",
    "LookupOracle", "OracleAnswer", "OracleConfig", "StubFalseOracle", "UnavailableOracle", "Verdict",
    "VerdictKind", "build_messages", "canonical_equivalent", "canonical_form", "classify", "classify_round",
    "compute_fdr", "deduplicate", "detect_spec_defects", "diff_records", "fdr_metrics", "make_oracle",
    "normalize_path", "parse_answer",
]
