"""The labeling-rule DSL: parse, validate, print, evaluate, extract."""

from .ast import (
    And,
    Contains,
    ContainsAny,
    DslError,
    DslEvaluationError,
    DslParseError,
    DslValidationError,
    Expr,
    LengthAtLeast,
    Matches,
    Not,
    Or,
    Rule,
    RuleProgram,
    ScoreCmp,
    UppercaseRatioAtLeast,
    iter_leaves,
    structurally_equal,
)
from .evaluate import DEFAULT_BUDGET_S, evaluate
from .extract import Extraction, ExtractionError, extract_program, extract_programs
from .parser import (
    RULE_COUNT_SOFT_CAP,
    format_expr,
    format_program,
    parse_program,
    validate_program,
)

__all__ = [
    "And",
    "Contains",
    "ContainsAny",
    "DslError",
    "DslEvaluationError",
    "DslParseError",
    "DslValidationError",
    "Expr",
    "Extraction",
    "ExtractionError",
    "LengthAtLeast",
    "Matches",
    "Not",
    "Or",
    "Rule",
    "RuleProgram",
    "ScoreCmp",
    "UppercaseRatioAtLeast",
    "DEFAULT_BUDGET_S",
    "RULE_COUNT_SOFT_CAP",
    "evaluate",
    "extract_program",
    "extract_programs",
    "format_expr",
    "format_program",
    "iter_leaves",
    "parse_program",
    "structurally_equal",
    "validate_program",
]
