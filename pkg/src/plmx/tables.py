"""Machine-readable convergence-rate and mixing-bound tables.

Each row pairs an exponent range and noise class with the established decay
rate (and, for the mixing table, the mixing-time upper bound as a function of
the target accuracy eps). The `source` tag is a stable label used by reports
and the rate verifier to tie experiments to table rows.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RateRow:
    p_range: str
    noise: str
    rate: str
    upper_bound: str  # empty for the convergence table
    source: str


CONVERGENCE_TABLE: tuple[RateRow, ...] = (
    RateRow("(2,inf)", "0", "t^(-1/(p-2))", "", "deterministic-degenerate"),
    RateRow("{2}", "0", "exp(-lambda t)", "", "heat"),
    RateRow("[max(1,2d/(d+2)),2)", "0", "exp(-lambda t)", "", "deterministic-singular-exponential"),
    RateRow(
        "[max(1,2-4/d),max(1,2d/(d+2))) ∩ (1,2)",
        "0",
        "t^(-p/(2-p))",
        "",
        "second-order-singular",
    ),
    RateRow("(2,inf)", "degenerate", "t^(-1/(p-2))", "", "pathwise-contraction"),
    RateRow("{2}", "degenerate", "exp(-lambda t)", "", "heat"),
    RateRow(
        "(max(1,2d/(d+2)),2) ∩ [sqrt(2),2)",
        "degenerate",
        "t^(-1/2)",
        "",
        "singular-moment",
    ),
    RateRow(
        "(max(1,2d/(d+2)),sqrt(2))",
        "degenerate",
        "t^(-p^2/4)",
        "",
        "singular-moment-holder",
    ),
    RateRow(
        "[max(1,2-4/d),2) ∩ (1,2)",
        "degenerate regular",
        "t^(-p/(2-p))",
        "",
        "second-order-singular",
    ),
    RateRow("(2,inf)", "non-degenerate", "exp(-lambda t)", "", "noise-stabilized"),
)


MIXING_TABLE: tuple[RateRow, ...] = (
    RateRow("(2,inf)", "0", "t^(-1/(p-2))", "C eps^(2-p)", "deterministic-degenerate"),
    RateRow("{2}", "0", "exp(-lambda t)", "C + (1/lambda) log(1/eps)", "heat"),
    RateRow(
        "[max(1,2d/(d+2)),2)",
        "0",
        "exp(-lambda t)",
        "C + (1/lambda) log(1/eps)",
        "deterministic-singular-exponential",
    ),
    RateRow(
        "[max(1,2-4/d),max(1,2d/(d+2))) ∩ (1,2)",
        "0",
        "t^(-p/(2-p))",
        "C eps^((2-p)/p)",
        "second-order-singular",
    ),
    RateRow(
        "(2,inf)", "degenerate", "t^(-1/(p-2))", "C eps^(2-p)", "pathwise-contraction"
    ),
    RateRow("{2}", "degenerate", "exp(-lambda t)", "C + (1/lambda) log(1/eps)", "heat"),
    RateRow(
        "(max(1,2d/(d+2)),2) ∩ [sqrt(2),2)",
        "degenerate",
        "t^(-1/2)",
        "C eps^(-2)",
        "singular-moment",
    ),
    RateRow(
        "(max(1,2d/(d+2)),sqrt(2))",
        "degenerate",
        "t^(-p^2/4)",
        "C eps^(-4/p^2)",
        "singular-moment-holder",
    ),
    RateRow(
        "[max(1,2-4/d),2) ∩ (1,2)",
        "degenerate regular",
        "t^(-p/(2-p))",
        "C eps^((2-p)/p)",
        "second-order-singular",
    ),
    RateRow(
        "(2,inf)",
        "non-degenerate",
        "exp(-lambda t)",
        "C + (1/lambda) log(1/eps)",
        "noise-stabilized",
    ),
)


def rate_table() -> dict[str, tuple[RateRow, ...]]:
    """Both tables as structured rows keyed by table name."""
    return {"convergence": CONVERGENCE_TABLE, "mixing": MIXING_TABLE}
