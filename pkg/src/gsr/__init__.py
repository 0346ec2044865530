"""Grammar-guided symbolic regression with a risk-seeking recurrent policy.

The search space is a probabilistic BNF grammar; a recurrent policy
samples derivations action by action (illegal rules masked out), the
resulting expressions are scored by squashed mean-squared error, and the
policy climbs a risk-seeking, entropy-regularized objective computed on
the top quantile of each batch.
"""

from .benchmarks import (
    BENCHMARKS,
    benchmark_names,
    generate_benchmark,
    load_airfoil,
    load_csv,
)
from .derivation import (
    DerivationState,
    StateToggles,
    audit_trajectory,
    init_derivation,
)
from .evaluator import (
    Dataset,
    Expression,
    complexity,
    evaluate,
    exact_recovery,
    fit_constants,
    mse,
    parse_expression,
    r_squared,
    reward,
    to_text,
)
from .grammar import Grammar, GrammarError, parse_grammar, serialize_grammar, validate_grammar
from .policy import init_policy, masked_softmax, step_entropy
from .reporting import RunRecord, aggregate, emit_report, mann_whitney_u, significance_summary
from .trainer import (
    ABLATIONS,
    Episode,
    RunResult,
    TrainConfig,
    quantile_filter,
    run_ablation,
    sample_episode,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "ABLATIONS",
    "Dataset",
    "DerivationState",
    "Episode",
    "Expression",
    "Grammar",
    "GrammarError",
    "RunRecord",
    "RunResult",
    "StateToggles",
    "TrainConfig",
    "aggregate",
    "audit_trajectory",
    "benchmark_names",
    "complexity",
    "emit_report",
    "evaluate",
    "exact_recovery",
    "fit_constants",
    "generate_benchmark",
    "init_derivation",
    "init_policy",
    "load_airfoil",
    "load_csv",
    "mann_whitney_u",
    "masked_softmax",
    "mse",
    "parse_expression",
    "parse_grammar",
    "quantile_filter",
    "r_squared",
    "reward",
    "run_ablation",
    "sample_episode",
    "serialize_grammar",
    "significance_summary",
    "step_entropy",
    "to_text",
    "train",
    "validate_grammar",
]
