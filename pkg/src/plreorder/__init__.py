"""Learn distributions over permutations that place mass on high-scoring orderings.

The package centers on (mixtures of) Plackett-Luce distributions: sample
candidate orderings with Gumbel perturb-and-sort, score them with a
black-box metric, keep the elites, and update the distribution by rank-EMA,
weighted maximum likelihood, or mixture EM.  Exact enumeration oracles over
small item counts back every estimate, and a chat-completions client turns
held-out accuracy of in-context examples into a score function.
"""

from .distributions import (
    LOGIT_CLIP,
    MIN_COMPONENT_WEIGHT,
    MixturePL,
    Permutation,
    PLParams,
    RandomSource,
    center,
    greedy_permutation,
    iia_choice_ratio,
    log_prob,
    mixture_log_prob,
    mixture_sample,
    mixture_sample_batch,
    sample,
    sample_batch,
)
from .fitting import (
    EliteSet,
    EMAConfig,
    GradientFitConfig,
    em_fit,
    ema_blend,
    ema_rank_update,
    mixture_log_likelihood,
    mle_fit,
    pl_grad,
    responsibilities,
    weighted_log_likelihood,
)
from .optimizer import (
    OptimizerConfig,
    ScoredTrace,
    baseline_static,
    baseline_topk,
    final_select,
    run,
    run_baseline,
    select_elites,
)
from .scoring import (
    BimodalScorer,
    DataSplits,
    Demonstration,
    Example,
    MallowsScorer,
    PromptTemplate,
    ProtocolError,
    ScoreFunction,
    ScoringError,
    assemble_prompt,
    bimodal_score,
    exact_match_metric,
    kendall_tau_distance,
    mallows_score,
    numeric_answer_metric,
)
from .llm_client import ChatCompletionsClient, EndpointConfig, llm_accuracy_scorer
from .exact import (
    ConstructionError,
    ExactDistribution,
    best_single_pl_fit,
    construct_dense_mixture,
    empirical_distribution,
    enumerate_mixture,
    enumerate_pl,
    exhaustive_argmax,
    total_variation,
)

__version__ = "0.1.0"

__all__ = [
    "LOGIT_CLIP",
    "MIN_COMPONENT_WEIGHT",
    "MixturePL",
    "Permutation",
    "PLParams",
    "RandomSource",
    "center",
    "greedy_permutation",
    "iia_choice_ratio",
    "log_prob",
    "mixture_log_prob",
    "mixture_sample",
    "mixture_sample_batch",
    "sample",
    "sample_batch",
    "EliteSet",
    "EMAConfig",
    "GradientFitConfig",
    "em_fit",
    "ema_blend",
    "ema_rank_update",
    "mixture_log_likelihood",
    "mle_fit",
    "pl_grad",
    "responsibilities",
    "weighted_log_likelihood",
    "OptimizerConfig",
    "ScoredTrace",
    "baseline_static",
    "baseline_topk",
    "final_select",
    "run",
    "run_baseline",
    "select_elites",
    "BimodalScorer",
    "DataSplits",
    "Demonstration",
    "Example",
    "MallowsScorer",
    "PromptTemplate",
    "ProtocolError",
    "ScoreFunction",
    "ScoringError",
    "assemble_prompt",
    "bimodal_score",
    "exact_match_metric",
    "kendall_tau_distance",
    "mallows_score",
    "numeric_answer_metric",
    "ChatCompletionsClient",
    "EndpointConfig",
    "llm_accuracy_scorer",
    "ConstructionError",
    "ExactDistribution",
    "best_single_pl_fit",
    "construct_dense_mixture",
    "empirical_distribution",
    "enumerate_mixture",
    "enumerate_pl",
    "exhaustive_argmax",
    "total_variation",
    "__version__",
]
