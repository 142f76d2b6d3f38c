"""Derivative-free search for image data-augmentation policies.

The search optimizer perturbs a 30-dimensional parameter vector with
antithetic noise directions from a shared table, squashes candidates through
a sigmoid, decodes each into a five-sub-policy augmentation program, and
steps the vector using reward differences scaled by the reward deviation.
Rewards come from built-in synthetic objectives or from external trainer
processes speaking a newline-delimited JSON protocol.
"""

__version__ = "0.1.0"

from .noise import (
    DEFAULT_TABLE_SIZE,
    VECTOR_DIM,
    DirectionHandle,
    DirectionSampler,
    NoiseTable,
    build_table,
    slice_direction,
)
from .policy import (
    MagnitudeRangeTable,
    OperationSpec,
    Policy,
    PolicyParseError,
    SubPolicy,
    concat_top_policies,
    decode_policy,
    decode_triple,
    default_ranges,
    load_range_table,
    parse_policy,
    serialize_policy,
)
from .search import (
    DirectionOutcome,
    EvaluatorUnavailableError,
    RewardRecord,
    SearchConfig,
    SearchResult,
    SearchState,
    init_state,
    propose_perturbations,
    rank_directions,
    run_search,
    sigmoid,
    update_step,
)
from .evaluators import (
    EvalRequest,
    EvalResult,
    EvaluationError,
    ExternalEvaluatorPool,
    ProtocolError,
    RewardEvaluator,
    SphereEvaluator,
    SyntheticTarget,
    TargetMatchingEvaluator,
    make_evaluator,
    spawn_external,
    sphere_reward,
    target_matching_reward,
)
from .imageops import (
    UnsupportedOperationError,
    apply_operation,
    apply_policy_minibatch_style,
    apply_subpolicy,
    render_contact_sheet,
)

__all__ = [
    "DEFAULT_TABLE_SIZE",
    "VECTOR_DIM",
    "DirectionHandle",
    "DirectionSampler",
    "NoiseTable",
    "build_table",
    "slice_direction",
    "MagnitudeRangeTable",
    "OperationSpec",
    "Policy",
    "PolicyParseError",
    "SubPolicy",
    "concat_top_policies",
    "decode_policy",
    "decode_triple",
    "default_ranges",
    "load_range_table",
    "parse_policy",
    "serialize_policy",
    "DirectionOutcome",
    "EvaluatorUnavailableError",
    "RewardRecord",
    "SearchConfig",
    "SearchResult",
    "SearchState",
    "init_state",
    "propose_perturbations",
    "rank_directions",
    "run_search",
    "sigmoid",
    "update_step",
    "EvalRequest",
    "EvalResult",
    "EvaluationError",
    "ExternalEvaluatorPool",
    "ProtocolError",
    "RewardEvaluator",
    "SphereEvaluator",
    "SyntheticTarget",
    "TargetMatchingEvaluator",
    "make_evaluator",
    "spawn_external",
    "sphere_reward",
    "target_matching_reward",
    "UnsupportedOperationError",
    "apply_operation",
    "apply_policy_minibatch_style",
    "apply_subpolicy",
    "render_contact_sheet",
    "__version__",
]
