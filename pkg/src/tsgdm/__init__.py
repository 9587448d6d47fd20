"""Momentum-based textual prompt optimization, its task harness, and the
scalar variance lab that motivates the averaging."""

from .errors import (
    AuthError,
    BudgetExceededError,
    CacheMissError,
    ConfigError,
    DomainError,
    EmptyBatchError,
    EmptyHistoryError,
    EmptySetError,
    LabelError,
    NetworkError,
    ParseError,
    ProtocolError,
    SizeError,
    TsgdmError,
    UnknownFieldError,
)
from .gateway import (
    Backend,
    CacheMode,
    CachingBackend,
    CallCounter,
    CompletionRequest,
    CompletionResult,
    FinishReason,
    RemoteBackend,
    RemoteConfig,
    ReplayCache,
    ScriptRule,
    ScriptedBackend,
    cached_complete,
    complete,
)
from .optimizer import (
    GenerationMode,
    GenerationParams,
    HypothesisPreset,
    IterationRow,
    OptimizerHistory,
    PromptRecord,
    RunConfig,
    RunResult,
    StopReason,
    WeightVector,
    compute_textual_gradient,
    concat_momentum_prompt,
    generate_vanilla,
    momentum_generate,
    momentum_weights,
    run_tsgd,
    sample_source,
    update_concat,
    update_mom,
    update_vanilla,
)
from .task import (
    LabeledExample,
    ScoreFunction,
    ScoreKind,
    TaskBinding,
    TaskPreset,
    binding_from_preset,
    exact_match_correct,
    extract_final_number,
    get_preset,
    load_dataset,
    load_presets,
    normalize_text,
    parse_label,
    predict,
    sample_batch,
    score_prompt,
    synthetic_binding,
)
from .templates import (
    ANALYZE_PROMPT,
    CONCAT_HISTORY_PROMPT,
    FORWARD_TEMPLATE,
    REFINE_PROMPT,
    REFINE_WITH_FEEDBACK_PROMPT,
    format_triples,
    render_forward,
)
from .variance import (
    CONVENTION_NOTE,
    EmaModel,
    VarianceCell,
    ema_mse_recursive,
    ema_mse_theory,
    simulate_ema,
    variance_report,
    write_report,
)
from .rng import RandomStream, substream

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "TsgdmError",
    "DomainError",
    "NetworkError",
    "AuthError",
    "ProtocolError",
    "CacheMissError",
    "BudgetExceededError",
    "EmptyHistoryError",
    "EmptyBatchError",
    "EmptySetError",
    "SizeError",
    "ParseError",
    "LabelError",
    "ConfigError",
    "UnknownFieldError",
    # gateway
    "Backend",
    "CompletionRequest",
    "CompletionResult",
    "FinishReason",
    "ScriptRule",
    "ScriptedBackend",
    "RemoteConfig",
    "RemoteBackend",
    "CacheMode",
    "ReplayCache",
    "CachingBackend",
    "CallCounter",
    "complete",
    "cached_complete",
    # optimizer
    "PromptRecord",
    "OptimizerHistory",
    "WeightVector",
    "GenerationMode",
    "GenerationParams",
    "HypothesisPreset",
    "RunConfig",
    "StopReason",
    "IterationRow",
    "RunResult",
    "momentum_weights",
    "sample_source",
    "momentum_generate",
    "generate_vanilla",
    "concat_momentum_prompt",
    "compute_textual_gradient",
    "update_mom",
    "update_vanilla",
    "update_concat",
    "run_tsgd",
    # task harness
    "LabeledExample",
    "ScoreKind",
    "ScoreFunction",
    "TaskBinding",
    "TaskPreset",
    "load_dataset",
    "sample_batch",
    "normalize_text",
    "parse_label",
    "extract_final_number",
    "exact_match_correct",
    "predict",
    "score_prompt",
    "load_presets",
    "get_preset",
    "binding_from_preset",
    "synthetic_binding",
    # templates
    "FORWARD_TEMPLATE",
    "REFINE_PROMPT",
    "REFINE_WITH_FEEDBACK_PROMPT",
    "ANALYZE_PROMPT",
    "CONCAT_HISTORY_PROMPT",
    "render_forward",
    "format_triples",
    # variance lab
    "CONVENTION_NOTE",
    "EmaModel",
    "VarianceCell",
    "ema_mse_theory",
    "ema_mse_recursive",
    "simulate_ema",
    "variance_report",
    "write_report",
    # rng
    "RandomStream",
    "substream",
]
