"""Toolchain for causal-reasoning trace curation and hallucination evaluation.

Pipeline: load an event-causality corpus, generate chain-of-thought traces
with a teacher endpoint, keep the correct ones, rewrite them with the target
model under a perplexity gate, export fine-tuning data, and score any
OpenAI-compatible endpoint for causal hallucination.
"""

from .corpus import (
    Dataset,
    DatasetKind,
    EventMention,
    EventPair,
    FoldSpec,
    Granularity,
    Label,
    analysis_split,
    extract_pairs,
    load_corpus,
    make_folds,
    sample_doc_level,
)
from .errors import (
    ApiError,
    CacheError,
    CapabilityError,
    ConfigError,
    IoError,
    NotFoundError,
    ParseError,
    PipelineError,
    StageError,
    TransportError,
    ValidationError,
)
from .gateway import (
    Completion,
    EndpointConfig,
    Gateway,
    MockBackend,
    RetryPolicy,
    TokenCount,
    perplexity_from_logprobs,
    register_mock,
    unregister_mock,
)
from .metrics import (
    MetricsReport,
    PredictionRecord,
    emit_report_csv,
    evaluate_predictions,
    run_evaluation,
    run_robustness,
)
from .prompts import (
    Answer,
    FewShotDemo,
    ParsedAnswer,
    TemplateId,
    build_eci_prompt,
    build_intervention_prompt,
    build_rewrite_prompt,
    load_default_demos,
    parse_final_answer,
)
from .rewrite import GateMode, PplGateReport, RewriteOutcome, RewriteReason, ppl_gate, rewrite_traces
from .tracegen import (
    CoTTrace,
    SelectionKind,
    SelectionStrategy,
    TraceStage,
    filter_correct,
    generate_traces,
    mean_token_length,
    select_traces,
)

__version__ = "0.1.0"
