"""Tool-routing reasoning agent for visual benchmarks, plus diagnostics."""

from .actions import FinalAnswer, Thought, ToolCall, extract_answer, parse_action
from .agent import (
    AgentLoop,
    BacktrackLimitExceeded,
    BudgetDecision,
    Checkpoint,
    Verdict,
    enforce_budget,
    run_item,
)
from .diagnostics import (
    DiagnosticsReport,
    ErrorCategoryDist,
    ModelJudgeClassifier,
    RuleBasedClassifier,
    TokenBucketStats,
    bucket_by_tokens,
    build_report,
    categorize_errors,
    compare_conditions,
    token_histograms,
)
from .harness import (
    AblationConfig,
    AblationTable,
    AccuracySummary,
    EmptyLogError,
    SchemaError,
    bootstrap_ci,
    config_fingerprint,
    load_dataset,
    run_ablation,
    run_benchmark,
    score,
)
from .model import (
    AuthError,
    ChatTurn,
    CompletionResult,
    HttpModelClient,
    ModelClient,
    ModelTransportError,
    Role,
    ScriptedModelClient,
    count_tokens_fallback,
)
from .sandbox import ExecResult, SandboxStatus, SandboxWorkerClient
from .tools import (
    ModelEndpointToolBackend,
    SandboxCodeToolBackend,
    ScriptedToolBackend,
    ToolBackendError,
    ToolCallRecord,
    ToolDisabledError,
    ToolRegistry,
    ToolResultRecord,
    ToolSpec,
    dispatch,
    render_tool_prompt,
)
from .types import (
    AgentConfig,
    BacktrackEvent,
    BenchmarkItem,
    Difficulty,
    ModelParams,
    ReasoningStep,
    ReasoningTrace,
    RunLog,
    RunRecord,
    RunStatus,
    StepKind,
    TokenBudget,
)

__version__ = "0.1.0"
