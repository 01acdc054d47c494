"""Coarse-to-fine curation of agent trajectories into SFT data."""

__version__ = "0.1.0"

from .curate import CurationConfig, CurationRecord, CurationReport, curate, emit_dataset  # noqa: E402
from .features import (  # noqa: E402
    DEFAULT_FEATURES,
    FeatureConfig,
    FeatureRegistry,
    FeatureVector,
    NormStats,
    extract,
    fit_norm,
    inverse_transform,
    transform,
)
from .judge import JudgeRequest, JudgeResponse, MockJudge, RemoteJudge, render_batch  # noqa: E402
from .lrfit import FitConfig, ScreeningModel, fit, label, predict_proba, weights_to_theta  # noqa: E402
from .mapreduce import AbstractTrajectory, GlobalEvaluation, Segment, map_trajectory, reduce  # noqa: E402
from .partition import Batch, SplitPolicy, partition, safety  # noqa: E402
from .scoring import ScoringFunction, f_cap, f_decay, f_ratio, total_score  # noqa: E402
from .screening import ScreenDecision, screen  # noqa: E402
from .trajectory import (  # noqa: E402
    SchemaError,
    Step,
    ToolCall,
    ToolResult,
    Trajectory,
    parse_trajectories,
    read_trajectories,
    validate,
    write_trajectories,
)
