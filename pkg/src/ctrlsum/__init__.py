"""Attribute-controlled summarization with iterative guide-to-explain refinement."""
from __future__ import annotations

__version__ = "0.1.0"

from .control import AttributeTarget, Floor, IterationTrace, LoopConfig, RunAborted, Window, check, derive_floor, run_control
from .dataset import LabelMap, Sample, derive_thresholds, load_corpus, targets_for
from .embeddings import EmbeddingVector, HashEmbeddingProvider, RemoteEmbeddingProvider, cosine, similarity_scaled
from .evalharness import RunSet, compute_stats, load_runset, persist_traces, report, rmse
from .llm import ChatCompletionsClient, ChatExchange, ChatMessage, ReactiveModel, ScriptedModel, extract_summary
from .metrics import AttributeKind, Measurement, MeasurementContext, extractiveness, length_ratio, measure, speaker_score, topic_score
from .planner import MixedTarget, MixedTrace, misalignment, run_min_planning
from .prompts import PromptBundle, Strategy, build_initial, build_refinement, load_bundle
from .textcore import Token, TokenSeq, tokenize, word_count
