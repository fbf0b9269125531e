"""Byte-grounded traffic description toolkit: capture parsing, dataset curation,
fixed-shape byte tensors, trait extraction, structured targets, report metrics
and a float64 loss oracle."""

__version__ = "0.1.0"

from .capture import FiveTuple, FlowSession, PacketRecord, assemble_sessions, parse_pcap
from .curate import CurationConfig, curate
from .evaluate import evaluate_reports, rouge_l
from .features import ByteTraitExtractor, GlobalStats, TraitVector, global_stats
from .knowledge import KnowledgeEntry, load_knowledge_base
from .loss import LossConfig
from .targets import TargetRecord, synthesize_target
from .tensorize import FlowTensorizer, plan_sampling, tensorize_flow

__all__ = [
    "__version__",
    "ByteTraitExtractor",
    "CurationConfig",
    "FiveTuple",
    "FlowSession",
    "FlowTensorizer",
    "GlobalStats",
    "KnowledgeEntry",
    "LossConfig",
    "PacketRecord",
    "TargetRecord",
    "TraitVector",
    "assemble_sessions",
    "curate",
    "evaluate_reports",
    "global_stats",
    "load_knowledge_base",
    "parse_pcap",
    "plan_sampling",
    "rouge_l",
    "synthesize_target",
    "tensorize_flow",
]
