"""Sequential stance classification for tree-structured social-media conversations."""
from .thread_model import (
    LABELS,
    Branch,
    ConversationThread,
    Dataset,
    StanceLabel,
    Tweet,
    chronological_order,
    depth_of,
    extract_branches,
    load_dataset,
    novelty_mask_check,
    parse_thread,
)

__all__ = [
    "LABELS",
    "Branch",
    "ConversationThread",
    "Dataset",
    "StanceLabel",
    "Tweet",
    "chronological_order",
    "depth_of",
    "extract_branches",
    "load_dataset",
    "novelty_mask_check",
    "parse_thread",
]
