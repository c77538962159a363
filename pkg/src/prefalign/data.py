"""Shared data types: contexts, preference samples, conversations, logs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InputContext",
    "PreferenceSample",
    "Turn",
    "Conversation",
    "StepRecord",
    "TrajectoryLog",
]


@dataclass
class InputContext:
    """Model input: one image latent vector plus question token ids."""

    image_latent: np.ndarray
    question: list[int]

    def __post_init__(self):
        self.image_latent = np.asarray(self.image_latent, dtype=np.float64)
        if len(self.question) == 0:
            raise ValueError("question must be non-empty")
        if not np.all(np.isfinite(self.image_latent)):
            raise ValueError("image latent must be finite")


@dataclass
class PreferenceSample:
    """(x, y_c, y_r): context with chosen and rejected token sequences."""

    context: InputContext
    chosen: list[int]
    rejected: list[int]

    def __post_init__(self):
        if not self.chosen or not self.rejected:
            raise ValueError("chosen and rejected must be non-empty")


@dataclass
class Turn:
    question: list[int]
    answer: list[int]
    mask: list[bool] = field(default=None)  # which answer tokens carry loss

    def __post_init__(self):
        if self.mask is None:
            self.mask = [True] * len(self.answer)
        if len(self.mask) != len(self.answer):
            raise ValueError("mask length must match answer length")


@dataclass
class Conversation:
    """Ordered Q/A turns over one image; the SFT/nSFT training unit."""

    image_latent: np.ndarray
    turns: list[Turn]
    provenance: str = "gt"  # gt | constructed | appended

    def __post_init__(self):
        self.image_latent = np.asarray(self.image_latent, dtype=np.float64)

    def flatten(self):
        """Collapse turns into (question0, y, mask) for a single SFT pass.

        y concatenates answer/question/answer/... after the first
        question; only answer tokens are loss-masked.
        """
        if not self.turns:
            raise ValueError("conversation has no turns")
        first_q = list(self.turns[0].question)
        y, mask = [], []
        for i, turn in enumerate(self.turns):
            if i > 0:
                y.extend(turn.question)
                mask.extend([False] * len(turn.question))
            y.extend(turn.answer)
            mask.extend(bool(m) for m in turn.mask)
        return first_q, y, mask


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    mean_chosen_logprob: float
    mean_rejected_logprob: float
    t1: float | None = None
    t2: float | None = None
    p_dpo: float | None = None
    kl_to_reference: float | None = None


@dataclass
class TrajectoryLog:
    """Per-step training record consumed by the bias-trajectory report."""

    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)
