"""Greedy and beam decoding of slot posteriors into intents, plus intent-level error metrics."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .data import SLOTS
from .model import SlotPosteriors


@dataclass(frozen=True)
class IntentPrediction:
    tuple: tuple  # canonical (action, object, location) indices
    log_prob: float
    constrained: bool = False


def _argmax_low(x: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(x))


def greedy_decode(p: SlotPosteriors, order: Sequence[str] | None = None) -> IntentPrediction:
    """Pick the best label slot by slot; conditional heads see the earlier picks."""
    if order is not None and tuple(order) != p.order and p.conditional:
        raise ValueError(f"conditional posteriors are chained in {p.order}, not {tuple(order)}")
    prefix: list[int] = []
    total = 0.0
    for _ in range(3):
        lp = p.step_log_probs(tuple(prefix))
        j = _argmax_low(lp)
        prefix.append(j)
        total += float(lp[j])
    return IntentPrediction(p.to_canonical(prefix), total, False)


def _valid_prefixes(p: SlotPosteriors, mask: Iterable) -> list[set]:
    ordered = [p.to_order(t) for t in mask]
    return [{t[:n] for t in ordered} for n in range(1, 4)]


def beam_search_decode(p: SlotPosteriors, width: int, mask: Iterable | None = None) -> IntentPrediction:
    """Beam search over the three-step slot chain.

    With ``mask`` (a collection of valid canonical index tuples), partial
    hypotheses that no valid intent extends are pruned before ranking.
    Ties between equal scores go to the lexicographically smaller prefix.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    allowed = None
    if mask is not None:
        mask = list(mask)
        if not mask:
            raise ValueError("valid-intent mask is empty")
        allowed = _valid_prefixes(p, mask)

    beam: list[tuple[float, tuple]] = [(0.0, ())]
    for step in range(3):
        candidates = []
        for score, prefix in beam:
            lp = p.step_log_probs(prefix)
            for j in range(lp.shape[0]):
                ext = prefix + (j,)
                if allowed is not None and ext not in allowed[step]:
                    continue
                candidates.append((score + float(lp[j]), ext))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beam = candidates[:width]
    score, best = beam[0]
    return IntentPrediction(p.to_canonical(best), score, allowed is not None)


def exhaustive_decode(p: SlotPosteriors, mask: Iterable | None = None) -> IntentPrediction:
    """Reference optimum by scoring every tuple."""
    sizes = p.sizes
    candidates = list(mask) if mask is not None else list(product(*(range(n) for n in sizes)))
    best, best_score = None, -np.inf
    for intent in sorted(candidates, key=p.to_order):
        score = p.joint_log_prob(intent)
        if score > best_score:
            best, best_score = tuple(intent), score
    return IntentPrediction(best, best_score, mask is not None)


def decode(p: SlotPosteriors, beam_width: int = 1, mask=None) -> IntentPrediction:
    if beam_width <= 1 and mask is None:
        return greedy_decode(p)
    return beam_search_decode(p, max(1, beam_width), mask)


def intent_accuracy(preds: Sequence, targets: Sequence) -> dict:
    """Intent error (all three slots must match) and per-slot error rates, as fractions."""
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions but {len(targets)} targets")
    n = len(preds)
    if n == 0:
        raise ValueError("no utterances to score")
    pred = np.array([getattr(x, "tuple", x) for x in preds], dtype=np.int64).reshape(n, 3)
    tgt = np.asarray(targets, dtype=np.int64).reshape(n, 3)
    slot_wrong = pred != tgt
    intent_wrong = slot_wrong.any(axis=1)
    return {
        "intent_error": float(intent_wrong.mean()),
        "slot_errors": {slot: float(slot_wrong[:, i].mean()) for i, slot in enumerate(SLOTS)},
        "n_utterances": n,
        "n_intent_errors": int(intent_wrong.sum()),
    }
