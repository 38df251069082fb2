"""Epoch loop, validation-based model selection, checkpointing and evaluation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig, TrainHyperparams
from .data import SLOTS, UtteranceRecord, pad_batch
from .decode import decode, intent_accuracy
from .model import SamplingSchedule, SLUNetwork, teacher_forcing_prob
from .nn import NumericalError, make_optimizer

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    epoch: int = 0
    best_validation_error: float = math.inf
    best_epoch: int = 0
    best_checkpoint_path: str | None = None
    seed: int = 0
    history: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["best_validation_error"] = None if math.isinf(self.best_validation_error) else self.best_validation_error
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainState":
        d = json.loads(text)
        if d["best_validation_error"] is None:
            d["best_validation_error"] = math.inf
        return cls(**d)


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    n_batches = max(1, -(-len(order) // batch_size))
    return [b for b in np.array_split(order, n_batches) if len(b)]


def predict_posteriors(net: SLUNetwork, X: Sequence[np.ndarray], batch_size: int = 64):
    """Posteriors in input order; batches are formed from length-sorted utterances."""
    order = np.argsort([len(x) for x in X], kind="stable")
    out = [None] * len(X)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = pad_batch([X[i] for i in idx], dtype=net.dtype)
        for i, post in zip(idx, net.posteriors(batch.features, batch.lengths)):
            out[i] = post
    return out


def predict_intents(net: SLUNetwork, X, beam_width: int = 1, mask=None, batch_size: int = 64):
    return [decode(p, beam_width, mask) for p in predict_posteriors(net, X, batch_size)]


def fit_network(net: SLUNetwork, X: Sequence[np.ndarray], y: np.ndarray, hp: TrainHyperparams,
                X_val: Sequence[np.ndarray] | None = None, y_val: np.ndarray | None = None,
                on_improve: Callable[[TrainState], None] | None = None,
                on_epoch_end: Callable[[TrainState, object], None] | None = None,
                state: TrainState | None = None, optimizer_state: dict | None = None,
                teacher_prob_override: float | None = None) -> TrainState:
    """Train ``net`` in place.

    Epoch ``e`` (1-based) runs at ``lr_at_epoch(e)`` with teacher-forcing
    probability from the sampling schedule at ``e - 1``. Shuffling, dropout and
    sampling coins come from generators keyed by ``(seed, epoch, batch)``, so a
    run resumed from ``state`` continues exactly as the uninterrupted one.
    Returns the state; the best validation parameters are *not* restored here.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training set is empty")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} utterances but {len(y)} targets")
    state = state or TrainState(seed=hp.seed)
    schedule = SamplingSchedule(floor=hp.ss_floor, midpoint=hp.ss_midpoint, steepness=hp.ss_steepness)
    optimizer = make_optimizer(hp.optimizer, net.params, lr=hp.lr, clip_norm=hp.clip_norm)
    if optimizer_state is not None:
        optimizer.load_state_arrays(optimizer_state)

    for epoch in range(state.epoch + 1, hp.epochs + 1):
        optimizer.set_epoch(epoch)
        tf = teacher_prob_override if teacher_prob_override is not None else teacher_forcing_prob(epoch - 1, schedule)
        order = np.random.default_rng([hp.seed, epoch]).permutation(len(X))
        losses = []
        for b, idx in enumerate(_batches(order, hp.batch_size)):
            if len(idx) < 2:
                logger.warning("epoch %d batch %d: skipping batch with fewer than two utterances", epoch, b)
                continue
            batch = pad_batch([X[i] for i in idx], y[idx], dtype=net.dtype)
            rng = np.random.default_rng([hp.seed, epoch, b])
            loss = net.loss(batch, training=True, rng=rng, teacher_prob=tf)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            optimizer.step()
            losses.append(value)

        record = {
            "epoch": epoch,
            "lr": optimizer.state.lr,
            "teacher_prob": tf,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
        }
        improved = False
        if X_val is not None and len(X_val):
            preds = predict_intents(net, X_val)
            err = intent_accuracy(preds, y_val)["intent_error"]
            record["valid_intent_error"] = err
            if err < state.best_validation_error:
                state.best_validation_error = err
                state.best_epoch = epoch
                improved = True
        state.history.append(record)
        state.epoch = epoch
        logger.info("epoch %d: %s", epoch, json.dumps(record))
        if improved and on_improve is not None:
            on_improve(state)
        if on_epoch_end is not None:
            on_epoch_end(state, optimizer)
    return state


# ---------------------------------------------------------------------------
# manifest-level entry points


def _encode_targets(vocab, records) -> np.ndarray:
    return np.array([vocab.encode(r) for r in records], dtype=np.int64).reshape(len(records), 3)


def train_model(train_records: Sequence[UtteranceRecord], valid_records: Sequence[UtteranceRecord],
                run: RunConfig, out_dir, cache_dir=None, resume: bool = False):
    """Featurize, train, and keep ``best.slum`` (lowest validation intent error) under ``out_dir``.

    Also writes ``last.slum``, ``optimizer.npz`` and ``train_state.json`` after every
    epoch (enough to resume), ``metrics.json``, ``train.log`` and ``config.txt``.
    """
    from .checkpoint import load_checkpoint, save_checkpoint
    from .estimator import SLUIntentClassifier
    from .features import load_features

    if not train_records:
        raise ValueError("training manifest is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cache_dir) if cache_dir is not None else out / "features"
    (out / "config.txt").write_text(run.to_text())

    handler = logging.FileHandler(out / "train.log", mode="a" if resume else "w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger("slu_intent").addHandler(handler)
    logging.getLogger("slu_intent").setLevel(logging.INFO)
    try:
        X = load_features([r.audio_path for r in train_records], cache_dir)
        X_val = load_features([r.audio_path for r in valid_records], cache_dir) if valid_records else None
        clf = SLUIntentClassifier.from_run_config(run)
        y_labels = [r.intent for r in train_records]
        y_val = [r.intent for r in valid_records] if valid_records else None

        best_path = out / "best.slum"

        def on_improve(state):
            state.best_checkpoint_path = str(best_path)
            clf.save(best_path, extra={"epoch": state.epoch})

        def on_epoch_end(state, optimizer):
            clf.save(out / "last.slum", extra={"epoch": state.epoch})
            np.savez(out / "optimizer.npz", **optimizer.state_arrays())
            (out / "train_state.json").write_text(state.to_json() + "\n")
            (out / "metrics.json").write_text(json.dumps(state.history, indent=2) + "\n")

        state = optimizer_state = None
        if resume and (out / "train_state.json").exists():
            state = TrainState.from_json((out / "train_state.json").read_text())
            net, _ = load_checkpoint(out / "last.slum")
            with np.load(out / "optimizer.npz") as fh:
                optimizer_state = {k: fh[k] for k in fh.files}
            clf._prepare(y_labels)
            clf.net_.load_state_dict(net.state_dict())
        clf.fit(X, y_labels, X_val=X_val, y_val=y_val, on_improve=on_improve, on_epoch_end=on_epoch_end,
                state=state, optimizer_state=optimizer_state, warm_start=state is not None)
        if not valid_records:
            clf.save(best_path, extra={"epoch": clf.history_.epoch})
            clf.history_.best_checkpoint_path = str(best_path)
        (out / "train_state.json").write_text(clf.history_.to_json() + "\n")
        return best_path, clf.history_
    finally:
        logging.getLogger("slu_intent").removeHandler(handler)
        handler.close()


def evaluate_classifier(clf, records: Sequence[UtteranceRecord], X=None, constrained: bool = False,
                        beam_width: int = 1, cache_dir=None, manifest_name: str | None = None,
                        checkpoint: str | None = None):
    """Score a fitted :class:`SLUIntentClassifier`; returns ``(report, predictions)`` with errors in percent.

    Labels absent from the classifier's vocabularies are counted per slot under
    ``unknown_labels`` and always scored as errors.
    """
    from .features import load_features

    if not records:
        raise ValueError("cannot evaluate on an empty manifest")
    vocab = clf.vocab_
    if X is None:
        X = load_features([r.audio_path for r in records], cache_dir)
    targets = _encode_targets(vocab, records)
    preds = clf.predict_intents(X, constrained=constrained, beam_width=beam_width)
    metrics = intent_accuracy(preds, targets)
    unknown = {slot: int((targets[:, i] < 0).sum()) for i, slot in enumerate(SLOTS)}
    report = {
        "intent_error": 100.0 * metrics["intent_error"],
        "slot_errors": {k: 100.0 * v for k, v in metrics["slot_errors"].items()},
        "n_utterances": metrics["n_utterances"],
        "constrained": bool(constrained),
        "beam_width": int(beam_width),
        "checkpoint": checkpoint,
        "manifest": manifest_name,
        "seed": clf.random_state,
        "unknown_labels": unknown,
    }
    predictions = []
    for r, p, t in zip(records, preds, targets):
        labels = vocab.decode(p.tuple)
        predictions.append({
            "id": r.audio_path,
            "action": labels[0],
            "object": labels[1],
            "location": labels[2],
            "log_prob": p.log_prob,
            "correct": bool(tuple(p.tuple) == tuple(t)),
        })
    return report, predictions


def evaluate_model(checkpoint, records: Sequence[UtteranceRecord], constrained: bool = False,
                   beam_width: int = 1, cache_dir=None, manifest_name: str | None = None):
    """Load ``checkpoint`` and score it on ``records``; see :func:`evaluate_classifier`."""
    from .estimator import SLUIntentClassifier

    if not records:
        raise ValueError("cannot evaluate on an empty manifest")
    clf = SLUIntentClassifier.load(checkpoint)
    return evaluate_classifier(clf, records, constrained=constrained, beam_width=beam_width, cache_dir=cache_dir,
                               manifest_name=manifest_name, checkpoint=str(checkpoint))
