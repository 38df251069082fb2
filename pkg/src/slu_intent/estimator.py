"""scikit-learn compatible wrappers around the front-end and the intent network."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_intents, check_sequences
from .config import RunConfig, TrainHyperparams
from .data import SLOTS, SlotVocab, build_vocabs_from_intents
from .decode import intent_accuracy
from .features import Waveform, apply_cmn, compute_mfcc, read_wav
from .model import ModelConfig, SLUNetwork
from .train import TrainState, fit_network, predict_intents, predict_posteriors

_MODEL_PARAMS = ("stack_layers", "cell_kind", "hidden_size", "bidirectional", "connections",
                 "representation", "classifier", "slot_order", "dropout_rate")
_TRAIN_PARAMS = ("epochs", "batch_size", "lr", "optimizer", "clip_norm", "ss_midpoint", "ss_steepness",
                 "ss_floor")


class MFCCFeaturizer(BaseEstimator, TransformerMixin):
    """Waveforms (or WAV paths) -> list of T x 40 MFCC matrices, mean-normalized per utterance."""

    def __init__(self, cmn=True, dtype="float32"):
        self.cmn = cmn
        self.dtype = dtype

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = []
        for item in X:
            if isinstance(item, (str, Path)):
                item = read_wav(item)
            elif not isinstance(item, Waveform):
                item = Waveform(np.asarray(item, dtype=np.float64))
            feats = compute_mfcc(item)
            if self.cmn:
                feats = apply_cmn(feats)
            out.append(feats.frames.astype(self.dtype))
        return out


class SLUIntentClassifier(BaseEstimator, ClassifierMixin):
    """Predicts (action, object, location) intents from variable-length feature sequences.

    ``X`` is a list of T x 40 arrays; ``y`` a list of label triples. Parameters
    mirror :class:`ModelConfig` and :class:`TrainHyperparams`; ``constrained``
    and ``beam_width`` control decoding in :meth:`predict`.
    """

    def __init__(self, stack_layers=3, cell_kind="lstm", hidden_size=512, bidirectional=True,
                 connections="sequential", representation="single_lstm", classifier="conditional",
                 slot_order=SLOTS, dropout_rate=0.3, epochs=15, batch_size=32, lr=0.001,
                 optimizer="adam", clip_norm=5.0, ss_midpoint=5.0, ss_steepness=1.0, ss_floor=0.5,
                 constrained=False, beam_width=1, restore_best=True, random_state=0, dtype="float32"):
        self.stack_layers = stack_layers
        self.cell_kind = cell_kind
        self.hidden_size = hidden_size
        self.bidirectional = bidirectional
        self.connections = connections
        self.representation = representation
        self.classifier = classifier
        self.slot_order = slot_order
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.ss_midpoint = ss_midpoint
        self.ss_steepness = ss_steepness
        self.ss_floor = ss_floor
        self.constrained = constrained
        self.beam_width = beam_width
        self.restore_best = restore_best
        self.random_state = random_state
        self.dtype = dtype

    # -- config plumbing ---------------------------------------------------
    @classmethod
    def from_run_config(cls, run: RunConfig, **overrides) -> "SLUIntentClassifier":
        params = {k: getattr(run.model, k) for k in _MODEL_PARAMS}
        params.update({k: getattr(run.train, k) for k in _TRAIN_PARAMS})
        params["random_state"] = run.train.seed
        params.update(overrides)
        return cls(**params)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_PARAMS})

    def hyperparams(self) -> TrainHyperparams:
        return TrainHyperparams(seed=int(self.random_state), **{k: getattr(self, k) for k in _TRAIN_PARAMS})

    def _prepare(self, y_labels):
        self.vocab_ = build_vocabs_from_intents(y_labels)
        self.net_ = SLUNetwork(self.model_config(), self.vocab_.sizes, seed=int(self.random_state),
                               dtype=np.dtype(self.dtype).type)

    def _targets(self, y_labels) -> np.ndarray:
        return np.array([self.vocab_.encode(t) for t in y_labels], dtype=np.int64).reshape(-1, 3)

    # -- sklearn API -------------------------------------------------------
    def fit(self, X, y, X_val=None, y_val=None, on_improve=None, on_epoch_end=None, state=None,
            optimizer_state=None, warm_start=False, teacher_prob_override=None):
        X = check_sequences(X, dtype=self.dtype)
        y_labels = check_intents(y)
        if len(X) != len(y_labels):
            raise ValueError(f"{len(X)} sequences but {len(y_labels)} targets")
        if not (warm_start and hasattr(self, "net_")):
            self._prepare(y_labels)
        targets = self._targets(y_labels)
        val_X = val_y = None
        if X_val is not None:
            val_X = check_sequences(X_val, dtype=self.dtype)
            val_y = self._targets(check_intents(y_val))

        best = {}

        def improved(st):
            best["state"] = self.net_.copy_state()
            if on_improve is not None:
                on_improve(st)

        self.history_ = fit_network(
            self.net_, X, targets, self.hyperparams(), val_X, val_y,
            on_improve=improved, on_epoch_end=on_epoch_end, state=state,
            optimizer_state=optimizer_state, teacher_prob_override=teacher_prob_override,
        )
        if self.restore_best and "state" in best:
            self.net_.load_state_dict(best["state"])
        self.classes_ = [np.array(self.vocab_.labels(s), dtype=object) for s in SLOTS]
        return self

    def _mask(self, constrained):
        return sorted(self.vocab_.valid_intents) if constrained else None

    def predict_posteriors(self, X):
        check_is_fitted(self, "net_")
        return predict_posteriors(self.net_, check_sequences(X, dtype=self.dtype))

    def predict_intents(self, X, constrained=None, beam_width=None):
        check_is_fitted(self, "net_")
        constrained = self.constrained if constrained is None else constrained
        beam_width = self.beam_width if beam_width is None else beam_width
        return predict_intents(self.net_, check_sequences(X, dtype=self.dtype), beam_width,
                               self._mask(constrained))

    def predict(self, X):
        """Label triples, shape (n, 3), dtype object."""
        preds = self.predict_intents(X)
        return np.array([self.vocab_.decode(p.tuple) for p in preds], dtype=object).reshape(-1, 3)

    def score(self, X, y, sample_weight=None):
        """Intent accuracy: an utterance counts only if all three slots are right."""
        preds = self.predict_intents(X)
        targets = self._targets(check_intents(y))
        return 1.0 - intent_accuracy(preds, targets)["intent_error"]

    # -- persistence ---------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> None:
        from .checkpoint import save_checkpoint

        check_is_fitted(self, "net_")
        params = self.get_params()
        params["slot_order"] = list(params["slot_order"])
        meta = {"vocab": self.vocab_.to_dict(), "estimator": params, **(extra or {})}
        save_checkpoint(path, self.net_, meta)

    @classmethod
    def load(cls, path) -> "SLUIntentClassifier":
        from .checkpoint import load_checkpoint

        net, meta = load_checkpoint(path)
        params = dict(meta.get("estimator", {}))
        params = {k: v for k, v in params.items() if k in cls._get_param_names()}
        params.update({k: getattr(net.config, k) for k in _MODEL_PARAMS})
        params["dtype"] = "float32"
        clf = cls(**params)
        clf.vocab_ = SlotVocab.from_dict(meta["vocab"])
        clf.net_ = net
        clf.history_ = TrainState(epoch=int(meta.get("epoch", 0)), seed=int(clf.random_state))
        clf.classes_ = [np.array(clf.vocab_.labels(s), dtype=object) for s in SLOTS]
        return clf
