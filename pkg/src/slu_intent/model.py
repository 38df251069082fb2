"""RNN stack, pooled representation layer and slot classifiers.

Intents are (action, object, location) tuples with one softmax head per slot.
The unconditional classifier treats the heads as independent given the
utterance. The conditional classifier chains them in ``slot_order``: the head
at chain position p sees the pooled representation concatenated with, for
every earlier head q, the column of head q's weight matrix that belongs to the
label chosen for slot q (bias excluded).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from .data import SLOTS, Batch
from .nn import (
    BatchNormState,
    ParamSet,
    Tensor,
    batch_norm,
    concat,
    cross_entropy_loss,
    dropout,
    init_params,
    log_softmax_array,
    no_grad,
    rnn_layer_forward,
    take_columns,
)

CONNECTIONS = ("sequential", "residual")
REPRESENTATIONS = ("single_lstm", "single_gru", "triple_lstm", "none")
CLASSIFIERS = ("unconditional", "conditional")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    stack_layers: int = 3
    cell_kind: str = "lstm"
    hidden_size: int = 512
    bidirectional: bool = True
    connections: str = "sequential"
    representation: str = "single_lstm"
    classifier: str = "conditional"
    slot_order: tuple = SLOTS
    dropout_rate: float = 0.3
    input_dim: int = 40

    def __post_init__(self):
        self.slot_order = tuple(self.slot_order)
        self.validate()

    def validate(self) -> None:
        if self.stack_layers < 1:
            raise ConfigError("stack_layers must be >= 1")
        if self.cell_kind not in ("lstm", "gru"):
            raise ConfigError(f"cell_kind must be 'lstm' or 'gru', got {self.cell_kind!r}")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.connections not in CONNECTIONS:
            raise ConfigError(f"connections must be one of {CONNECTIONS}, got {self.connections!r}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}, got {self.representation!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if sorted(self.slot_order) != sorted(SLOTS):
            raise ConfigError(f"slot_order must be a permutation of {SLOTS}, got {self.slot_order}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def width(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)

    @property
    def conditional(self) -> bool:
        return self.classifier == "conditional"

    @property
    def triple(self) -> bool:
        return self.representation == "triple_lstm"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slot_order"] = list(self.slot_order)
        return d

    def to_kv(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, d: dict) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(f"unknown model config key {key!r}")
            kwargs[key] = _coerce(key, value, known[key].default)
        return cls(**kwargs)

    @classmethod
    def from_kv(cls, text: str) -> "ModelConfig":
        from .config import parse_kv

        return cls.from_mapping(parse_kv(text))


def _coerce(key, value, default):
    if not isinstance(value, str):
        return tuple(value) if isinstance(default, tuple) else value
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return value


@dataclass
class SamplingSchedule:
    """Probability of feeding ground-truth labels: falls from ``start`` to ``floor`` along a logistic curve."""

    start: float = 1.0
    floor: float = 0.5
    midpoint: float = 5.0
    steepness: float = 1.0

    def __post_init__(self):
        if self.steepness <= 0:
            raise ValueError("steepness must be positive")
        if not 0.0 <= self.floor <= self.start <= 1.0:
            raise ValueError("need 0 <= floor <= start <= 1")


def teacher_forcing_prob(epoch: float, schedule: SamplingSchedule | None = None) -> float:
    s = schedule or SamplingSchedule()
    return s.floor + (s.start - s.floor) * float(expit(s.steepness * (s.midpoint - epoch)))


# ---------------------------------------------------------------------------
# posteriors


class SlotPosteriors:
    """Per-utterance slot distributions in log space.

    ``tables[p]`` belongs to the slot at chain position ``p`` of ``order``. For an
    unconditional model every table is a vector; for a conditional model table
    ``p`` is indexed by the labels of positions ``0..p-1`` first.
    """

    def __init__(self, order, tables, conditional: bool):
        self.order = tuple(order)
        self.tables = [np.asarray(t, dtype=np.float64) for t in tables]
        self.conditional = conditional

    @property
    def sizes(self) -> tuple[int, int, int]:
        """Label counts in canonical (action, object, location) order."""
        by_slot = {slot: t.shape[-1] for slot, t in zip(self.order, self.tables)}
        return tuple(by_slot[s] for s in SLOTS)

    def step_log_probs(self, prefix=()) -> np.ndarray:
        """Log-distribution of the next slot in ``order`` given labels chosen for the earlier ones."""
        table = self.tables[len(prefix)]
        if self.conditional:
            return table[tuple(prefix)]
        return table

    def step_probs(self, prefix=()) -> np.ndarray:
        return np.exp(self.step_log_probs(prefix))

    def marginal(self, slot: str) -> np.ndarray:
        if self.conditional:
            raise ValueError("marginals are only defined for unconditional posteriors")
        return np.exp(self.tables[self.order.index(slot)])

    def to_order(self, canonical) -> tuple:
        return tuple(canonical[SLOTS.index(s)] for s in self.order)

    def to_canonical(self, ordered) -> tuple:
        return tuple(ordered[self.order.index(s)] for s in SLOTS)

    def joint_log_prob(self, intent) -> float:
        """Log p(A, O, L | D) for a canonical (a, o, l) index tuple."""
        ordered = self.to_order(intent)
        total = 0.0
        for p in range(3):
            total += float(self.step_log_probs(ordered[:p])[ordered[p]])
        return total

    def joint_table(self) -> np.ndarray:
        """Log joint over the full product, axes in canonical order."""
        sizes = [t.shape[-1] for t in self.tables]
        if self.conditional:
            joint = (self.tables[0][:, None, None] + self.tables[1][:, :, None] + self.tables[2])
        else:
            joint = (self.tables[0][:, None, None] + self.tables[1][None, :, None]
                     + self.tables[2][None, None, :])
        joint = joint.reshape(sizes)
        axes = [self.order.index(s) for s in SLOTS]
        return np.transpose(joint, axes)


# ---------------------------------------------------------------------------
# network


@dataclass
class ForwardOutput:
    logits: dict  # slot -> Tensor (B x C)
    conditioning: dict  # slot -> label indices fed to later heads


class SLUNetwork:
    """Trainable parameters plus forward passes for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, num_labels, seed: int = 0, dtype=np.float32):
        self.config = config
        self.num_labels = {slot: int(n) for slot, n in zip(SLOTS, num_labels)}
        self.dtype = np.dtype(dtype).type
        self.params = ParamSet()
        self.bn: dict[str, BatchNormState] = {}
        self._build(np.random.default_rng(seed))

    # -- construction ------------------------------------------------------
    def _add_rnn(self, prefix, cell, din, rng):
        c = self.config
        dirs = ("fwd", "bwd") if c.bidirectional else ("fwd",)
        for d in dirs:
            for name, value in init_params(cell, din, c.hidden_size, rng, self.dtype).items():
                self.params[f"{prefix}.{d}.{name}"] = Tensor(value, dtype=self.dtype)

    def _rnn_params(self, prefix):
        c = self.config
        dirs = ("fwd", "bwd") if c.bidirectional else ("fwd",)
        out = []
        for d in dirs:
            keys = [k for k in self.params if k.startswith(f"{prefix}.{d}.")]
            out.append({k.rsplit(".", 1)[1]: self.params[k] for k in keys})
        return tuple(out)

    def _build(self, rng):
        c = self.config
        width = c.width
        widths = []
        din = c.input_dim
        for n in range(c.stack_layers):
            self._add_rnn(f"stack.{n}", c.cell_kind, din, rng)
            widths.append(width)
            din = width
        if c.connections == "residual":
            for n in range(2, c.stack_layers):
                if widths[n - 1] != widths[n - 2]:
                    raise ConfigError(f"residual sum of layers {n - 1} and {n} has mismatched widths")

        rep_names = self.rep_names
        if c.representation != "none":
            cell = "gru" if c.representation == "single_gru" else "lstm"
            for name in rep_names:
                self._add_rnn(f"repr.{name}", cell, width, rng)
        for name in rep_names:
            self.params[f"bn.{name}.gamma"] = Tensor(np.ones(width), dtype=self.dtype)
            self.params[f"bn.{name}.beta"] = Tensor(np.zeros(width), dtype=self.dtype)
            self.bn[name] = BatchNormState(
                self.params[f"bn.{name}.gamma"], self.params[f"bn.{name}.beta"],
                np.zeros(width, dtype=self.dtype), np.ones(width, dtype=self.dtype),
            )

        head_in = {}
        for p, slot in enumerate(c.slot_order):
            din = width
            if c.conditional:
                din += sum(head_in[s] for s in c.slot_order[:p])
            head_in[slot] = din
            bound = 1.0 / math.sqrt(din)
            self.params[f"head.{slot}.W"] = Tensor(
                rng.uniform(-bound, bound, size=(din, self.num_labels[slot])), dtype=self.dtype)
            self.params[f"head.{slot}.b"] = Tensor(np.zeros(self.num_labels[slot]), dtype=self.dtype)
        self.head_inputs = head_in

    @property
    def rep_names(self) -> tuple:
        return SLOTS if self.config.triple else ("shared",)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, state in self.bn.items():
            out[f"bn.{name}.running_mean"] = state.running_mean
            out[f"bn.{name}.running_var"] = state.running_var
        return out

    # -- forward pieces ----------------------------------------------------
    def forward_stack(self, features, lengths=None) -> Tensor:
        c = self.config
        x = features if isinstance(features, Tensor) else Tensor(features, dtype=self.dtype)
        outputs = []
        for n in range(c.stack_layers):
            if c.connections == "residual" and n >= 2:
                inp = outputs[n - 1] + outputs[n - 2]
            elif n == 0:
                inp = x
            else:
                inp = outputs[n - 1]
            outputs.append(rnn_layer_forward(inp, self._rnn_params(f"stack.{n}"), c.cell_kind,
                                             c.bidirectional, lengths))
        return outputs[-1]

    def representation_layer(self, stack_out: Tensor, lengths) -> dict:
        """Pooled vectors keyed ``"shared"`` or by slot name (triple mode)."""
        c = self.config
        B, T, _ = stack_out.shape
        lengths = np.full(B, T, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 1) or np.any(lengths > T):
            raise ValueError("every length must lie in [1, T]")
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(self.dtype)[:, :, None]
        inv_len = (1.0 / lengths).astype(self.dtype)[:, None]
        cell = "gru" if c.representation == "single_gru" else "lstm"
        reps = {}
        for name in self.rep_names:
            if c.representation == "none":
                seq = stack_out
            else:
                seq = rnn_layer_forward(stack_out, self._rnn_params(f"repr.{name}"), cell, c.bidirectional, lengths)
            reps[name] = (seq * mask).sum(axis=1) * inv_len
        return reps

    def _rep_for(self, reps: dict, slot: str):
        return reps[slot] if self.config.triple else reps["shared"]

    def _encode(self, features, lengths, training: bool, rng):
        reps = self.representation_layer(self.forward_stack(features, lengths), lengths)
        out = {}
        for name, r in reps.items():
            r = batch_norm(r, self.bn[name], training)
            out[name] = dropout(r, self.config.dropout_rate, training, rng)
        return out

    def forward(self, features, lengths=None, *, training: bool = False, rng=None, targets=None,
                teacher_prob: float = 1.0) -> ForwardOutput:
        """Logits for every head.

        Conditional heads are fed ground-truth labels from ``targets`` with
        probability ``teacher_prob`` (independently per utterance and slot) and
        the model's own argmax otherwise. Without targets the chain runs on
        its own predictions.
        """
        c = self.config
        if training and rng is None:
            raise ValueError("training-mode forward needs a generator")
        reps = self._encode(features, lengths, training, rng)
        logits: dict = {}
        chosen: dict = {}
        cond_inputs = []
        for p, slot in enumerate(c.slot_order):
            x = self._rep_for(reps, slot)
            if c.conditional and cond_inputs:
                x = concat([x] + cond_inputs, axis=1)
            x = dropout(x, c.dropout_rate, training, rng)
            W, b = self.params[f"head.{slot}.W"], self.params[f"head.{slot}.b"]
            logits[slot] = x @ W + b
            if c.conditional and p < 2:
                predicted = np.argmax(logits[slot].data, axis=1)
                if targets is not None:
                    truth = np.asarray(targets)[:, SLOTS.index(slot)]
                    if teacher_prob >= 1.0:
                        label = truth
                    else:
                        coin = (rng if rng is not None else np.random.default_rng(0)).random(len(truth))
                        label = np.where(coin < teacher_prob, truth, predicted)
                else:
                    label = predicted
                chosen[slot] = label
                cond_inputs.append(take_columns(W, label))
        return ForwardOutput(logits, chosen)

    def loss(self, batch: Batch, *, training: bool = True, rng=None, teacher_prob: float = 1.0) -> Tensor:
        out = self.forward(batch.features, batch.lengths, training=training, rng=rng,
                           targets=batch.targets, teacher_prob=teacher_prob)
        return slu_loss(out, batch.targets)

    def posteriors(self, features, lengths=None) -> list[SlotPosteriors]:
        """Eval-mode slot posteriors for every utterance in a padded batch."""
        c = self.config
        with no_grad():
            reps = self._encode(features, lengths, False, None)
        B = next(iter(reps.values())).shape[0]
        heads = [(self.params[f"head.{s}.W"].data.astype(np.float64),
                  self.params[f"head.{s}.b"].data.astype(np.float64)) for s in c.slot_order]
        rep_arr = {k: v.data.astype(np.float64) for k, v in reps.items()}
        width = c.width
        tables_b = []
        for p, slot in enumerate(c.slot_order):
            W, b = heads[p]
            r = rep_arr[slot if c.triple else "shared"]
            logits = r @ W[:width] + b  # B x C
            if c.conditional and p > 0:
                logits = logits.reshape([B] + [1] * p + [logits.shape[-1]])
                offset = width
                # head input is linear in each conditioning column, so its logits decompose per column
                for q in range(p):
                    Wq = heads[q][0]
                    block = Wq.T @ W[offset:offset + Wq.shape[0]]  # Cq x Cp
                    offset += Wq.shape[0]
                    shape = [1] * (p + 1) + [block.shape[1]]
                    shape[1 + q] = block.shape[0]
                    logits = logits + block.reshape(shape)
            tables_b.append(log_softmax_array(logits, axis=-1))
        return [SlotPosteriors(c.slot_order, [t[i] for t in tables_b], c.conditional) for i in range(B)]

    # -- parameter IO --------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        buffers = self.buffers()
        for name, value in state.items():
            target = self.params[name].data if name in self.params else buffers[name]
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {target.shape}")
            target[...] = value

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_dict().items()}


def slu_loss(out: ForwardOutput, targets) -> Tensor:
    """Sum of the three slot cross-entropies (each averaged over the batch)."""
    targets = np.asarray(targets, dtype=np.int64)
    total = None
    for slot in SLOTS:
        ce = cross_entropy_loss(out.logits[slot], targets[:, SLOTS.index(slot)])
        total = ce if total is None else total + ce
    return total
