"""Manifests, slot vocabularies, batching, unseen-wording splits and the synthetic toy corpus."""
from __future__ import annotations

import csv
import itertools
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SLOTS = ("action", "object", "location")
MANIFEST_COLUMNS = ("path", "speakerId", "transcription", "action", "object", "location")


class ManifestSchemaError(ValueError):
    pass


class ManifestRowError(ValueError):
    pass


class SplitConstraintError(RuntimeError):
    pass


class ToySpecError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    audio_path: str
    speaker_id: str
    transcription: str
    action: str
    object: str
    location: str

    def __post_init__(self):
        for slot in SLOTS:
            if not getattr(self, slot):
                raise ManifestRowError(f"empty {slot} slot for {self.audio_path!r}")

    @property
    def intent(self) -> tuple[str, str, str]:
        return (self.action, self.object, self.location)


Manifest = list  # list[UtteranceRecord]


def parse_manifest(path, root=None) -> list[UtteranceRecord]:
    """Read an FSC-style CSV. Relative audio paths resolve against ``root`` (default: the CSV's folder)."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in MANIFEST_COLUMNS:
            if column not in header:
                raise ManifestSchemaError(f"{path}: missing column {column!r}")
        for row in reader:
            line = reader.line_num
            values = {c: (row.get(c) or "").strip() for c in MANIFEST_COLUMNS}
            for slot in SLOTS:
                if not values[slot]:
                    raise ManifestRowError(f"{path}:{line}: empty {slot} cell")
            audio = Path(values["path"])
            if not audio.is_absolute():
                audio = Path(os.path.normpath(root / audio))
            records.append(UtteranceRecord(
                audio_path=str(audio),
                speaker_id=values["speakerId"],
                transcription=values["transcription"],
                action=values["action"],
                object=values["object"],
                location=values["location"],
            ))
    return records


def write_manifest(records: Iterable[UtteranceRecord], path) -> None:
    """Write records as CSV; audio paths become relative to the CSV's folder when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            audio = Path(r.audio_path)
            try:
                audio = Path(os.path.relpath(audio.resolve(), base))
            except ValueError:
                pass
            writer.writerow([audio.as_posix(), r.speaker_id, r.transcription, r.action, r.object, r.location])


@dataclass(frozen=True)
class SlotVocab:
    actions: tuple[str, ...]
    objects: tuple[str, ...]
    locations: tuple[str, ...]
    valid_intents: frozenset = field(default_factory=frozenset)

    def labels(self, slot: str) -> tuple[str, ...]:
        return {"action": self.actions, "object": self.objects, "location": self.locations}[slot]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.actions), len(self.objects), len(self.locations))

    def index(self, slot: str, label: str) -> int:
        """Label index, or -1 when the label was never seen in training."""
        labels = self.labels(slot)
        try:
            return labels.index(label)
        except ValueError:
            return -1

    def encode(self, record_or_intent) -> tuple[int, int, int]:
        intent = record_or_intent.intent if isinstance(record_or_intent, UtteranceRecord) else record_or_intent
        return tuple(self.index(slot, label) for slot, label in zip(SLOTS, intent))

    def decode(self, indices: Sequence[int]) -> tuple[str, str, str]:
        return tuple(self.labels(slot)[int(i)] for slot, i in zip(SLOTS, indices))

    def to_dict(self) -> dict:
        return {
            "actions": list(self.actions),
            "objects": list(self.objects),
            "locations": list(self.locations),
            "valid_intents": sorted([list(t) for t in self.valid_intents]),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlotVocab":
        return cls(tuple(d["actions"]), tuple(d["objects"]), tuple(d["locations"]),
                   frozenset(tuple(t) for t in d["valid_intents"]))


def build_vocabs(records: Sequence[UtteranceRecord]) -> SlotVocab:
    if not records:
        raise ValueError("cannot build vocabularies from an empty manifest")
    actions = tuple(sorted({r.action for r in records}))
    objects = tuple(sorted({r.object for r in records}))
    locations = tuple(sorted({r.location for r in records}))
    vocab = SlotVocab(actions, objects, locations)
    valid = frozenset(vocab.encode(r) for r in records)
    return SlotVocab(actions, objects, locations, valid)


def build_vocabs_from_intents(intents: Iterable[Sequence[str]]) -> SlotVocab:
    intents = [tuple(t) for t in intents]
    if not intents:
        raise ValueError("cannot build vocabularies from no labels")
    columns = list(zip(*intents))
    vocab = SlotVocab(*(tuple(sorted(set(c))) for c in columns))
    return SlotVocab(vocab.actions, vocab.objects, vocab.locations,
                     frozenset(vocab.encode(t) for t in intents))


# ---------------------------------------------------------------------------
# unseen-wording splits


@dataclass
class WordingSplit:
    train: list
    test_unseen: list
    test_seen: list
    removed_wordings: list
    seed_used: int

    def summary(self) -> dict:
        return {
            "removed_wordings": self.removed_wordings,
            "counts": {
                "train": len(self.train),
                "test_unseen": len(self.test_unseen),
                "test_seen": len(self.test_seen),
                "train_wordings": len({r.transcription for r in self.train}),
                "removed_wordings": len(self.removed_wordings),
            },
            "seed_used": self.seed_used,
        }


def _partition_test(test, kept_wordings):
    unseen = [r for r in test if r.transcription not in kept_wordings]
    seen = [r for r in test if r.transcription in kept_wordings]
    return unseen, seen


def make_unseen_wording_split(records: Sequence[UtteranceRecord], mode: str = "remove_k", k: int | None = None,
                              seed: int = 0, test: Sequence[UtteranceRecord] | None = None,
                              max_retries: int = 1000) -> WordingSplit:
    """Drop whole wordings from a training manifest while keeping every intent represented.

    ``mode`` is ``"remove_k"`` (uniformly drop ``k`` distinct transcriptions, redrawing
    with ``seed + 1, seed + 2, ...`` until the intent set survives) or
    ``"most_frequent_only"`` (keep each intent's most frequent transcription).
    When ``test`` is omitted the dropped training records form the unseen test set.
    """
    records = list(records)
    wordings = sorted({r.transcription for r in records})
    all_intents = {r.intent for r in records}

    if mode in ("remove_k", "remove-k"):
        if k is None or not 0 <= k < len(wordings):
            raise ValueError(f"k must satisfy 0 <= k < {len(wordings)} unique wordings, got {k}")
        for attempt in range(max_retries):
            rng = np.random.default_rng(seed + attempt)
            removed = set(rng.choice(len(wordings), size=k, replace=False).tolist())
            removed_w = {wordings[i] for i in removed}
            train = [r for r in records if r.transcription not in removed_w]
            if {r.intent for r in train} == all_intents:
                used = seed + attempt
                break
        else:
            raise SplitConstraintError(
                f"no draw of {k} wordings kept all {len(all_intents)} intents after {max_retries} retries")
    elif mode in ("most_frequent_only", "most-frequent"):
        counts = Counter((r.intent, r.transcription) for r in records)
        best: dict = {}
        for (intent, wording), n in sorted(counts.items()):
            if intent not in best or n > best[intent][1]:
                best[intent] = (wording, n)
        keep = {w for w, _ in best.values()}
        train = [r for r in records if r.transcription in keep]
        removed_w = set(wordings) - keep
        used = seed
    else:
        raise ValueError(f"unknown split mode {mode!r}")

    kept = {r.transcription for r in train}
    if test is None:
        unseen = [r for r in records if r.transcription not in kept]
        seen = []
    else:
        unseen, seen = _partition_test(test, kept)
    return WordingSplit(train, unseen, seen, sorted(removed_w), used)


def write_split(split: WordingSplit, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(split.train, out / "train.csv")
    write_manifest(split.test_unseen, out / "test_unseen.csv")
    write_manifest(split.test_seen, out / "test_seen.csv")
    (out / "split_summary.json").write_text(json.dumps(split.summary(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    features: np.ndarray  # B x Tmax x dim
    lengths: np.ndarray
    targets: np.ndarray  # B x 3

    def __len__(self) -> int:
        return self.features.shape[0]


def pad_batch(features: Sequence[np.ndarray], targets: Sequence[Sequence[int]] | None = None,
              dim: int = 40, dtype=np.float32) -> Batch:
    if targets is not None and len(features) != len(targets):
        raise ValueError(f"{len(features)} feature sequences but {len(targets)} targets")
    if not len(features):
        raise ValueError("cannot pad an empty batch")
    mats = [getattr(f, "frames", f) for f in features]
    for m in mats:
        if m.ndim != 2 or m.shape[1] != dim:
            raise ValueError(f"expected T x {dim} features, got shape {m.shape}")
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    out = np.zeros((len(mats), lengths.max(), dim), dtype=dtype)
    for b, m in enumerate(mats):
        out[b, : m.shape[0]] = m
    if targets is None:
        tgt = np.full((len(mats), 3), -1, dtype=np.int64)
    else:
        tgt = np.asarray(targets, dtype=np.int64).reshape(len(mats), 3)
    return Batch(out, lengths, tgt)


# ---------------------------------------------------------------------------
# synthetic toy corpus


@dataclass
class ToySpec:
    """Slot inventories and sizes for a synthetic tone/chirp corpus.

    Every non-"none" slot value is voiced as a chirp token; values within a
    slot come in mirrored pairs (rising vs falling sweep over the same band),
    so time-averaged features cannot separate them. A wording is an ordering
    of its intent's tokens with optional filler tones. Idiom wordings instead
    voice the whole intent with a single token of their own.
    """

    actions: list
    objects: list
    locations: list
    wordings_per_intent: int = 2
    utterances_per_wording: int = 10
    idioms_per_intent: int = 0
    valid_intents: list | None = None
    num_fillers: int = 3
    num_speakers: int = 8
    tokens: dict | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ToySpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ToySpecError(f"unknown toy spec keys: {sorted(unknown)}")
        return cls(**d)

    def intents(self) -> list[tuple[str, str, str]]:
        if self.valid_intents is not None:
            return [tuple(t) for t in self.valid_intents]
        return list(itertools.product(self.actions, self.objects, self.locations))


_FREQ_GRID = np.geomspace(250.0, 3800.0, 12)
_FILLER_WORDS = ("the", "please", "now", "my", "uh", "ok")


def _assign_tokens(spec: ToySpec, n_idioms: int, rng: np.random.Generator) -> dict:
    explicit = {}
    for key, value in (spec.tokens or {}).items():
        slot, _, label = key.partition(":")
        if slot not in SLOTS or not label:
            raise ToySpecError(f"token key {key!r} must look like 'slot:value'")
        explicit[(slot, label)] = tuple(float(f) for f in value)

    grid = _FREQ_GRID
    pairs = [(i, j) for i in range(len(grid)) for j in range(i + 2, len(grid))]
    pool = [pairs[i] for i in rng.permutation(len(pairs))]
    taken = {frozenset(v) for v in explicit.values()}
    pool = [p for p in pool if frozenset((grid[p[0]], grid[p[1]])) not in taken]

    def draw():
        if not pool:
            raise ToySpecError("toy spec needs more distinct tokens than the frequency grid offers")
        lo, hi = pool.pop()
        return grid[lo], grid[hi]

    tokens = dict(explicit)
    for slot, values in zip(SLOTS, (spec.actions, spec.objects, spec.locations)):
        voiced = [v for v in values if v != "none" and (slot, v) not in explicit]
        for start in range(0, len(voiced), 2):
            lo, hi = draw()
            tokens[(slot, voiced[start])] = (lo, hi)
            if start + 1 < len(voiced):
                tokens[(slot, voiced[start + 1])] = (hi, lo)
    for n in range(n_idioms):
        lo, hi = draw()
        tokens[("idiom", n)] = (hi, lo) if n % 2 else (lo, hi)
    for n in range(spec.num_fillers):
        f = grid[(2 * n + 1) % len(grid)]
        tokens[("filler", n)] = (f, f)

    owner: dict = {}
    for key, value in tokens.items():
        if value in owner:
            raise ToySpecError(f"token collision: {key!r} and {owner[value]!r} both map to {value}")
        owner[value] = key
    return tokens


def _render_token(f0: float, f1: float, n: int, amp: float, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    dur = n / sr
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / dur)
    env = np.sin(np.pi * np.arange(n) / n) ** 0.5
    return amp * env * np.sin(phase)


def generate_toy_dataset(spec: ToySpec, out_dir, sample_rate: int = 16000) -> list[UtteranceRecord]:
    """Write WAVs plus ``manifest.csv`` under ``out_dir``; returns the records in manifest order."""
    from .features import Waveform, write_wav

    if spec.wordings_per_intent < 1 or spec.utterances_per_wording < 1:
        raise ToySpecError("wordings_per_intent and utterances_per_wording must be positive")
    if not 0 <= spec.idioms_per_intent <= spec.wordings_per_intent:
        raise ToySpecError("idioms_per_intent must lie between 0 and wordings_per_intent")
    for slot, values in zip(SLOTS, (spec.actions, spec.objects, spec.locations)):
        if len(set(values)) != len(values) or not values:
            raise ToySpecError(f"{slot} values must be non-empty and distinct")
    intents = spec.intents()
    root = np.random.SeedSequence(spec.seed)
    layout_rng = np.random.default_rng(root.spawn(1)[0])
    tokens = _assign_tokens(spec, spec.idioms_per_intent * len(intents), layout_rng)

    # wordings: (transcription, token keys)
    wordings: list[tuple[tuple, str, list]] = []
    used_text: set[str] = set()
    idiom_counter = 0
    for intent in intents:
        content = [(slot, v) for slot, v in zip(SLOTS, intent) if v != "none"]
        n_comp = spec.wordings_per_intent - spec.idioms_per_intent
        made = 0
        attempts = 0
        while made < n_comp:
            attempts += 1
            if attempts > 1000:
                raise ToySpecError(f"cannot form {n_comp} distinct wordings for intent {intent}")
            keys = [content[i] for i in layout_rng.permutation(len(content))]
            if spec.num_fillers:
                for _ in range(int(layout_rng.integers(0, 3))):
                    pos = int(layout_rng.integers(0, len(keys) + 1))
                    keys.insert(pos, ("filler", int(layout_rng.integers(spec.num_fillers))))
            if not keys:
                keys = [("filler", 0)] if spec.num_fillers else []
            words = [_FILLER_WORDS[k[1] % len(_FILLER_WORDS)] if k[0] == "filler" else k[1] for k in keys]
            text = " ".join(words) if words else "(silence)"
            if text in used_text:
                continue
            used_text.add(text)
            wordings.append((intent, text, keys))
            made += 1
        for _ in range(spec.idioms_per_intent):
            text = f"idiom{idiom_counter:03d}"
            wordings.append((intent, text, [("idiom", idiom_counter)]))
            used_text.add(text)
            idiom_counter += 1

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    records = []
    utt_seeds = root.spawn(2)[1].spawn(len(wordings) * spec.utterances_per_wording)
    n = 0
    for intent, text, keys in wordings:
        for _ in range(spec.utterances_per_wording):
            rng = np.random.default_rng(utt_seeds[n])
            pieces = [np.zeros(int(rng.uniform(0.05, 0.15) * sample_rate))]
            for key in keys:
                f0, f1 = tokens[key]
                jitter = rng.uniform(0.97, 1.03)
                length = int(rng.uniform(0.12, 0.2) * sample_rate)
                pieces.append(_render_token(f0 * jitter, f1 * jitter, length, rng.uniform(0.2, 0.6), sample_rate))
                pieces.append(np.zeros(int(rng.uniform(0.06, 0.15) * sample_rate)))
            pieces.append(np.zeros(int(rng.uniform(0.05, 0.15) * sample_rate)))
            audio = np.concatenate(pieces)
            audio = audio + rng.normal(0.0, 0.003, size=audio.size)
            speaker = f"spk{n % spec.num_speakers}"
            path = wav_dir / speaker / f"utt{n:05d}.wav"
            write_wav(path, Waveform(np.clip(audio, -1.0, 1.0), sample_rate))
            records.append(UtteranceRecord(str(path), speaker, text, *intent))
            n += 1
    write_manifest(records, out_dir / "manifest.csv")
    (out_dir / "toy_spec.json").write_text(json.dumps(asdict(spec), indent=2, default=list) + "\n")
    return records
