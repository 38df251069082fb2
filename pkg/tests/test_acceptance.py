"""Acceptance suite: each test checks one criterion at its stated tolerance and prints a PASS/FAIL line."""
import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from slu_intent.augment import AugmentConfig, augment_manifest, augment_record
from slu_intent.data import (
    SLOTS,
    ToySpec,
    build_vocabs,
    generate_toy_dataset,
    make_unseen_wording_split,
    parse_manifest,
)
from slu_intent.decode import beam_search_decode, exhaustive_decode
from slu_intent.estimator import SLUIntentClassifier
from slu_intent.features import load_features, read_wav
from slu_intent.model import ModelConfig, SLUNetwork, teacher_forcing_prob
from slu_intent.nn import lr_at_epoch
from slu_intent.train import evaluate_classifier, evaluate_model

from .helpers import model_gradient_errors, random_posteriors

TOY_SLOTS = dict(actions=["increase", "decrease", "bring"], objects=["heat", "lights", "music", "shoes"],
                 locations=["kitchen", "none"])
RECIPE = dict(stack_layers=2, cell_kind="lstm", hidden_size=64, bidirectional=True, epochs=15, lr=0.001,
              random_state=0)


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def _pct(x):
    return f"{100 * x:.2f}%"


# ---------------------------------------------------------------------------
# 1. gradients of the summed slot loss for the whole architecture matrix


def test_criterion_1_gradient_matrix(report):
    start = time.perf_counter()
    worst, failures = 0.0, []
    matrix = itertools.product((1, 3), ("lstm", "gru"), ("sequential", "residual"), ("single_lstm", "triple_lstm"),
                               ("unconditional", "conditional"))
    n = 0
    for layers, cell, conn, rep, cls in matrix:
        cfg = ModelConfig(stack_layers=layers, cell_kind=cell, connections=conn, representation=rep,
                          classifier=cls, hidden_size=8)
        errors = model_gradient_errors(cfg, seed=n)
        n += 1
        top = max(errors.values())
        worst = max(worst, top)
        if top >= 1e-4:
            failures.append((cfg, top))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    report(1, ok, f"{n} variants, worst relative gradient error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 120s)")
    assert not failures, failures
    assert elapsed < 120


# ---------------------------------------------------------------------------
# 2. normalization of joint and chained posteriors


def test_criterion_2_normalization(report):
    start = time.perf_counter()
    worst = 0.0
    orders = list(itertools.permutations(SLOTS))
    for mode in ("unconditional", "conditional"):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            cfg = ModelConfig(stack_layers=1, hidden_size=4, classifier=mode, slot_order=orders[seed % 6],
                              representation=("single_lstm", "triple_lstm")[seed % 2])
            net = SLUNetwork(cfg, (6, 14, 4), seed=seed)
            # heavier head weights push the distributions away from uniform
            for slot in SLOTS:
                net.params[f"head.{slot}.W"].data *= 4
            x = rng.normal(size=(1, int(rng.integers(3, 10)), 40)).astype(np.float32)
            post = net.posteriors(x)[0]
            total = 0.0
            for a in range(post.tables[0].shape[-1]):
                pa = math.exp(post.step_log_probs(())[a])
                inner = 0.0
                for b in range(post.tables[1].shape[-1]):
                    pb = math.exp(post.step_log_probs((a,))[b])
                    inner += pb * float(np.exp(post.step_log_probs((a, b))).sum())
                total += pa * inner
            joint = float(np.exp(post.joint_table()).sum())
            worst = max(worst, abs(total - 1), abs(joint - 1))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6
    report(2, ok, f"200 random models, max |sum - 1| = {worst:.1e} (< 1e-6), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. beam search against brute force on FSC-shaped vocabularies


def test_criterion_3_decode_oracle(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    space = list(itertools.product(range(6), range(14), range(4)))
    mismatches = 0
    worst = 0.0
    for i in range(500):
        order = list(itertools.permutations(SLOTS))[i % 6]
        post = random_posteriors(rng, (6, 14, 4), conditional=i % 5 != 0, order=order)
        mask = [space[j] for j in rng.choice(len(space), size=31, replace=False)]
        for m in (None, mask):
            beam, brute = beam_search_decode(post, 336, m), exhaustive_decode(post, m)
            if beam.tuple != brute.tuple:
                mismatches += 1
            worst = max(worst, abs(beam.log_prob - brute.log_prob))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst < 1e-9
    report(3, ok, f"500 posterior sets x (unmasked, 31-intent mask): {mismatches} tuple mismatches, "
                  f"max log-prob gap {worst:.1e} (< 1e-9), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 8. toy corpus end to end, then checkpoint round trip


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_toy")
    spec = ToySpec(**TOY_SLOTS, wordings_per_intent=2, utterances_per_wording=14, seed=1)
    records = generate_toy_dataset(spec, root / "corpus")
    test = [r for i, r in enumerate(records) if i % 7 == 6]
    valid = [r for i, r in enumerate(records) if i % 7 == 5]
    train = [r for i, r in enumerate(records) if i % 7 < 5]
    feats = dict(zip([r.audio_path for r in records], load_features([r.audio_path for r in records])))
    runs = {}
    for classifier in ("unconditional", "conditional"):
        start = time.perf_counter()
        clf = SLUIntentClassifier(**RECIPE, classifier=classifier)
        clf.fit([feats[r.audio_path] for r in train], [r.intent for r in train],
                X_val=[feats[r.audio_path] for r in valid], y_val=[r.intent for r in valid])
        runs[classifier] = (clf, time.perf_counter() - start)
    return dict(root=root, records=records, train=train, valid=valid, test=test, feats=feats, runs=runs)


def test_criterion_4_toy_end_to_end(toy_runs, report):
    feats = toy_runs["feats"]
    total = sum(t for _, t in toy_runs["runs"].values())
    ok_all = total < 600
    lines = []
    for name, (clf, elapsed) in toy_runs["runs"].items():
        train_acc = clf.score([feats[r.audio_path] for r in toy_runs["train"]], [r.intent for r in toy_runs["train"]])
        test_acc = clf.score([feats[r.audio_path] for r in toy_runs["test"]], [r.intent for r in toy_runs["test"]])
        lrs = [h["lr"] for h in clf.history_.history]
        tfs = [h["teacher_prob"] for h in clf.history_.history]
        recipe_ok = lrs == [lr_at_epoch(e, 0.001) for e in range(1, 16)] and tfs[0] > 0.99 and tfs[-1] < 0.501
        ok = train_acc == 1.0 and test_acc >= 0.95 and recipe_ok
        ok_all &= ok
        lines.append(f"{name}: train {_pct(train_acc)} (= 100%), test {_pct(test_acc)} (>= 95%), "
                     f"best epoch {clf.history_.best_epoch}, {elapsed:.0f}s")
    report(4, ok_all, f"{len(toy_runs['train'])} train / {len(toy_runs['test'])} test; " + "; ".join(lines)
           + f"; total {total:.0f}s (< 600s)")
    assert ok_all


def test_criterion_8_checkpoint_round_trip(toy_runs, tmp_path, report):
    identical = True
    for name, (clf, _) in toy_runs["runs"].items():
        path = tmp_path / f"{name}.slum"
        clf.save(path)
        X = [toy_runs["feats"][r.audio_path] for r in toy_runs["test"]]
        before = evaluate_classifier(clf, toy_runs["test"], X=X, checkpoint=str(path))
        after = evaluate_model(path, toy_runs["test"])
        identical &= before == after
        SLUIntentClassifier.load(path).save(tmp_path / "again.slum")
        identical &= path.read_bytes() == (tmp_path / "again.slum").read_bytes()
    report(8, identical, "in-memory and reloaded checkpoints give bit-identical reports and predictions on the "
                         "toy test set, and re-saving reproduces the same bytes")
    assert identical


# ---------------------------------------------------------------------------
# 5. augmentation contract


def test_criterion_5_augmentation(toy_corpus, tmp_path, report):
    _, records = toy_corpus
    start = time.perf_counter()
    config = AugmentConfig(seed=7)
    out_a = augment_manifest(records, tmp_path / "a", config)
    out_b = augment_manifest(records, tmp_path / "b", config)
    count_ok = len(out_a) == 5 * len(records)
    labels_ok = all(out_a[5 * i + k].intent == r.intent and out_a[5 * i + k].transcription == r.transcription
                    for i, r in enumerate(records) for k in range(5))
    same = all(Path(a.audio_path).read_bytes() == Path(b.audio_path).read_bytes()
               for a, b in zip(out_a, out_b))
    same &= [Path(a.audio_path).name for a in out_a] == [Path(b.audio_path).name for b in out_b]

    # SNR re-measured from the written files on a sample of records
    worst_snr, worst_fit, checked = 0.0, 0.0, 0
    for i in range(0, len(records), 8):
        clean = read_wav(records[i].audio_path).samples
        for k, (kind, _, spec) in enumerate(augment_record(records[i], i, config)):
            if kind == "reverb":
                continue
            written = read_wav(out_a[5 * i + 1 + k].audio_path).samples
            signal = spec.gain * clean
            noise = written - signal
            # the file holds the mixture up to 16-bit rounding
            worst_fit = max(worst_fit, float(np.max(np.abs(noise - spec.noise_component))))
            measured = 10 * math.log10(np.mean(signal**2) / np.mean(noise**2))
            worst_snr = max(worst_snr, abs(measured - spec.snr_db))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = count_ok and labels_ok and same and worst_snr < 0.1 and worst_fit <= 1 / 32768 and elapsed < 120
    report(5, ok, f"{len(records)} -> {len(out_a)} records (x5), labels preserved: {labels_ok}, "
                  f"byte-identical rerun: {same}, max SNR error {worst_snr:.4f} dB over {checked} mixes (< 0.1 dB), "
                  f"{elapsed:.1f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 6. unseen-wording split contract


def test_criterion_6_unseen_wordings(tmp_path, report):
    spec = ToySpec(**TOY_SLOTS, wordings_per_intent=3, idioms_per_intent=1, utterances_per_wording=7, seed=5)
    records = generate_toy_dataset(spec, tmp_path / "corpus")
    pool = [r for i, r in enumerate(records) if i % 7 != 6]
    test = [r for i, r in enumerate(records) if i % 7 == 6]
    split = make_unseen_wording_split(pool, "remove_k", k=12, seed=0, test=test)
    train_w = {r.transcription for r in split.train}
    disjoint = not train_w & {r.transcription for r in split.test_unseen}
    preserved = build_vocabs(split.train).valid_intents == build_vocabs(pool).valid_intents
    preserved &= {r.intent for r in split.train} == {r.intent for r in pool}

    feats = dict(zip([r.audio_path for r in records], load_features([r.audio_path for r in records])))
    clf = SLUIntentClassifier(**RECIPE, classifier="unconditional")
    clf.fit([feats[r.audio_path] for r in split.train], [r.intent for r in split.train])
    seen = 1 - clf.score([feats[r.audio_path] for r in split.test_seen], [r.intent for r in split.test_seen])
    unseen = 1 - clf.score([feats[r.audio_path] for r in split.test_unseen], [r.intent for r in split.test_unseen])
    ok = disjoint and preserved and unseen > seen
    report(6, ok, f"k=12 of {len({r.transcription for r in pool})} wordings removed; disjoint: {disjoint}; "
                  f"intent set preserved: {preserved}; intent error seen {_pct(seen)} "
                  f"vs unseen {_pct(unseen)} (unseen must be worse)")
    assert ok


# ---------------------------------------------------------------------------
# 7. schedule endpoints


def test_criterion_7_schedules(report):
    p0, p_inf = teacher_forcing_prob(0), teacher_forcing_prob(10**6)
    closed = all(lr_at_epoch(e, 0.001) == 0.001 * 2.0 ** (-max(0, math.floor((e - 5) / 2))) for e in range(1, 31))
    ok = p0 > 0.99 and p_inf < 0.5 + 1e-6 and closed
    report(7, ok, f"p(0) = {p0:.6f} (> 0.99), p(1e6) = {p_inf:.9f} (< 0.5 + 1e-6), "
                  f"lr closed form epochs 1-30: {closed}")
    assert ok


# ---------------------------------------------------------------------------
# 9. optional full-recipe run on the real corpus


@pytest.mark.skipif(not os.environ.get("SLU_FSC_ROOT"), reason="set SLU_FSC_ROOT to the FSC root to run")
def test_criterion_9_full_recipe(tmp_path, report):
    from slu_intent.config import RunConfig
    from slu_intent.train import train_model

    root = Path(os.environ["SLU_FSC_ROOT"])
    train = parse_manifest(root / "data" / "train_data.csv", root=root)
    valid = parse_manifest(root / "data" / "valid_data.csv", root=root)
    test = parse_manifest(root / "data" / "test_data.csv", root=root)
    augmented = augment_manifest(train, tmp_path / "aug", AugmentConfig(seed=0))
    run = RunConfig.from_text("stack_layers = 3\nhidden_size = 512\nclassifier = conditional\n")
    best, _ = train_model(augmented, valid, run, tmp_path / "run", cache_dir=tmp_path / "cache")
    result, _ = evaluate_model(best, test, cache_dir=tmp_path / "cache")
    ok = result["intent_error"] < 5.0
    report(9, ok, f"test intent error {result['intent_error']:.2f}% (< 5%)")
    assert ok
