"""Acceptance criteria 1-10.

Each test appends one ``criterion N: PASS|FAIL ...`` line to the terminal
summary before asserting. Criteria 5 and 6 train real networks and are
marked ``slow`` (about half an hour together on one core); deselect them
with ``-m "not slow"``.
"""

import itertools
import math
import statistics
import time
from collections import Counter
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from ettk import tensor as T
from ettk.audio import AudioClip, augment
from ettk.cli import run as cli_run
from ettk.data import consensus_label, sortagrad_batches
from ettk.features import mfcc_with_deltas, pitch_track, power_spectrogram, raw_pitch, z_normalize
from ettk.layers import BiGRULayer, SequenceBatch, bigru_forward, classifier_forward, gru_cell_step, temporal_mean_pool
from ettk.metrics import ConfusionMatrix, cer, majority_class_ua, metrics_from_confusion
from ettk.objectives import ctc_batch_loss, ctc_loss
from ettk.optim import clip_grad_norm, global_norm
from ettk.pipeline import LOW_RESOURCE_TRAIN, balanced_subset, build_ser_model, pretrain_asr, run_ser, ser_fold
from ettk.synth import SerSynthSpec, synth_ser_corpus
from ettk.train import TrainConfig, train

from test_objectives_optim import brute_ctc


def verdict(log, n, ok, detail):
    log(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(16000 * seconds)) / 16000
    return AudioClip(amp * np.sin(2 * np.pi * freq * t))


# ---------------------------------------------------------------- 1. CTC oracle


def test_criterion_01_ctc_matches_brute_force(acceptance_log):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, mismatched = 0.0, 0
    for _ in range(500):
        Tn, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        target = rng.integers(1, V, size=int(rng.integers(0, 4))).tolist()
        probs = rng.dirichlet(np.ones(V), size=Tn)
        ref, got = brute_ctc(probs, target), ctc_loss(np.log(probs), target).loss
        if math.isinf(ref) or math.isinf(got):
            mismatched += not (math.isinf(ref) and math.isinf(got))
        else:
            worst = max(worst, abs(got - ref))
    elapsed = time.perf_counter() - start
    ok = mismatched == 0 and worst < 1e-10 and elapsed < 60
    assert verdict(acceptance_log, 1, ok, f"500 tables, max |diff| {worst:.2e}, infeasibility mismatches {mismatched}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2. grad checks


def _gru_cell(rng):
    D, H = 3, 2
    arrays = [rng.normal(size=(2, D)), rng.normal(size=(2, H)), rng.normal(size=(3 * H, D)), rng.normal(size=(3 * H, H)), rng.normal(size=3 * H)]

    def fn(x, h, W, U, b):
        return gru_cell_step(SimpleNamespace(W=W, U=U, b=b, input_size=D, hidden_size=H), x, h)

    return fn, arrays


def _bigru(rng):
    with T.precision(np.float64):
        layer = BiGRULayer(3, 2, rng)
    lengths = [4, int(rng.integers(1, 5))]

    def fn(x, *p):
        layer.forward.W, layer.forward.U, layer.forward.b, layer.backward.W, layer.backward.U, layer.backward.b = p
        return bigru_forward(layer, SequenceBatch(x, lengths)).features

    ps = [layer.forward.W, layer.forward.U, layer.forward.b, layer.backward.W, layer.backward.U, layer.backward.b]
    return fn, [rng.normal(size=(2, 4, 3))] + [p.data.copy() for p in ps]


def _conv2d(rng):
    def fn(x, k, b):
        return T.conv2d(x, k, stride=(2, 1), padding=(1, 1), bias=b)

    return fn, [rng.normal(size=(2, 2, 5, 4)), rng.normal(size=(3, 2, 3, 2)), rng.normal(size=3)]


def _mean_pool(rng):
    lengths = [3, int(rng.integers(1, 4))]
    return (lambda x: temporal_mean_pool(SequenceBatch(x, lengths))), [rng.normal(size=(2, 3, 4))]


def _classifier(rng):
    # fan-in scaled weights, as at init; N(0, 1) weights saturate the softmax
    # to gradients near 1e-9, below what central differences resolve
    return classifier_forward, [rng.normal(size=(4, 5)) / math.sqrt(5), rng.normal(size=4), rng.normal(size=5)]


def _ctc(rng):
    Tn, V = 5, 4
    lengths = [Tn, int(rng.integers(3, Tn + 1))]
    targets = [rng.integers(1, V, size=int(rng.integers(1, 3))).tolist() for _ in lengths]

    def fn(z):
        return ctc_batch_loss(T.log_softmax(z, axis=-1), lengths, targets)

    return fn, [rng.normal(size=(2, Tn, V))]


def _cross_entropy(rng):
    from ettk.objectives import cross_entropy

    labels = rng.integers(0, 4, size=3).tolist()
    return (lambda z: cross_entropy(z, labels)), [rng.normal(size=(3, 4))]


GRAD_CASES = {
    "gru_cell": _gru_cell,
    "bigru": _bigru,
    "conv2d": _conv2d,
    "mean_pool": _mean_pool,
    "classifier": _classifier,
    "ctc": _ctc,
    "cross_entropy": _cross_entropy,
}


def test_criterion_02_gradient_checks(acceptance_log):
    start = time.perf_counter()
    worst = {}
    for name, make in GRAD_CASES.items():
        errs = []
        for seed in range(100):
            fn, arrays = make(np.random.default_rng([seed, 7]))
            errs.append(T.grad_check(fn, arrays, seed=seed))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict(acceptance_log, 2, ok, f"100 seeds each, worst rel. error: {detail}; {elapsed:.0f}s")


# ---------------------------------------------------------------- 3. DSP


def test_criterion_03_dsp(acceptance_log):
    checks = {}
    spec = power_spectrogram(tone(1000))
    checks["1 kHz -> bin 20"] = bool(np.all(spec.frames.argmax(axis=1) == 20))
    checks["1 s -> 99x161"] = spec.frames.shape == (99, 161)
    clip = tone(300, 0.2, 0.1)
    ratio = np.abs(augment(clip, 1.0, 6.0).samples).max() / np.abs(clip.samples).max()
    checks["+6 dB -> 1.9953"] = abs(ratio - 1.9953) <= 1e-3
    f0 = raw_pitch(tone(200))
    voiced = f0[f0 > 0]
    smooth = pitch_track(tone(200)).smoothed
    checks["200 Hz pitch +-4"] = len(voiced) > 0.9 * len(f0) and bool(np.all(np.abs(voiced - 200) <= 4)) and bool(np.all(np.abs(smooth[7:-7] - 200) <= 4))
    rng = np.random.default_rng(3)
    z = z_normalize(mfcc_with_deltas(AudioClip(rng.normal(size=24000) * np.linspace(0.1, 1, 24000)))).frames
    checks["z-norm moments"] = bool(np.abs(z.mean(axis=0)).max() < 1e-6 and np.abs(z.std(axis=0) - 1).max() < 1e-6)
    failed = [k for k, v in checks.items() if not v]
    assert verdict(acceptance_log, 3, not failed, f"{len(checks) - len(failed)}/{len(checks)} checks (gain ratio {ratio:.5f})" + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------- 4. filtering


ANNOTATION_CLASSES = ("neutral", "anger", "happiness", "sadness", "excited", "frustration", "fear", "surprise")


def oracle_label(labels):
    """The four filtering rules applied literally, in order."""
    merged = ["happiness" if l == "excited" else l for l in labels]  # merge first
    distinct = set(merged)
    if len(distinct) >= 3:  # three different emotions
        return None
    agreed = [c for c in sorted(distinct) if merged.count(c) >= 2]  # at least two annotators
    if len(agreed) != 1:
        return None
    return agreed[0] if agreed[0] in ("neutral", "anger", "happiness", "sadness") else None


def pattern(labels):
    merged = ["happiness" if l == "excited" else l for l in labels]
    top = max(Counter(merged).values())
    if len(set(merged)) >= 3:
        return "3-distinct"
    return f"{top}-of-{len(labels)}" + ("+excited" if "excited" in labels else "")


def test_criterion_04_filter_table(acceptance_log):
    table = [combo for n in (1, 2, 3) for combo in itertools.combinations_with_replacement(ANNOTATION_CLASSES, n)]
    mismatches, seen = [], Counter()
    for combo in table:
        for perm in set(itertools.permutations(combo)):
            if consensus_label(perm) != oracle_label(perm):
                mismatches.append(perm)
        seen[pattern(combo)] += 1
    # hand-fixed rows
    fixed = {
        ("anger", "anger"): "anger",
        ("anger", "anger", "neutral"): "anger",
        ("anger", "happiness", "sadness"): None,
        ("excited", "happiness"): "happiness",
        ("excited", "excited", "neutral"): "happiness",
        ("excited", "happiness", "anger"): "happiness",
        ("fear", "fear"): None,
        ("frustration", "frustration", "anger"): None,
        ("neutral",): None,
        ("sadness", "neutral"): None,
    }
    mismatches += [k for k, v in fixed.items() if consensus_label(k) != v]
    needed = {"2-of-2", "2-of-3", "3-of-3", "3-distinct", "2-of-2+excited", "2-of-3+excited"}
    ok = not mismatches and needed <= set(seen)
    assert verdict(acceptance_log, 4, ok, f"{len(table)} label multisets (all orderings) + {len(fixed)} fixed rows, {len(mismatches)} mismatches")


# ---------------------------------------------------------------- 5. learnability


@pytest.fixture(scope="module")
def ser_corpus():
    clips, records = synth_ser_corpus(SerSynthSpec(), seed=0)
    return ser_fold(clips, records, 0)


@pytest.mark.slow
def test_criterion_05_baseline_learns(ser_corpus, acceptance_log):
    tr, va, te = ser_corpus
    sizes = (len(tr), len(va), len(te))
    uas, times = [], []
    for seed in range(5):
        start = time.perf_counter()
        _, report, _ = run_ser("baseline", tr, va, te, TrainConfig(seed=seed), hidden=96)
        times.append(time.perf_counter() - start)
        uas.append(report.ua)
    passing = sum(u >= 0.90 for u in uas)
    ok = sizes == (400, 100, 100) and passing >= 4 and max(times) < 600
    detail = f"split {sizes}, UA per seed {[round(u, 3) for u in uas]}, {passing}/5 >= 0.90, slowest {max(times):.0f}s"
    assert verdict(acceptance_log, 5, ok, detail)


# ---------------------------------------------------------------- 6 + 7. transfer


@pytest.mark.slow
def test_criterion_06_07_transfer_and_frozen_branch(ser_corpus, acceptance_log):
    start = time.perf_counter()
    asr_result, asr_cer = pretrain_asr()
    asr = asr_result.checkpoint
    frozen = {k: v.tobytes() for k, v in asr.params.items()}
    tr, va, te = ser_corpus
    uas = {name: [] for name in ("baseline", "ft_mp", "ft_rnn", "progressive")}
    changed = []
    for seed in range(5):
        subset = balanced_subset(tr, 40, seed)
        config = replace(LOW_RESOURCE_TRAIN, seed=seed)
        for name in uas:
            result, report, _ = run_ser(name, subset, va, te, config, tap=2, asr=None if name == "baseline" else asr)
            uas[name].append(report.ua)
            if name != "baseline":
                after = {f"{k}": p.data.tobytes() for k, p in result.model.asr.named_parameters()}
                changed += [(name, seed, k) for k in frozen if after[k] != frozen[k]]
    elapsed = time.perf_counter() - start
    med = {k: statistics.median(v) for k, v in uas.items()}
    floor = majority_class_ua() + 0.15
    ok6 = (
        asr_cer < 0.15
        and med["progressive"] >= med["baseline"]
        and med["ft_rnn"] >= med["ft_mp"] >= floor
        and elapsed < 45 * 60
    )
    detail = ", ".join(f"{k} {v:.3f}" for k, v in med.items())
    verdict(acceptance_log, 6, ok6, f"ASR CER {asr_cer:.3f}; median test UA: {detail} (floor {floor:.2f}); {elapsed / 60:.1f} min")
    ok7 = not changed
    verdict(acceptance_log, 7, ok7, f"15 transfer runs, {len(frozen)} ASR tensors compared bit-exact, {len(changed)} changed")
    assert ok6 and ok7


def test_criterion_07_frozen_branch_quick(tiny_ser, acceptance_log, tmp_path):
    from ettk.checkpoint import Checkpoint, save_checkpoint, load_frozen_asr
    from ettk.models import build_asr
    from ettk.pipeline import asr_spec_for

    save_checkpoint(build_asr(asr_spec_for("desk", 8), np.random.default_rng(0)), tmp_path / "asr.ettk")
    asr = Checkpoint.from_model(load_frozen_asr(tmp_path / "asr.ettk"))
    on_disk = (tmp_path / "asr.ettk").read_bytes()
    tr, va, _ = tiny_ser
    changed = 0
    for name in ("ft_mp", "ft_rnn", "progressive"):
        model = build_ser_model(name, 2, asr, hidden=64)
        train(model, tr, va, TrainConfig(lr=1e-2, batch_size=8, max_epochs=2))
        changed += sum(model.asr.state_dict()[k].tobytes() != v.tobytes() for k, v in asr.params.items())
    ok = changed == 0 and on_disk == (tmp_path / "asr.ettk").read_bytes()
    assert verdict(acceptance_log, 7, ok, f"quick check on a random desk ASR, 3 variants, {changed} tensors changed")


# ---------------------------------------------------------------- 8. schedule


def test_criterion_08_schedule_and_batching(tiny_ser, acceptance_log):
    tr, va, _ = tiny_ser
    checks = {}
    durations = [e.clip.duration for e in tr]
    order = sortagrad_batches(durations, 0, 8).order()
    checks["sortagrad"] = bool(np.all(np.diff(np.asarray(durations)[order]) >= 0))

    def fit(cfg, **kw):
        return train(build_ser_model("baseline", hidden=64, seed=cfg.seed), tr, va, cfg, **kw)

    base = TrainConfig(lr=1e-3, batch_size=8, augment=False)
    trace = [1.0, 0.9, 0.95, 0.96, 0.8, 0.85, 0.85, 0.7]
    res = fit(replace(base, max_epochs=8), loss_trace=trace)
    checks["plateau"] = [r["lr"] for r in res.history] == [1e-3] * 4 + [5e-4] * 3 + [2.5e-4]
    res = fit(replace(base, lr=4e-6, max_epochs=20), loss_trace=[1.0] * 20)
    checks["halt"] = res.stopped_early and len(res.history) == 5

    # scripted gradient norms around the threshold
    flags = []
    for target in (1.0, 14.999, 15.0, 15.001, 40.0, 1e3):
        g = [np.full(4, target / 2.0)]
        norm = clip_grad_norm(g, 15.0)
        flags.append((norm > 15.0, abs(global_norm(g) - min(norm, 15.0)) < 1e-9))
    checks["clip scripted"] = flags == [(False, True)] * 3 + [(True, True)] * 3

    for clip_norm in (15.0, 0.3):
        steps = []
        res = fit(replace(base, max_epochs=2, clip_norm=clip_norm), on_step=steps.append)
        audit = all(s["clipped"] == (s["norm"] > clip_norm) for s in steps)
        counted = sum(s["clipped"] for s in steps) == sum(r["clipped"] for r in res.history) == res.checkpoint.metadata["clipped_steps"]
        checks[f"clip audit {clip_norm}"] = audit and counted
    failed = [k for k, v in checks.items() if not v]
    assert verdict(acceptance_log, 8, not failed, f"{len(checks) - len(failed)}/{len(checks)} checks" + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------- 9. metrics


def recount(counts):
    """Metrics from per-sample pairs, using the textbook definitions."""
    K = len(counts)
    pairs = [(i, j) for i in range(K) for j in range(K) for _ in range(counts[i][j])]
    recall, precision, f1 = [], [], []
    for k in range(K):
        true_k = [p for t, p in pairs if t == k]
        pred_k = [t for t, p in pairs if p == k]
        r = sum(p == k for p in true_k) / len(true_k) if true_k else None
        pr = sum(t == k for t in pred_k) / len(pred_k) if pred_k else None
        recall.append(r)
        precision.append(pr)
        if r is None and pr is None:
            f1.append(None)
        elif not r or not pr:
            f1.append(0.0)
        else:
            hits = sum(p == k for p in true_k)
            f1.append(2.0 * hits / (len(true_k) + len(pred_k)))
    defined = [r for r in recall if r is not None]
    ua = sum(defined) / len(defined)
    wa = sum(t == p for t, p in pairs) / len(pairs)
    macro = None if None in f1 else sum(f1) / K
    return ua, wa, macro, recall, precision, f1


def test_criterion_09_metrics_oracle(acceptance_log):
    rng = np.random.default_rng(99)
    bad = 0
    for _ in range(1000):
        counts = rng.integers(0, 12, size=(4, 4))
        if rng.random() < 0.3:
            counts[int(rng.integers(4)), :] = 0
        if rng.random() < 0.3:
            counts[:, int(rng.integers(4))] = 0
        if counts.sum() == 0:
            counts[0, 0] = 1
        r = metrics_from_confusion(ConfusionMatrix(counts))
        expect = recount(counts.tolist())
        bad += (r.ua, r.wa, r.macro_f1, r.recall, r.precision, r.f1) != expect
    cer_ok = cer(["abc"], ["abc"]) == 0.0 and cer(["abc"], ["abd"]) == 1 / 3 and cer([""], ["ab"]) == 1.0
    ok = bad == 0 and cer_ok
    assert verdict(acceptance_log, 9, ok, f"1000 random matrices, {bad} mismatches; CER examples {'hold' if cer_ok else 'FAIL'}")


# ---------------------------------------------------------------- 10. determinism


def test_criterion_10_determinism(tmp_path, acceptance_log):
    data = tmp_path / "data"
    assert cli_run(["synth-data", "--kind", "ser", "--sessions", "2", "--clips-per-speaker", "12", "--out", str(data)]) == 0
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        argv = ["--threads", "1", "train-ser", "--manifest", str(data / "manifest.tsv"), "--model", "baseline",
                "--set", "max_epochs=3", "--set", "batch_size=8", "--set", "ser_hidden=64", "--seed", "11", "--out", str(out)]
        assert cli_run(argv) == 0
        outs.append(out)
    names = ("model.ettk", "history.csv", "report.jsonl", "confusion.csv", "config.effective")
    same = [(outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names]
    assert verdict(acceptance_log, 10, all(same), f"{sum(same)}/{len(names)} artifacts byte-identical across two single-threaded runs")
