"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete. Every tolerance is fixed here, not configurable.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from udakit import (
    AdversarialConfig,
    DomainSpec,
    ExperimentConfig,
    MomentConfig,
    ModelBundle,
    PredictionSet,
    TrainConfig,
    auroc,
    balanced_accuracy,
    build_shift_matrix,
    chi_square_label_divergence,
    emit_report,
    ensemble_predict,
    fairness_report,
    generate_domain,
    init_mlp,
    load_dataset,
    load_model,
    pearson,
    predict,
    run_matrix,
    save_dataset,
    save_model,
    train_dann,
    train_adda,
    train_erm,
    train_m3sda,
    train_mdan,
    weighted_sampler_weights,
    wasserstein_feature_distance,
)
from udakit.moment import _m3sda_step_grads
from udakit.nn import cross_entropy, forward

from conftest import make_blobs
from gradcheck_cases import ALL_CASES
from oracles import (
    auroc_pairs,
    dpm_counting,
    eom_counting,
    pqd_counting,
    transport_cost_lp,
)


def report_line(criterion: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {criterion}: {status}{suffix}", flush=True)


def blob_pair(shift, seed, mix=(0.65, 0.35), sigma=0.7, n=600, sep=4.0):
    means = np.array([[0.0, 0.0], [sep, 0.0]])
    src = generate_domain(DomainSpec("src", n, 2, means, sigma, np.array(mix),
                                     np.array([1.0]), np.zeros((1, 2)), seed=seed))
    tgt = generate_domain(DomainSpec("tgt", n, 2, means + np.asarray(shift), sigma,
                                     np.array(mix), np.array([1.0]), np.zeros((1, 2)),
                                     seed=seed + 1000))
    return src, tgt


def target_accuracy(extractor, classifier, target):
    _, labels = predict(extractor, classifier, target.features)
    return float(np.mean(labels == target.labels))


def test_criterion_1_gradient_fidelity():
    """Every loss passes central finite differences at 1e-4 on 20 configs."""
    t0 = time.time()
    errors = {}
    for name, case in ALL_CASES.items():
        errors[name] = max(case(seed) for seed in range(4))
    elapsed = time.time() - t0
    worst = max(errors.values())
    ok = worst <= 1e-4 and elapsed < 30.0
    report_line("1 gradient-fidelity", ok,
                f"20 configs, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-4, errors
    assert elapsed < 30.0


def test_criterion_2_metric_oracles():
    """AUROC, fairness metrics, sliced W1, chi-square, Pearson vs oracles."""
    # AUROC vs O(n^2) pair counting, 100 random instances
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(5, 201))
        scores = rng.choice(np.linspace(0.0, 1.0, 9), size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(auroc(scores, labels) - auroc_pairs(scores, labels)) <= 1e-12

    # fairness metrics vs direct counting on small cases
    from udakit import accuracy, dpm, eom, pqd
    from oracles import accuracy_counting
    for m in (1, 2, 3):
        for g in (1, 2, 3):
            rng = np.random.default_rng(100 * m + g)
            for _ in range(25):
                n = int(rng.integers(g, 31))
                y = rng.integers(0, m, size=n)
                yh = rng.integers(0, m, size=n)
                s = np.concatenate([np.arange(g), rng.integers(0, g, size=n - g)])
                p = PredictionSet(y, yh, s, m, g)
                assert accuracy(p) == accuracy_counting(list(y), list(yh))
                expected = pqd_counting(list(y), list(yh), list(s), g)
                if expected is None:
                    with pytest.raises(ValueError):
                        pqd(p, basis="accuracy")
                else:
                    assert pqd(p, basis="accuracy") == expected
                assert dpm(p) == dpm_counting(list(y), list(yh), list(s), m, g)
                expected = eom_counting(list(y), list(yh), list(s), m, g)
                if expected is None:
                    with pytest.raises(ValueError):
                        eom(p)
                else:
                    assert eom(p) == expected

    # sliced W1 vs LP transport on separated families, dims 1..3, n <= 64
    worst_w1 = 0.0
    for dim in (1, 2, 3):
        rng = np.random.default_rng(100 + dim)
        for kind in ("translate", "scale", "mixed"):
            for _ in range(4):
                n, m = int(rng.integers(40, 65)), int(rng.integers(40, 65))
                a = rng.normal(size=(n, dim))
                if kind == "translate":
                    b = a + rng.normal(size=dim) * 2.0
                elif kind == "scale":
                    b = rng.normal(size=(m, dim)) * 2.5
                else:
                    shift = rng.uniform(1.5, 3.0, size=dim) * rng.choice([-1, 1], size=dim)
                    b = rng.normal(size=(m, dim)) * 1.5 + shift
                est = wasserstein_feature_distance(a, b, projections=512, seed=7)
                exact = transport_cost_lp(a, b)
                worst_w1 = max(worst_w1, abs(est - exact) / exact)
    assert worst_w1 < 0.15

    # chi-square and Pearson hand fixtures
    a = make_blobs("a", 1, n=400)
    b = make_blobs("b", 2, n=400)
    a.labels[:] = [0, 1] * 200
    b.labels[:] = [0] * 100 + [1] * 300
    chi = chi_square_label_divergence(a, b, epsilon=1e-15)
    assert abs(chi - 1.0 / 3.0) <= 1e-9
    r = pearson(np.array([1.0, 2, 3, 4]), np.array([2.0, 1, 4, 3]))
    assert abs(r - 0.6) <= 1e-9

    report_line("2 metric-oracles", True,
                f"auroc 1e-12, fairness exact, W1 worst {worst_w1:.3f} < 0.15, fixtures 1e-9")


def test_criterion_3_reductions():
    """Zero-weight and degenerate configurations match their simpler forms."""
    # (a) domain_weight 0: classifier trajectory identical to plain training
    src = make_blobs("s", 3, n=200, mix=[0.6, 0.4])
    tgt = make_blobs("t", 4, n=150)
    train = TrainConfig(n_classes=2, epochs=10, seed=21)
    dann = train_dann(src, tgt.unlabeled(), AdversarialConfig(train=train, domain_weight=0.0))
    erm = train_erm(src, train)
    exact = all(
        np.array_equal(a, b)
        for a, b in zip(dann.extractor.weights + dann.classifier.weights
                        + dann.extractor.biases + dann.classifier.biases,
                        erm.extractor.weights + erm.classifier.weights
                        + erm.extractor.biases + erm.classifier.biases))
    assert exact

    # (b) align/discrepancy weights 0: step-0 loss is the per-source sum
    rng = np.random.default_rng(9)
    ext = init_mlp([2, 8], rng, final="relu")
    heads = [init_mlp([8, 2], rng) for _ in range(3)]
    batches = [(rng.normal(size=(6, 2)), rng.integers(0, 2, size=6)) for _ in range(3)]
    xt = rng.normal(size=(6, 2))
    parts, _ = _m3sda_step_grads(ext, heads, batches, xt, 0.0, 0.0)
    per_source = []
    for (xs, ys), head in zip(batches, heads):
        feats, _ = forward(ext, xs)
        per_source.append(cross_entropy(forward(head, feats)[0], ys)[0])
    assert parts["total"] == float(np.sum(per_source))

    # (c) identical source copies: multi-source within 1 point of single
    src = make_blobs("s", 20, n=300, sigma=0.6)
    tgt = make_blobs("t", 21, n=300, sigma=0.6, means=((0.8, 0.0), (3.8, 0.0)))
    train = TrainConfig(n_classes=2, epochs=120, learning_rate=3e-3, momentum=0.5, seed=4)
    cfg = AdversarialConfig(train=train, domain_weight=1.0)
    acc_dann = target_accuracy(*_ec(train_dann(src, tgt.unlabeled(), cfg)), tgt)
    acc_mdan = target_accuracy(*_ec(train_mdan([src, src, src], tgt.unlabeled(), cfg)), tgt)
    gap = abs(acc_dann - acc_mdan)
    assert gap <= 0.01 + 1e-12
    report_line("3 reductions", True,
                f"dann=erm exact, m3sda step-0 sum exact, mdan-dann gap {gap:.3f} <= 0.01")


def _ec(result):
    return result.extractor, result.classifier


def test_criterion_4_adaptation_benefit():
    """Covariate-shift blobs: adversarial adaptation beats no adaptation."""
    gaps_dann, gaps_adda, arm_times = [], [], []
    for seed in (0, 1, 2):
        src, tgt = blob_pair((2.0, 0.0), 100 + seed)
        train = TrainConfig(n_classes=2, epochs=600, learning_rate=3e-3,
                            momentum=0.5, seed=seed)
        t0 = time.time()
        erm = train_erm(src, train)
        arm_times.append(time.time() - t0)
        acc_erm = target_accuracy(erm.extractor, erm.classifier, tgt)

        t0 = time.time()
        dann = train_dann(src, tgt.unlabeled(),
                          AdversarialConfig(train=train, domain_weight=2.0))
        arm_times.append(time.time() - t0)
        gaps_dann.append(target_accuracy(dann.extractor, dann.classifier, tgt) - acc_erm)

        t0 = time.time()
        adda = train_adda(src, tgt.unlabeled(),
                          AdversarialConfig(train=train, adapt_epochs=250,
                                            adapt_learning_rate=2e-4))
        arm_times.append(time.time() - t0)
        gaps_adda.append(target_accuracy(adda.extractor, adda.classifier, tgt) - acc_erm)

    mean_dann, mean_adda = float(np.mean(gaps_dann)), float(np.mean(gaps_adda))
    ok = mean_dann >= 0.05 and mean_adda >= 0.05 and max(arm_times) < 120.0
    report_line("4 adaptation-benefit", ok,
                f"dann +{mean_dann:.3f}, adda +{mean_adda:.3f} (need +0.05), "
                f"slowest arm {max(arm_times):.1f}s < 120s")
    assert mean_dann >= 0.05, gaps_dann
    assert mean_adda >= 0.05, gaps_adda
    assert max(arm_times) < 120.0


MULTI_MEANS = np.array([[0.0, 0.0], [3.0, 0.0], [1.5, 2.6]])


def complementary_domain(name, dist, seed, n=500, sigma=0.6):
    return generate_domain(DomainSpec(name, n, 2, MULTI_MEANS, sigma, np.array(dist),
                                      np.array([1.0]), np.zeros((1, 2)), seed=seed))


def test_criterion_5_multi_source_benefit():
    """Complementary label shift: multi-source beats the best single arm."""
    gaps_mdan, gaps_m3sda = [], []
    for seed in (0, 1, 2):
        sources = [
            complementary_domain("a", (0.5, 0.5, 0.0), 200 + seed),
            complementary_domain("b", (0.0, 0.5, 0.5), 300 + seed),
            complementary_domain("c", (0.5, 0.0, 0.5), 400 + seed),
        ]
        tgt = complementary_domain("t", (1 / 3, 1 / 3, 1 / 3), 500 + seed, n=600)
        train = TrainConfig(n_classes=3, epochs=200, learning_rate=3e-3,
                            momentum=0.5, seed=seed)
        best_single = max(
            target_accuracy(*_ec(train_dann(s, tgt.unlabeled(),
                                            AdversarialConfig(train=train))), tgt)
            for s in sources)
        rs_train = TrainConfig(n_classes=3, epochs=200, learning_rate=3e-3,
                               momentum=0.5, resample=True, seed=seed)
        mdan = train_mdan(sources, tgt.unlabeled(),
                          AdversarialConfig(train=rs_train, domain_weight=0.5))
        gaps_mdan.append(target_accuracy(*_ec(mdan), tgt) - best_single)
        m3 = train_m3sda(sources, tgt.unlabeled(),
                         MomentConfig(train=rs_train, align_weight=0.1))
        _, labels = ensemble_predict(m3.extractor, m3.classifiers, tgt.features)
        gaps_m3sda.append(float(np.mean(labels == tgt.labels)) - best_single)

    mean_mdan, mean_m3sda = float(np.mean(gaps_mdan)), float(np.mean(gaps_m3sda))
    ok = mean_mdan >= 0.05 and mean_m3sda >= 0.05
    report_line("5 multi-source-benefit", ok,
                f"rs-mdan +{mean_mdan:.3f}, rs-m3sda +{mean_m3sda:.3f} over best single (need +0.05)")
    assert mean_mdan >= 0.05, gaps_mdan
    assert mean_m3sda >= 0.05, gaps_m3sda


def test_criterion_6_resampling_benefit():
    """Class-imbalanced source: the balanced sampler helps balanced accuracy."""
    diffs = []
    for seed in (0, 1, 2):
        means = np.array([[0.0, 0.0], [3.0, 0.0]])
        src = generate_domain(DomainSpec("s", 600, 2, means, 0.9, np.array([0.85, 0.15]),
                                         np.array([1.0]), np.zeros((1, 2)), seed=600 + seed))
        tgt = generate_domain(DomainSpec("t", 600, 2, means, 0.9, np.array([0.5, 0.5]),
                                         np.array([1.0]), np.zeros((1, 2)), seed=700 + seed))
        plain_cfg = TrainConfig(n_classes=2, epochs=150, learning_rate=3e-3,
                                momentum=0.5, seed=seed)
        rs_cfg = TrainConfig(n_classes=2, epochs=150, learning_rate=3e-3,
                             momentum=0.5, resample=True, seed=seed)

        def bal(result):
            _, labels = predict(result.extractor, result.classifier, tgt.features)
            pred = PredictionSet(tgt.labels, labels, tgt.sensitive, 2, 1)
            return balanced_accuracy(pred)

        diffs.append(bal(train_erm(src, rs_cfg)) - bal(train_erm(src, plain_cfg)))
    mean_diff = float(np.mean(diffs))
    ok = mean_diff >= 0.0
    report_line("6 resampling-benefit", ok,
                f"rs-erm minus erm balanced accuracy {mean_diff:+.3f} (need >= 0)")
    assert mean_diff >= 0.0, diffs


GRID_MEANS = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.7]])
GRID_DISTS = [(0.8, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.1, 0.8), (0.34, 0.33, 0.33)]


def test_criterion_7_label_shift_correlation():
    """Across a 12-cell grid, label divergence tracks test error more than
    feature distance does."""
    specs = []
    for i, dist in enumerate(GRID_DISTS):
        jitter = np.random.default_rng(1000 + i).uniform(-0.2, 0.2, size=2)
        specs.append(DomainSpec(f"d{i}", 500, 2, GRID_MEANS + jitter, 0.9,
                                np.array(dist), np.array([1.0]), np.zeros((1, 2)),
                                seed=2000 + i))
    cfg = ExperimentConfig(
        task="multiclass", schemes=["single-erm"], domains=specs, repeats=3,
        base_seed=11, n_classes=3,
        train={"epochs": 100, "learning_rate": 3e-3, "momentum": 0.5})
    matrix = run_matrix(cfg)
    errors = {(c.source, c.target): 1.0 - c.mean for c in matrix.cells}
    assert len(errors) == 12

    domains = [generate_domain(s) for s in specs]
    shift = build_shift_matrix(domains, errors, projections=128, seed=3, n_classes=3)
    r_label, r_feature = shift.pearson_label_error, shift.pearson_feature_error
    ok = r_label >= 0.5 and r_label > r_feature
    report_line("7 label-shift-correlation", ok,
                f"r_label {r_label:.3f} (need >= 0.5) vs r_feature {r_feature:.3f}")
    assert r_label >= 0.5
    assert r_label > r_feature


FAIR_MEANS = np.array([[0.0, 0.0], [3.0, 0.0]])
FAIR_OFFSET = np.array([[0.0, 0.0], [2.5, 3.5]])


def fairness_domain(name, seed, minority, n, jitter_seed=None):
    means = FAIR_MEANS
    if jitter_seed is not None:
        means = means + np.random.default_rng(jitter_seed).uniform(-1.0, 1.0, size=(2, 2))
    return generate_domain(DomainSpec(name, n, 2, means, 0.8, np.array([0.6, 0.4]),
                                      np.array([1 - minority, minority]), FAIR_OFFSET,
                                      seed=seed))


def test_criterion_8_fairness_direction():
    """Minority-group construction: multi-source adaptation is at least as
    fair as single-source training while matching its quality."""
    singles, multis = [], []
    for seed in (0, 1, 2):
        sources = [fairness_domain(f"s{k}", 800 + 10 * seed + k, minority=0.015,
                                   n=250, jitter_seed=50 + k) for k in range(3)]
        tgt = fairness_domain("t", 900 + seed, minority=0.15, n=600)
        train = TrainConfig(n_classes=2, epochs=200, learning_rate=3e-3,
                            momentum=0.5, seed=seed)

        def triplet(scores):
            pred = PredictionSet(tgt.labels, np.argmax(scores, axis=1), tgt.sensitive,
                                 2, 2, scores[:, 1])
            rep = fairness_report(pred)
            return np.array([rep.pqd, rep.eom, rep.quality])

        per_source = []
        for s in sources:
            erm = train_erm(s, train)
            scores, _ = predict(erm.extractor, erm.classifier, tgt.features)
            per_source.append(triplet(scores))
        singles.append(np.mean(per_source, axis=0))

        rs_train = TrainConfig(n_classes=2, epochs=200, learning_rate=3e-3,
                               momentum=0.5, resample=True, seed=seed)
        m3 = train_m3sda(sources, tgt.unlabeled(),
                         MomentConfig(train=rs_train, align_weight=0.1))
        scores, _ = ensemble_predict(m3.extractor, m3.classifiers, tgt.features)
        multis.append(triplet(scores))

    single = np.mean(singles, axis=0)
    multi = np.mean(multis, axis=0)
    diffs = multi - single
    ok = bool((diffs >= 0.0).all())
    report_line("8 fairness-direction", ok,
                f"pqd {diffs[0]:+.3f}, eom {diffs[1]:+.3f}, auroc {diffs[2]:+.3f} (all need >= 0)")
    assert (diffs >= 0.0).all(), (single, multi)


def test_criterion_9_determinism_and_formats(tmp_path):
    """Byte-identical reports, exact file round trips, balanced sampling."""
    from test_harness import quick_config

    text_a = emit_report(run_matrix(quick_config(["single-erm", "combined-dann"],
                                                 repeats=2)), "canonical")
    text_b = emit_report(run_matrix(quick_config(["single-erm", "combined-dann"],
                                                 repeats=2)), "canonical")
    assert text_a == text_b

    data = make_blobs("round", 7, n=50, groups=(0.6, 0.4), group_offsets=[(0, 0), (1, 1)])
    save_dataset(data, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.labels, data.labels)
    assert back.sample_ids == data.sample_ids

    rng = np.random.default_rng(5)
    ext = init_mlp([2, 16, 8], rng, final="relu")
    head = init_mlp([8, 2], rng)
    save_model(ModelBundle(ext, [head], None, TrainConfig(n_classes=2).to_dict(), 5),
               tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    assert all(np.array_equal(a, b) for a, b in zip(ext.weights, loaded.extractor.weights))
    assert all(np.array_equal(a, b) for a, b in zip(ext.biases, loaded.extractor.biases))

    labels = np.array([0] * 700 + [1] * 200 + [2] * 100)
    w = weighted_sampler_weights(labels, 3)
    draws = np.random.default_rng(0).choice(labels.size, size=100_000, replace=True,
                                            p=w / w.sum())
    freq = np.bincount(labels[draws], minlength=3) / 100_000
    spread = float(np.abs(freq - 1 / 3).max())
    ok = spread < 0.02
    report_line("9 determinism-and-formats", ok,
                f"reports byte-identical, files exact, sampler spread {spread:.4f} < 0.02")
    assert spread < 0.02
