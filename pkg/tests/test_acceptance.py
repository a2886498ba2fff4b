"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale setup is a
synthetic 4,000/1,000 example, 4-class dataset with a small CNN trained for
20 epochs; thresholds follow the stated tolerances.
"""

import time

import numpy as np
import pytest

import nabkit as nk
from nabkit.config import parse_config
from nabkit.detection import DetectionReport, detect_oracle
from nabkit.experiment import run, sweep_da_pla, sweep_mu_lambda
from nabkit.metrics import compute_core_metrics, compute_filter_metrics
from nabkit.relabeling import synthetic_pseudo_labels
from nabkit.seeding import round_count
from nabkit.stamping import StampSpec, apply_stamp

from fixtures import TableClassifier, coded_split, random_table
from oracles import algorithm1_oracle, core_metrics_oracle, filter_metrics_oracle

SEED = 0
TRAIN_N, TEST_N, CLASSES = 4000, 1000, 4
EPOCHS = 20


def check(criterion: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {criterion:>2}] {status}  {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def desk_pair():
    return nk.make_synthetic(TRAIN_N, TEST_N, CLASSES, seed=SEED)


@pytest.fixture(scope="session")
def badnets(desk_pair):
    trigger = nk.patch_trigger()
    target_map = nk.TargetMap()
    dp, manifest = nk.poison_dataset(desk_pair.train, trigger, target_map, 0.1, seed=SEED)
    return dp, manifest, trigger, target_map


@pytest.fixture(scope="session")
def clean_baseline_ca(desk_pair):
    result = nk.train(desk_pair.train, nk.TrainConfig(epochs=EPOCHS, seed=SEED))
    preds = result.classifier.predict(desk_pair.test.images())
    return 100.0 * float(np.mean(preds == desk_pair.test.labels()))


@pytest.fixture(scope="session")
def attack_metrics(desk_pair, badnets):
    dp, _, trigger, target_map = badnets
    result = nk.train(dp, nk.TrainConfig(epochs=EPOCHS, seed=SEED))
    return compute_core_metrics(result.classifier, desk_pair.test, trigger, target_map)


@pytest.fixture(scope="session")
def nab_oracle_run(desk_pair, badnets):
    """Criterion 4 setup: oracle detection (da=1.0, mu=0.1), exact pseudo labels."""
    dp, manifest, trigger, target_map = badnets
    report = detect_oracle(dp, manifest, mu=0.1, da=1.0, seed=SEED)
    labels = synthetic_pseudo_labels(dp, dp.ids, pla=1.0, seed=SEED, truth=desk_pair.train)
    nab = nk.nab_transform(dp, report, labels, StampSpec())
    result = nk.train(nab.split, nk.TrainConfig(epochs=EPOCHS, seed=SEED))
    return result.classifier


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_01_metric_oracle_equivalence():
    """1,000 randomized prediction fixtures, tolerance 0, under 10 s."""
    rng = np.random.default_rng(11)
    start = time.monotonic()
    for trial in range(1000):
        n = int(rng.integers(8, 65))
        k = int(rng.integers(2, 11))
        labels = rng.integers(0, k, size=n)
        if (labels != 0).sum() == 0:
            labels[0] = 1
        split = coded_split(n, k, labels=labels, seed=trial)
        table = random_table(n, k, rng)
        f = TableClassifier(table)
        core = compute_core_metrics(f, split, nk.patch_trigger(), nk.TargetMap())
        defended = compute_core_metrics(f, split, nk.patch_trigger(), nk.TargetMap(), StampSpec())
        filt = compute_filter_metrics(f, split, nk.patch_trigger(), StampSpec())
        pred = {
            "x": [table[(i, False, False)] for i in range(n)],
            "sx": [table[(i, True, False)] for i in range(n)],
            "px": [table[(i, False, True)] for i in range(n)],
            "spx": [table[(i, True, True)] for i in range(n)],
        }
        want = core_metrics_oracle(labels, [0] * n, pred["x"], pred["px"])
        assert (core.asr, core.ca, core.ba) == (want["asr"], want["ca"], want["ba"])
        want_defended = core_metrics_oracle(labels, [0] * n, pred["sx"], pred["spx"])
        assert (defended.asr, defended.ca, defended.ba) == (
            want_defended["asr"], want_defended["ca"], want_defended["ba"])
        want_filter = filter_metrics_oracle(labels, pred["x"], pred["sx"], pred["px"], pred["spx"])
        assert (filt.c_rej, filt.psr, filt.b_rej, filt.dsr) == (
            want_filter["c_rej"], want_filter["psr"], want_filter["b_rej"], want_filter["dsr"])
    elapsed = time.monotonic() - start
    check(1, elapsed < 10.0, f"1000 fixtures matched the brute-force oracle exactly in {elapsed:.1f}s")


def test_criterion_02_transform_oracle_equivalence():
    """500 randomized fixtures across mu and pseudo-label accuracy grids."""
    from conftest import make_split
    from nabkit.relabeling import PseudoLabelMap

    rng = np.random.default_rng(22)
    stamp = StampSpec()
    start = time.monotonic()
    grid = [(mu, pla) for mu in (0.0, 0.05, 0.2) for pla in (0.0, 0.5, 1.0)]
    for trial in range(500):
        mu, pla = grid[trial % len(grid)]
        n = int(rng.integers(1, 201))
        k = int(rng.integers(2, 7))
        split = make_split(n, class_count=k, seed=trial, size=6)
        count = round_count(mu * n)
        order = rng.permutation(n)
        suspected = frozenset(int(split.examples[i].id) for i in order[:count])
        scores = {ex.id: (1.0 if ex.id in suspected else 0.0) for ex in split}
        report = DetectionReport(suspected_ids=suspected, scores=scores,
                                 mu=max(mu, 1e-9), method="fixture")
        label_map = synthetic_pseudo_labels(split, split.ids, pla, seed=trial)
        nab = nk.nab_transform(split, report, label_map, stamp)
        expected = algorithm1_oracle(
            [(ex.id, ex.image, ex.label) for ex in split], suspected,
            label_map.assignments, stamp,
        )
        assert len(nab.split) == len(expected) == n
        for got, (ex_id, image, label, stamped) in zip(nab.split, expected):
            assert got.id == ex_id
            assert got.label == label
            assert np.array_equal(got.image, image)
            assert (got.id in nab.stamped_ids) == stamped
            if stamped:
                assert got.provenance == nk.Provenance.DEFENDER_STAMPED
    elapsed = time.monotonic() - start
    check(2, elapsed < 30.0, f"500 fixtures matched the transform oracle exactly in {elapsed:.1f}s")


def test_criterion_03_attack_effectiveness(attack_metrics, clean_baseline_ca):
    asr, ca = attack_metrics.asr, attack_metrics.ca
    ok = asr >= 95.0 and ca >= clean_baseline_ca - 3.0
    check(3, ok, f"no-defense ASR={asr:.2f} (>=95), CA={ca:.2f} "
                 f"(baseline {clean_baseline_ca:.2f}, drop <=3)")


def test_criterion_04_defense_with_controlled_components(
        desk_pair, badnets, nab_oracle_run, attack_metrics):
    _, _, trigger, target_map = badnets
    defended = compute_core_metrics(nab_oracle_run, desk_pair.test, trigger, target_map, StampSpec())
    ok = defended.asr <= 5.0 and defended.ca >= attack_metrics.ca - 3.0
    check(4, ok, f"oracle-NAB ASR={defended.asr:.2f} (<=5), CA={defended.ca:.2f} "
                 f"(no-defense CA {attack_metrics.ca:.2f}, drop <=3)")


def test_criterion_05_defense_with_real_components(desk_pair):
    config = parse_config({
        "seed": SEED,
        "dataset": {"name": "synthetic", "train_size": TRAIN_N, "test_size": TEST_N,
                    "class_count": CLASSES, "seed": SEED},
        "attack": {"trigger": {"kind": "patch"}, "poison_rate": 0.1},
        "defense": {
            "detection_rate": 0.05,
            "detector": {"name": "lga", "gamma": 0.5, "isolation_epochs": 20},
            "relabeler": {"name": "nc", "removal_rate": 0.2,
                          "recipe": "verified-supervised", "extractor_epochs": 20},
        },
        "training": {"epochs": EPOCHS, "seed": SEED},
        "evaluation": {"modes": ["defended"]},
    })
    result = run(config, write=False)
    asr = result.metrics["defended"].asr
    da = result.diagnostics["detection_accuracy"]
    ok = asr <= 10.0 and da >= 0.8
    check(5, ok, f"LGA+NC defended ASR={asr:.2f} (<=10), detection accuracy={da:.3f} (>=0.8)")


def test_criterion_06_filtering_effectiveness(desk_pair, badnets, nab_oracle_run):
    _, _, trigger, _ = badnets
    filt = compute_filter_metrics(nab_oracle_run, desk_pair.test, trigger, StampSpec())
    ok = filt.dsr >= 95.0 and filt.b_rej >= 90.0 and filt.c_rej <= 10.0
    check(6, ok, f"DSR={filt.dsr:.2f} (>=95), B-REJ={filt.b_rej:.2f} (>=90), "
                 f"C-REJ={filt.c_rej:.2f} (<=10)")


@pytest.fixture(scope="session")
def mu_lambda_cells():
    config = parse_config({
        "seed": SEED,
        "dataset": {"name": "synthetic", "train_size": TRAIN_N, "test_size": TEST_N,
                    "class_count": CLASSES, "seed": SEED},
        "attack": {"trigger": {"kind": "patch"}, "poison_rate": 0.1},
        "defense": {
            "detector": {"name": "spectre"},
            "relabeler": {"name": "nc", "removal_rate": 0.2,
                          "recipe": "verified-supervised", "extractor_epochs": 20},
        },
        "training": {"epochs": EPOCHS, "seed": SEED},
        "evaluation": {"modes": ["plain", "defended"]},
    })
    cells = sweep_mu_lambda(config, [0.0, 0.01, 0.05], [0.05, 0.1], write=False)
    return {(c.coords["mu"], c.coords["lambda"]): c for c in cells}


def test_criterion_07_mu_lambda_sweep_shape(mu_lambda_cells):
    no_defense = mu_lambda_cells[(0.0, 0.1)].result.metrics["plain"].asr
    matched = mu_lambda_cells[(0.05, 0.05)].result.metrics["defended"].asr
    starved = mu_lambda_cells[(0.01, 0.1)].result.metrics["defended"].asr
    ok = no_defense >= 95.0 and matched <= 5.0 and starved >= 30.0
    check(7, ok, f"mu=0: ASR={no_defense:.2f} (>=95); mu=lambda=0.05: ASR={matched:.2f} (<=5); "
                 f"mu=0.01,lambda=0.1: ASR={starved:.2f} (>=30)")


@pytest.fixture(scope="session")
def da_pla_cells():
    config = parse_config({
        "seed": SEED,
        "dataset": {"name": "synthetic", "train_size": TRAIN_N, "test_size": TEST_N,
                    "class_count": CLASSES, "seed": SEED},
        "attack": {"trigger": {"kind": "patch"}, "poison_rate": 0.1},
        "defense": {"detection_rate": 0.1},
        "training": {"epochs": EPOCHS, "seed": SEED},
        "evaluation": {"modes": ["defended"]},
    })
    cells = sweep_da_pla(config, [0.2, 1.0], [0.2, 1.0], write=False)
    return {(c.coords["da"], c.coords["pla"]): c for c in cells}


def test_criterion_08_da_pla_sweep_shape(da_pla_cells):
    asr_full = da_pla_cells[(1.0, 1.0)].result.metrics["defended"].asr
    asr_weak_da = da_pla_cells[(0.2, 1.0)].result.metrics["defended"].asr
    ca_full = da_pla_cells[(1.0, 1.0)].result.metrics["defended"].ca
    ca_weak_pla = da_pla_cells[(1.0, 0.2)].result.metrics["defended"].ca
    ok = asr_full <= asr_weak_da - 20.0 and ca_full >= ca_weak_pla
    check(8, ok, f"ASR(da=1)={asr_full:.2f} <= ASR(da=0.2)={asr_weak_da:.2f} - 20; "
                 f"CA(pla=1)={ca_full:.2f} >= CA(pla=0.2)={ca_weak_pla:.2f}")


def test_criterion_09_property_suites():
    from nabkit.config import render_config
    from nabkit.relabeling import compute_class_centers

    start = time.monotonic()
    rng = np.random.default_rng(99)
    # pixel range over all trigger kinds and the stamp
    for seed in range(8):
        img = rng.uniform(0, 1, size=(16, 16, 3)).astype(np.float32)
        for trig in (nk.patch_trigger(seed=seed), nk.blend_trigger(seed=seed),
                     nk.warp_trigger(seed=seed)):
            out = nk.apply_trigger(img, trig, per_sample_seed=seed)
            assert out.min() >= 0.0 and out.max() <= 1.0
        stamped = apply_stamp(img, StampSpec())
        assert np.array_equal(apply_stamp(stamped, StampSpec()), stamped)
        assert int(np.sum(stamped != img)) <= 4 * 3
        patched = nk.apply_trigger(img, nk.patch_trigger())
        mask = np.ones_like(img, dtype=bool)
        mask[-3:, -3:, :] = False
        assert np.array_equal(patched[mask], img[mask])

    # clean-label epsilon bound
    class Surrogate:
        is_trained = True

        def input_gradient(self, imgs, labels):
            return rng.normal(size=imgs.shape).astype(np.float32)

    img = rng.uniform(0, 1, size=(12, 12, 3)).astype(np.float32)
    adv = nk.craft_clean_label(Surrogate(), img, 0, 32 / 255, 10)
    assert np.abs(adv.astype(np.float64) - img).max() <= 32 / 255 + 1e-9

    # detector report sizing with id tie-breaking
    scores = {i: float(rng.integers(0, 3)) for i in range(137)}
    report = DetectionReport.from_scores(scores, mu=0.11, method="t")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    assert report.suspected_ids == frozenset(i for i, _ in ranked[:round_count(0.11 * 137)])

    # nearest-center order invariance
    feats = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, size=30)
    ids = np.arange(30)
    perm = rng.permutation(30)
    a = compute_class_centers(feats, labels, ids, set(range(30)))
    b = compute_class_centers(feats[perm], labels[perm], ids[perm], set(range(30)))
    assert all(np.array_equal(a.centers[c], b.centers[c]) for c in a.centers)

    # seed determinism of every transform
    split = nk.make_synthetic(40, 10, 4, seed=3).train
    assert nk.subsample(split, 0.5, 7).ids == nk.subsample(split, 0.5, 7).ids
    p1, m1 = nk.poison_dataset(split, nk.patch_trigger(), nk.TargetMap(), 0.2, 5)
    p2, m2 = nk.poison_dataset(split, nk.patch_trigger(), nk.TargetMap(), 0.2, 5)
    assert m1.poisoned_ids == m2.poisoned_ids
    assert all(np.array_equal(x.image, y.image) for x, y in zip(p1, p2))
    w = nk.warp_trigger(seed=5)
    img32 = split.examples[0].image
    assert np.array_equal(nk.apply_trigger(img32, w, 3), nk.apply_trigger(img32, w, 3))

    # config round trip
    config = parse_config({"seed": 5, "attack": {"trigger": {"kind": "blend"}}})
    assert parse_config(render_config(config)) == config

    elapsed = time.monotonic() - start
    check(9, elapsed < 60.0, f"property suites green in {elapsed:.1f}s")


def test_criterion_10_all_to_all(desk_pair):
    trigger = nk.patch_trigger()
    target_map = nk.TargetMap(mode=nk.TargetMode.ALL_TO_ALL)
    dp, manifest = nk.poison_dataset(desk_pair.train, trigger, target_map, 0.1, seed=SEED)

    plain_result = nk.train(dp, nk.TrainConfig(epochs=EPOCHS, seed=SEED))
    plain = compute_core_metrics(plain_result.classifier, desk_pair.test, trigger, target_map)

    report = detect_oracle(dp, manifest, mu=0.1, da=1.0, seed=SEED)
    labels = synthetic_pseudo_labels(dp, dp.ids, pla=1.0, seed=SEED, truth=desk_pair.train)
    nab = nk.nab_transform(dp, report, labels, StampSpec())
    nab_result = nk.train(nab.split, nk.TrainConfig(epochs=EPOCHS, seed=SEED))
    defended = compute_core_metrics(nab_result.classifier, desk_pair.test, trigger,
                                    target_map, StampSpec())
    ok = plain.asr >= 80.0 and defended.asr <= 8.0
    check(10, ok, f"all-to-all no-defense ASR={plain.asr:.2f} (>=80), "
                  f"oracle-NAB ASR={defended.asr:.2f} (<=8)")
