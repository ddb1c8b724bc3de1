"""Acceptance suite: one test per criterion, printing one PASS line each.

The CUB-golden halves of the skip-rate and oracle criteria need the real
annotation files; point VLTABOO_CUB_ROOT at a CUB-2011 directory to enable
them. Their synthetic halves always run.
"""

from __future__ import annotations

import json
import os
import random
import time

import numpy as np
import pytest

from helpers import (
    disjoint_profile_dataset,
    enumeration_oracle,
    fast_term_counts,
    make_dataset,
    naive_skip_count,
)

from vltaboo.backends import MockBackend, MockStructure, l2_normalize, normalize_rows
from vltaboo.corpus import build_matcher_for_labels, count_corpus, generate_terms
from vltaboo.detection import calibrate_from_similarities, mean_kept
from vltaboo.prompts import PromptGrammar
from vltaboo.runner import load_run_config, run
from vltaboo.scoring import run_setup, softmax
from vltaboo.setups import (
    PREFIX_NESTED,
    S1,
    S2,
    S3,
    S4,
    S5,
    SetupSpec,
    build_skip_ledger,
    oracle_accuracy,
    skip_rate,
)

CUB_ROOT = os.environ.get("VLTABOO_CUB_ROOT")
CUB_SKIP_RATES = [0.0282, 0.0328, 0.0364, 0.0394, 0.0418, 0.0436, 0.046]
CUB_ORACLE = {1: 0.0268, 7: 0.9127}

GRAMMAR = PromptGrammar(kind="awa2_comma_list", base_noun="animal")


def report(criterion: str, detail: str) -> None:
    print(f"{criterion} PASS  {detail}")


@pytest.fixture(scope="module")
def cub_dataset():
    if not CUB_ROOT:
        pytest.skip("set VLTABOO_CUB_ROOT to run the CUB golden checks")
    from vltaboo.datasets import load_cub

    start = time.perf_counter()
    dataset = load_cub(CUB_ROOT)
    load_seconds = time.perf_counter() - start
    assert len(dataset.images) == 11788
    assert dataset.n_classes == 200
    assert dataset.n_attributes == 312
    return dataset, load_seconds


class TestP1SkipRates:
    def test_synthetic_skip_rates_match_naive_counting(self):
        rng = np.random.default_rng(42)
        n_attrs = 9
        attr_counts = rng.integers(0, n_attrs, size=1000)
        ds = make_dataset(
            labels=[f"c{i}" for i in range(10)],
            attributes=[(f"a{i}", "") for i in range(n_attrs)],
            images=[
                (int(rng.integers(0, 10)), tuple(range(count)))
                for count in attr_counts
            ],
            profiles=[tuple(range(n_attrs)) for _ in range(10)],
        )
        ledger = build_skip_ledger(ds, range(0, n_attrs + 1))
        for x in range(0, n_attrs + 1):
            expected = naive_skip_count(ds, x) / 1000
            assert skip_rate(ds, x) == expected
            assert ledger.rate(x) == expected
        report("P1", "synthetic skip rates equal the naive counting oracle exactly")

    @pytest.mark.skipif(not CUB_ROOT, reason="VLTABOO_CUB_ROOT not set")
    def test_cub_skip_rates_match_published_values(self, cub_dataset):
        dataset, load_seconds = cub_dataset
        start = time.perf_counter()
        rates = [skip_rate(dataset, x) for x in range(1, 8)]
        elapsed = time.perf_counter() - start
        for x, (got, expected) in enumerate(zip(rates, CUB_SKIP_RATES), start=1):
            assert abs(got - round(expected, 4)) <= 1e-4 + 5e-5, (x, got, expected)
        assert load_seconds + elapsed < 10.0
        report("P1", f"CUB skip rates x=1..7 match the golden table ({elapsed:.2f}s)")


class TestP2Oracle:
    def test_monte_carlo_matches_exhaustive_enumeration(self):
        datasets = [
            make_dataset(
                labels=["P", "Q", "R", "T", "U"],
                attributes=[(f"a{i}", "") for i in range(6)],
                images=[
                    (0, (0, 1, 2)), (1, (1, 2, 3)), (2, (2, 3, 4)),
                    (3, (3, 4, 5)), (4, (0, 4, 5)), (0, (0, 1, 2, 3)),
                ],
                profiles=[(0, 1, 2), (1, 2, 3), (2, 3, 4), (3, 4, 5), (0, 4, 5)],
            ),
            make_dataset(
                labels=["P", "Q", "R"],
                attributes=[(f"a{i}", "") for i in range(5)],
                images=[(0, (0, 1, 2, 3)), (1, (1, 2, 3, 4)), (2, (0, 2, 3, 4))],
                profiles=[(0, 1, 2, 3), (1, 2, 3, 4), (0, 2, 3, 4)],
            ),
        ]
        for i, ds in enumerate(datasets):
            for x in (1, 2, 3):
                exact = enumeration_oracle(ds, x)
                estimate = oracle_accuracy(ds, x, trials_seed=7, trials=4000)
                assert estimate == pytest.approx(exact, abs=0.02), (i, x)
        report("P2", "Monte-Carlo oracle matches exhaustive enumeration on synthetics")

    @pytest.mark.skipif(not CUB_ROOT, reason="VLTABOO_CUB_ROOT not set")
    def test_cub_oracle_matches_published_values(self, cub_dataset):
        dataset, _ = cub_dataset
        start = time.perf_counter()
        for x, expected in CUB_ORACLE.items():
            got = oracle_accuracy(dataset, x, trials_seed=2024)
            assert got == pytest.approx(expected, abs=0.01), (x, got)
        elapsed = time.perf_counter() - start
        assert elapsed < 120.0
        report("P2", f"CUB oracle at x=1 and x=7 within +/-0.01 ({elapsed:.1f}s)")


def _planted_corpus(tmp_path, target_bytes=10 * 1024 * 1024, n_labels=500):
    rng = random.Random(20260809)
    filler = [
        "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(rng.randint(3, 9)))
        for _ in range(2500)
    ]
    label_words = sorted({rng.choice(filler) for _ in range(900)})[: n_labels + 60]
    labels = []
    for i, word in enumerate(label_words):
        if len(labels) >= n_labels:
            break
        if i % 11 == 0 and i + 1 < len(label_words):
            labels.append(f"{word}, {label_words[i + 1]}")  # synonym pair
        elif i % 7 == 0:
            labels.append(f"{word} {rng.choice(filler)}")  # multi-word label
        else:
            labels.append(word)
    suffixes = ["", ".", "!", "?", ",", ";", ":", "-", "s", "es.", "s,", "xx"]
    lines = []
    size = 0
    while size < target_bytes:
        words = [rng.choice(filler) + rng.choice(suffixes) for _ in range(rng.randint(3, 12))]
        line = " ".join(words)
        lines.append(line)
        size += len(line) + 1
    path = tmp_path / "corpus.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return labels[:n_labels], path


class TestP3CorpusCounter:
    def test_automaton_equals_naive_scan_and_shard_invariance(self, tmp_path):
        labels, path = _planted_corpus(tmp_path)
        assert len(labels) == 500
        matcher = build_matcher_for_labels(labels)

        start = time.perf_counter()
        table = count_corpus(matcher, path, shards=1)
        automaton_seconds = time.perf_counter() - start
        assert automaton_seconds < 5.0, f"automaton pass took {automaton_seconds:.2f}s"

        expected_samples, expected_hits = fast_term_counts(labels, path.read_bytes())
        assert list(table.samples_matched) == expected_samples
        assert list(table.term_hits) == expected_hits
        assert sum(expected_hits) > 10_000  # the corpus genuinely exercises matching

        for shards in (4, 16):
            assert count_corpus(matcher, path, shards=shards) == table
        report(
            "P3",
            f"10MB corpus: automaton == naive scan exactly, shard-invariant "
            f"({automaton_seconds:.2f}s, {sum(expected_hits)} hits)",
        )


class TestP4SearchTerms:
    def test_term_counts_and_subword_adversary(self):
        zoo = ["cat", "tub, vat", "black and gold garden spider", "a",
               "ear, spike, capitulum", "Great Dane"]
        for label in zoo:
            term_set = generate_terms(label)
            n_synonyms = len(label.split(", "))
            assert len(term_set.terms) == 24 * n_synonyms, label
            assert len(set(term_set.terms)) == len(term_set.terms)

        matcher = build_matcher_for_labels(["cat", "catbird"])
        from vltaboo.corpus import count_captions

        adversarial = [
            "the catbird seat",
            "catbirds everywhere",
            "a catbird.",
            "concatenate catalogs",
            "catbird",
        ]
        table = count_captions(matcher, adversarial)
        assert table.occurrence("cat") == 0
        assert table.occurrence("catbird") == 4
        report("P4", "24 terms per synonym; 'cat' never fires inside 'catbird'")


class TestP5SetupSemantics:
    def test_separable_mock_is_perfect_everywhere(self):
        ds = disjoint_profile_dataset(n_classes=4, attrs_per_class=3, images_per_class=3)
        backend = MockBackend(
            ds,
            MockStructure(class_weight=10.0, attribute_weight=1.0, noise_weight=0.0, seed=5),
            dim=32768,
        )
        checked = 0
        for setup in (S1, S2, S3, S4, S5):
            xs = (0, 1, 2, 3) if setup in (S1, S2, S3) else (1, 2, 3)
            for x in xs:
                spec = SetupSpec(setup=setup, x=x, grammar=GRAMMAR, seed=1234)
                assert run_setup(ds, backend, spec).accuracy == 1.0, (setup, x)
                checked += 1
        report("P5", f"separable mock scores 1.0 on all {checked} (setup, x) cells")

    def test_attribute_only_s4_above_chance_and_monotone(self):
        n_attrs, k = 10, 6
        profiles = [tuple((c * 2 + j) % n_attrs for j in range(k)) for c in range(4)]
        ds = make_dataset(
            labels=[f"species {c}" for c in range(4)],
            attributes=[(f"trait {a}", "") for a in range(n_attrs)],
            images=[(c, profiles[c]) for c in range(4) for _ in range(60)],
            profiles=profiles,
        )
        backend = MockBackend(
            ds,
            MockStructure(class_weight=0.0, attribute_weight=1.0, noise_weight=0.0, seed=13),
            dim=256,
        )
        accuracies = [
            run_setup(
                ds, backend,
                SetupSpec(setup=S4, x=x, grammar=GRAMMAR, seed=21,
                          attribute_order=PREFIX_NESTED),
            ).accuracy
            for x in (1, 2, 3, 4, 5)
        ]
        assert accuracies[0] > 0.25
        assert all(b >= a for a, b in zip(accuracies, accuracies[1:]))
        assert accuracies[-1] > accuracies[0]
        report(
            "P5",
            "attribute-only S4 rises monotonically: "
            + " -> ".join(f"{a:.3f}" for a in accuracies),
        )


class TestP6NumericalInvariants:
    def test_unit_norms(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            v = rng.normal(size=rng.integers(2, 300)) * 10.0 ** float(rng.integers(-3, 4))
            if np.linalg.norm(v) == 0:
                continue
            assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) <= 1e-6
        matrix = rng.normal(size=(200, 64))
        assert np.max(np.abs(np.linalg.norm(normalize_rows(matrix), axis=1) - 1.0)) <= 1e-6

        ds = disjoint_profile_dataset(n_classes=3, attrs_per_class=4, images_per_class=2)
        backend = MockBackend(
            ds, MockStructure(class_weight=1.0, attribute_weight=0.7,
                              noise_weight=0.5, seed=8), dim=128,
        )
        vectors = backend.embed_images([i.image_id for i in ds.images])
        assert np.max(np.abs(np.linalg.norm(vectors, axis=1) - 1.0)) <= 1e-6
        report("P6", "all normalized vectors unit within 1e-6")

    def test_softmax_and_argmax_shift_invariance_over_10000_galleries(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            sims = rng.normal(scale=rng.uniform(0.1, 30), size=rng.integers(2, 60))
            shift = float(rng.normal(scale=100))
            probs = softmax(sims)
            shifted = softmax(sims + shift)
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert abs(shifted.sum() - 1.0) <= 1e-9
            assert int(np.argmax(probs)) == int(np.argmax(shifted))
        report("P6", "softmax rows sum to 1 and argmax is shift-invariant (10,000 galleries)")


class TestP7Determinism:
    def test_two_runs_produce_identical_bundles(self, tmp_path):
        from helpers import disjoint_profile_dataset
        from vltaboo.datasets import save_dataset

        ds = disjoint_profile_dataset(n_classes=3, attrs_per_class=3, images_per_class=4)
        ds_path = tmp_path / "dataset.ndjson"
        save_dataset(ds, ds_path)
        cfg_path = tmp_path / "run.ini"
        cfg_path.write_text(
            "\n".join(
                [
                    "[dataset]", "kind = canonical", f"root = {ds_path}",
                    "[backend]", "kind = mock", "model = mock-acceptance",
                    "dim = 512", "seed = 5", "class_weight = 4.0",
                    "attribute_weight = 1.0", "noise_weight = 0.25",
                    "[run]", "setups = S1,S2,S3,S4,S5", "x = 0..2", "seed = 99",
                    "[output]", f"dir = {tmp_path / 'a'}",
                ]
            )
            + "\n",
            encoding="utf-8",
        )
        run(load_run_config(cfg_path))
        run(load_run_config(cfg_path, {"output.dir": str(tmp_path / "b")}))

        files_a = sorted(
            p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()
        )
        files_b = sorted(
            p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file()
        )
        assert files_a == files_b
        compared = 0
        for rel in files_a:
            a_bytes = (tmp_path / "a" / rel).read_bytes()
            b_bytes = (tmp_path / "b" / rel).read_bytes()
            if rel.name == "manifest.json":
                a = json.loads(a_bytes)
                b = json.loads(b_bytes)
                a.pop("created_utc"), b.pop("created_utc")
                assert a == b
            else:
                assert a_bytes == b_bytes, rel
                compared += 1
        report("P7", f"rerun bundle byte-identical ({compared} files, timestamps manifest-only)")


class TestP8Calibration:
    def test_calibration_against_exhaustive_sweep(self):
        import math

        def brute_force(pools, target, resolution=1e-4):
            top = max((max(p) for p in pools if p), default=0.0)
            steps = int(math.floor(round((top + resolution) / resolution, 6)))
            for k in range(steps, -int(1 / resolution), -1):
                cutoff = k * resolution
                if mean_kept(pools, cutoff) >= target:
                    return cutoff
            raise AssertionError("unreachable target")

        rng = np.random.default_rng(101)
        for _ in range(60):
            pools = [
                sorted(rng.uniform(-0.6, 0.9, size=rng.integers(1, 7)).round(3))
                for _ in range(rng.integers(1, 5))
            ]
            total = sum(len(p) for p in pools)
            target = float(rng.uniform(0.4, total / len(pools)))
            assert calibrate_from_similarities(pools, target) == pytest.approx(
                brute_force(pools, target), abs=1e-9
            )
        report("P8", "calibrated cutoffs equal the exhaustive grid sweep (60 fixtures)")

    def test_monotonicity_over_1000_random_fixtures(self):
        rng = np.random.default_rng(202)
        resolution = 1e-4
        checked = 0
        for _ in range(1000):
            pools = [
                rng.uniform(-0.99, 0.99, size=rng.integers(0, 9)).tolist()
                for _ in range(rng.integers(1, 6))
            ]
            cutoffs = np.sort(rng.uniform(-1, 1, size=5))
            means = [mean_kept(pools, c) for c in cutoffs]
            assert all(a >= b for a, b in zip(means, means[1:]))
            total = sum(len(p) for p in pools)
            if total:
                target = float(rng.uniform(0.1, total / len(pools)))
                cutoff = calibrate_from_similarities(pools, target)
                assert mean_kept(pools, cutoff) >= target
                assert mean_kept(pools, cutoff + resolution) < target
                checked += 1
        report("P8", f"mean-kept monotone and cutoff maximal on {checked} random fixtures")
