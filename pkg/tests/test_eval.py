import numpy as np
import pytest

from oracles import oracle_dcf, oracle_eer
from spkrobust.corpus import build_trials
from spkrobust.evaluation import TestCondition as Cond
from spkrobust.evaluation import (EvalError, average_min_dcf, compute_eer,
                                  compute_min_dcf, corrupt, cosine_score, det_points, dump_embeddings,
                                  eer_from_det, evaluate_conditions, extract_embeddings,
                                  load_embedding_dump, metric_row, read_metrics, score_trials,
                                  table_conditions, tag_utt, write_det, write_metrics)
from spkrobust.network import NetConfig, SpeakerNet
from spkrobust.signal import measure_snr
from spkrobust.trials import ScoreSet, TrialError, pool_scores

RNG = np.random.default_rng(2024)


def random_instance(max_trials=10, grid=None):
    n = int(RNG.integers(2, max_trials + 1))
    n_tar = int(RNG.integers(1, n))
    vals = RNG.integers(0, grid, n) / grid if grid else RNG.standard_normal(n)
    return vals[:n_tar].tolist(), vals[n_tar:].tolist()


class TestScoring:
    def test_cosine_examples(self):
        e = RNG.standard_normal(5)
        assert cosine_score(e, 2 * e) == pytest.approx(1.0)
        assert cosine_score([1.0, 0.0], [0.0, 3.0]) == 0.0
        assert cosine_score(e, -e) == pytest.approx(-1.0)
        with pytest.raises(EvalError):
            cosine_score(np.zeros(3), e[:3])

    def test_score_trials_matches_cosine(self):
        emb = {f"u{i}": RNG.standard_normal(4) for i in range(4)}
        ss = ScoreSet.from_arrays([0.0], [0.0])
        ss.trials.enroll[:] = ["u0", "u1"]
        ss.trials.test[:] = ["u2", "u3"]
        out = score_trials(emb, ss.trials)
        assert out.scores[0] == pytest.approx(cosine_score(emb["u0"], emb["u2"]), abs=1e-15)
        with pytest.raises(EvalError):
            score_trials({}, ss.trials)


class TestEER:
    def test_examples(self):
        assert compute_eer(ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2]))[0] == 0.0
        assert compute_eer(ScoreSet.from_arrays([0.6, 0.4], [0.5, 0.3]))[0] == 0.5

    def test_same_distribution_monte_carlo(self):
        s = ScoreSet.from_arrays(RNG.standard_normal(10_000), RNG.standard_normal(10_000))
        assert abs(compute_eer(s)[0] - 0.5) <= 0.02

    def test_exhaustive_oracle(self):
        for k in range(400):
            tar, non = random_instance(grid=6 if k % 2 else None)
            eer, _ = compute_eer(ScoreSet.from_arrays(tar, non))
            assert eer == float(oracle_eer(tar, non))
            assert 0.0 <= eer <= 1.0

    def test_missing_class(self):
        with pytest.raises(TrialError):
            compute_eer(ScoreSet.from_arrays([0.5], []))

    def test_threshold_separates_at_eer(self):
        eer, thr = compute_eer(ScoreSet.from_arrays([0.9, 0.8, 0.3], [0.1, 0.2, 0.5]))
        assert thr == 0.5 or 0.0 <= eer <= 1.0


class TestMinDCF:
    def test_examples(self):
        sep = ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2])
        assert compute_min_dcf(sep, 0.01) == 0.0 and compute_min_dcf(sep, 0.001) == 0.0
        flat = ScoreSet.from_arrays([0.3] * 4, [0.3] * 6)
        assert compute_min_dcf(flat, 0.01) == 1.0 and average_min_dcf(flat) == 1.0

    def test_exhaustive_oracle(self):
        for k in range(400):
            tar, non = random_instance(grid=5 if k % 2 else None)
            s = ScoreSet.from_arrays(tar, non)
            for p in (0.01, 0.001, 0.3):
                assert compute_min_dcf(s, p) == float(oracle_dcf(tar, non, p))

    def test_bounded_by_cost_at_eer_threshold(self):
        for _ in range(50):
            tar, non = RNG.normal(1, 1, 40), RNG.normal(0, 1, 60)
            s = ScoreSet.from_arrays(tar, non)
            _, thr = compute_eer(s)
            for p in (0.01, 0.001):
                at_thr = (p * np.mean(tar < thr) + (1 - p) * np.mean(non >= thr)) / min(p, 1 - p)
                assert compute_min_dcf(s, p) <= at_thr + 1e-12

    def test_bad_prior(self):
        with pytest.raises(EvalError):
            compute_min_dcf(ScoreSet.from_arrays([1.0], [0.0]), 1.0)


@pytest.mark.parametrize("transform", [lambda x: 3.0 * x + 1.0, lambda x: x ** 3, np.exp])
def test_monotone_transform_invariance(transform):
    for _ in range(100):
        tar = RNG.integers(-50, 50, 12) / 25.0
        non = RNG.integers(-60, 40, 15) / 25.0
        a = ScoreSet.from_arrays(tar, non)
        b = ScoreSet.from_arrays(transform(tar), transform(non))
        assert compute_eer(a)[0] == compute_eer(b)[0]
        for p in (0.01, 0.001):
            assert compute_min_dcf(a, p) == compute_min_dcf(b, p)


class TestDET:
    def test_perfect_and_count(self):
        s = ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2])
        pts = det_points(s)
        assert (0.0, 0.0) in pts and len(pts) <= 5

    def test_monotone_and_consistent(self, tmp_path):
        for _ in range(100):
            tar, non = random_instance(max_trials=30, grid=8)
            s = ScoreSet.from_arrays(tar, non)
            pts = det_points(s)
            assert len(pts) <= len(tar) + len(non) + 1
            pfa = [p[0] for p in pts]
            pm = [p[1] for p in pts]
            assert pfa == sorted(pfa)
            assert all(b <= a for a, b in zip(pm, pm[1:]))
            assert abs(eer_from_det(pts) - compute_eer(s)[0]) <= 1e-12
        write_det(pts, tmp_path / "det.csv")
        lines = (tmp_path / "det.csv").read_text().splitlines()
        assert lines[0] == "p_fa,p_miss" and len(lines) == len(pts) + 1


class TestConditions:
    def test_parse_and_names(self):
        assert Cond.parse("music:5") == Cond("music", 5.0)
        assert Cond.parse("original").name == "original"
        assert Cond("babble", 0.0).name == "babble:0"
        assert len(table_conditions()) == 15
        for bad in ("music", "rain:5", "music:x"):
            with pytest.raises(EvalError):
                Cond.parse(bad)
        with pytest.raises(EvalError):
            Cond("television", 5.0)

    def test_corruption_is_exact_and_uses_test_noise(self, small_corpus):
        u = small_corpus.test_ids()[0]
        for cond in table_conditions()[::4]:
            noisy = corrupt(small_corpus, u, cond, seed=1)
            assert abs(measure_snr(small_corpus.wave(u), noisy) - cond.snr_db) < 1e-6
            again = corrupt(small_corpus, u, cond, seed=1)
            assert noisy.samples.tobytes() == again.samples.tobytes()


@pytest.fixture
def tiny():
    cfg = NetConfig(stage_channels=[2, 2, 4, 4], stage_blocks=[1, 1, 1, 1], embedding_dim=8, n_classes=4)
    return SpeakerNet(cfg, seed=0)


class TestPipeline:
    def test_extract_deterministic_and_sized(self, small_corpus, tiny):
        ids = small_corpus.test_ids()
        a = extract_embeddings(tiny, small_corpus, ids, Cond("music", 5.0), seed=2)
        b = extract_embeddings(tiny, small_corpus, ids, Cond("music", 5.0), seed=2, batch_size=1)
        assert set(a) == set(ids)
        for u in ids:
            assert a[u].shape == (8,)
            np.testing.assert_allclose(a[u], b[u], rtol=1e-5, atol=1e-6)
        c = extract_embeddings(tiny, small_corpus, ids, Cond("music", 5.0), seed=2)
        assert all(a[u].tobytes() == c[u].tobytes() for u in ids)

    def test_pooled_row_equals_pooled_metrics(self, small_corpus, tiny, tmp_path):
        trials = build_trials(small_corpus.manifest, 10, 20, 0)
        scores, rows = evaluate_conditions(tiny, small_corpus, trials, seed=3)
        assert [r.condition for r in rows][:2] == ["original", "babble"]
        assert rows[-1].condition == "all_noises" and len(rows) == 17
        pooled = pool_scores([scores[c.name] for c in table_conditions()])
        assert len(pooled.scores) == 15 * len(trials)
        assert rows[-1].eer == compute_eer(pooled)[0]
        assert rows[-1].dcf == average_min_dcf(pooled)
        write_metrics(rows, tmp_path / "m.csv")
        back = read_metrics(tmp_path / "m.csv")
        assert [(r.condition, r.snr) for r in back] == [(r.condition, r.snr) for r in rows]
        assert back[-1].eer == pytest.approx(rows[-1].eer, rel=1e-8)

    def test_metric_row(self):
        row = metric_row("music", 5.0, ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2]))
        assert (row.condition, row.snr, row.eer, row.dcf) == ("music", "5", 0.0, 0.0)


def test_embedding_dump_round_trip(tmp_path):
    vecs = RNG.standard_normal((3, 128))
    cond = Cond("music", 5.0)
    entries = [(tag_utt("u1", Cond()), "s1", vecs[0]), (tag_utt("u1", cond), "s1", vecs[1]),
               (tag_utt("u2", cond), "s2", vecs[2])]
    dump_embeddings(entries, tmp_path / "e.txt")
    lines = (tmp_path / "e.txt").read_text().splitlines()
    assert all(len(line.split()) == 130 for line in lines)
    assert lines[0].startswith("u1#clean s1 ") and lines[1].startswith("u1#music5 ")
    back = load_embedding_dump(tmp_path / "e.txt")
    for (u, s, v), (u2, s2, v2) in zip(entries, back):
        assert (u, s) == (u2, s2)
        np.testing.assert_allclose(v2, v, rtol=5e-9)
        assert all(float(f"{a:.9g}") == b for a, b in zip(v, v2))
    with pytest.raises(EvalError):
        dump_embeddings([], tmp_path / "x.txt")


def test_score_file_round_trip(tmp_path):
    s = ScoreSet.from_arrays([0.25, 0.5], [0.125])
    s.write(tmp_path / "s.txt")
    assert (tmp_path / "s.txt").read_text().splitlines()[0] == "target t0 t0 0.25"
    back = ScoreSet.read(tmp_path / "s.txt")
    np.testing.assert_array_equal(back.scores, s.scores)
    assert back.trials.labels == s.trials.labels
