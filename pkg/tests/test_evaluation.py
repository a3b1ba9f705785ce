from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdkt import data as D
from mdkt import evaluation as E
from mdkt import model as M
from mdkt.errors import ShapeError, UndefinedMetricError


def naive_metrics(q_reps, g_reps, q_ids, q_cams, g_ids, g_cams, ks):
    """Loop-based ranking and metrics; returns (cmc per k, mAP, skipped) or None if all skipped."""
    first_hits, aps, skipped = [], [], 0
    for q in range(len(q_reps)):
        entries = []
        for g in range(len(g_reps)):
            if g_ids[g] == q_ids[q] and g_cams[g] == q_cams[q]:
                continue
            d = sum((a - b) ** 2 for a, b in zip(q_reps[q], g_reps[g])) ** 0.5
            entries.append((d, g))
        entries.sort()
        flags = [g_ids[g] == q_ids[q] for _, g in entries]
        if not any(flags):
            skipped += 1
            continue
        first_hits.append(flags.index(True) + 1)
        hits, total = 0, 0.0
        for r, f in enumerate(flags, start=1):
            if f:
                hits += 1
                total += hits / r
        aps.append(total / hits)
    if not aps:
        return None
    return [sum(h <= k for h in first_hits) / len(first_hits) for k in ks], sum(aps) / len(aps), skipped


def results_from_ranks(first_ranks, length=6):
    res = E.RankingResult(n_queries=len(first_ranks))
    for r in first_ranks:
        m = np.zeros(length, dtype=bool)
        m[r - 1] = True
        res.matches.append(m)
        res.orders.append(np.arange(length))
    return res


class TestRank:
    def test_hand_sort(self):
        gallery = np.array([[0.0], [3.0], [1.0]])
        queries = np.array([[0.9], [2.6]])
        res = E.rank(queries, gallery, [1, 2], [0, 0], [1, 2, 1], [1, 1, 1])
        assert res.orders[0].tolist() == [2, 0, 1]
        assert res.orders[1].tolist() == [1, 2, 0]
        assert res.matches[0].tolist() == [True, True, False]

    def test_tie_lower_index_first(self):
        gallery = np.array([[1.0], [-1.0], [1.0]])
        res = E.rank(np.array([[0.0]]), gallery, [0], [0], [0, 1, 2], [1, 1, 1])
        assert res.orders[0].tolist() == [0, 1, 2]

    def test_duplicate_ranks_first(self):
        rng = np.random.default_rng(0)
        gallery = rng.normal(size=(6, 4))
        res = E.rank(gallery[3:4], gallery, [7], [0], [1, 2, 3, 7, 4, 5], [1] * 6)
        assert res.orders[0][0] == 3

    def test_same_camera_excluded(self):
        gallery = np.array([[0.0], [5.0], [9.0]])
        res = E.rank(np.array([[0.0]]), gallery, [1], [0], [1, 1, 2], [0, 1, 0])
        assert res.orders[0].tolist() == [1, 2]
        res = E.rank(np.array([[0.0]]), gallery, [1], [0], [1, 1, 2], [0, 1, 0], exclude_same_camera=False)
        assert res.orders[0].tolist() == [0, 1, 2]

    def test_skipped_query(self):
        gallery = np.array([[0.0], [1.0]])
        res = E.rank(np.array([[0.0], [1.0]]), gallery, [1, 2], [0, 0], [1, 2], [0, 1])
        assert res.n_skipped == 1 and len(res.matches) == 1

    def test_all_skipped(self):
        res = E.rank(np.array([[0.0]]), np.array([[0.0]]), [1], [0], [1], [0])
        with pytest.raises(UndefinedMetricError):
            E.cmc(res, 1)
        with pytest.raises(UndefinedMetricError):
            E.mean_average_precision(res)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            E.rank(np.zeros((1, 2)), np.zeros((3, 3)), [0], [0], [0, 1, 2], [1, 1, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.floats(0.01, 100))
    def test_scale_invariant_order(self, seed, c):
        rng = np.random.default_rng(seed)
        q, g = rng.normal(size=(3, 4)), rng.normal(size=(8, 4))
        meta = ([0, 1, 2], [0, 0, 0], rng.integers(0, 3, 8), rng.integers(0, 2, 8))
        a = E.rank(q, g, *meta)
        b = E.rank(c * q, c * g, *meta)
        assert [o.tolist() for o in a.orders] == [o.tolist() for o in b.orders]


class TestMetrics:
    def test_cmc_hand_count(self):
        res = results_from_ranks([1, 2, 5])
        assert E.cmc(res, 1) == pytest.approx(1 / 3)
        assert E.cmc(res, 2) == pytest.approx(2 / 3)
        assert E.cmc(res, 5) == 1.0

    def test_cmc_all_top1(self):
        assert E.cmc(results_from_ranks([1, 1, 1]), 1) == 1.0

    def test_ap_cases(self):
        assert E.average_precision([True, True, False, False, False]) == 1.0
        assert E.average_precision([False, False, True, False]) == pytest.approx(1 / 3)
        assert E.average_precision([True, False, True]) == pytest.approx((1 + 2 / 3) / 2)

    def test_cmc_bad_k(self):
        with pytest.raises(ValueError):
            E.cmc(results_from_ranks([1]), 0)

    def test_random_instances_match_naive(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n_g, n_q = int(rng.integers(2, 11)), int(rng.integers(1, 5))
            g_reps = rng.integers(-2, 3, size=(n_g, 2)).astype(float)
            q_reps = rng.integers(-2, 3, size=(n_q, 2)).astype(float)
            g_ids, g_cams = rng.integers(0, 3, n_g), rng.integers(0, 2, n_g)
            q_ids, q_cams = rng.integers(0, 3, n_q), rng.integers(0, 2, n_q)
            expected = naive_metrics(q_reps, g_reps, q_ids, q_cams, g_ids, g_cams, range(1, 11))
            res = E.rank(q_reps, g_reps, q_ids, q_cams, g_ids, g_cams)
            if expected is None:
                with pytest.raises(UndefinedMetricError):
                    E.mean_average_precision(res)
                continue
            cmcs, m_ap, skipped = expected
            got = [E.cmc(res, k) for k in range(1, 11)]
            assert got == pytest.approx(cmcs, abs=1e-12)
            assert E.mean_average_precision(res) == pytest.approx(m_ap, abs=1e-12)
            assert res.n_skipped == skipped
            assert all(x <= y for x, y in zip(got, got[1:]))
            assert 0.0 <= E.mean_average_precision(res) <= got[-1] == 1.0


@pytest.fixture(scope="module")
def small_ds():
    return D.generate(D.DatasetConfig(n_train_ids=4, n_test_ids=5, n_cameras=3, frames_per_clip=4,
                                      clips_per_id_per_camera=2, latent_dim=4, frame_dim=8, seed=1))


@pytest.fixture(scope="module")
def small_net():
    return M.init(M.ModelConfig(layer_dims=(8, 6, 4), n_classes=4, init_seed=2))


class TestEvaluate:
    def test_extract_gallery(self, small_ds, small_net):
        frames = small_ds.frames[small_ds.indices(D.TEST)]
        a, b = E.extract_gallery(small_net, frames), E.extract_gallery(small_net, frames)
        assert a.shape == (len(frames), 4)
        assert a.tobytes() == b.tobytes()
        same = np.repeat(frames[:1, :1], 4, axis=1)
        np.testing.assert_allclose(E.extract_gallery(small_net, same)[0],
                                   M.embed_frames(small_net, frames[0, :1]).data[0], rtol=0, atol=1e-15)

    def test_report_fields(self, small_ds, small_net):
        rep = E.evaluate(small_net, small_ds, E.EvalProtocol(), seed=3, digest="d")
        assert set(rep) == {"mode", "network", "cmc1", "cmc5", "mAP", "n_queries", "n_skipped", "seed",
                            "config_digest"}
        assert rep["n_queries"] == 5 * 3 * 2 and rep["n_skipped"] == 0
        assert 0 <= rep["mAP"] <= 1 and rep["cmc1"] <= rep["cmc5"]

    def test_i2v_queries_are_first_frames(self, small_ds, small_net):
        idx = small_ds.indices(D.TEST)
        frames = small_ds.frames[idx]
        ids, cams = small_ds.identities[idx], small_ds.cameras[idx]
        res = E.rank(E.extract_gallery(small_net, frames[:, :1]), E.extract_gallery(small_net, frames),
                     ids, cams, ids, cams)
        rep = E.evaluate(small_net, small_ds, E.EvalProtocol())
        assert rep["mAP"] == E.mean_average_precision(res)

    def test_v2v_equals_i2v_on_single_frame_clips(self, small_net):
        ds = D.generate(D.DatasetConfig(n_train_ids=4, n_test_ids=6, n_cameras=2, frames_per_clip=1,
                                        clips_per_id_per_camera=2, latent_dim=4, frame_dim=8, seed=9))
        i2v = E.evaluate(small_net, ds, E.EvalProtocol(mode="I2V"))
        v2v = E.evaluate(small_net, ds, E.EvalProtocol(mode="V2V"))
        for key in ("cmc1", "cmc5", "mAP", "n_queries", "n_skipped"):
            assert i2v[key] == v2v[key]
