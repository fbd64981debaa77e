import math

import numpy as np
import pytest

from phenokg.errors import PatientDataError
from phenokg.evaluate import (
    EvaluationReport,
    RankedGeneList,
    evaluate,
    hits_at,
    ndcg_at_k,
    rank,
    reciprocal_rank,
    top_q_match,
)
from phenokg.model import init_parameters
from phenokg.patients import SimulatorConfig, simulate_cohort, synthetic_graph

from conftest import small_model_config


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=v.ndim > 1)


class TestRank:
    def test_orders_by_score(self):
        out = rank(np.array([1.0, 0.0]), unit([[1.0, 0.0], [0.0, 1.0]]), ["A", "B"])
        assert out.entries == [("A", 1.0), ("B", 0.0)]

    def test_ties_break_alphabetically(self):
        genes = unit([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        out = rank(np.array([1.0, 0.0]), genes, ["C", "A", "B"])
        assert [g for g, _ in out.entries] == ["A", "B", "C"]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            count = 20
            genes = rng.normal(size=(count, 6))
            genes = genes / np.linalg.norm(genes, axis=1, keepdims=True)
            p = unit(rng.normal(size=6))
            ids = [f"G{i:03d}" for i in rng.permutation(1000)[:count]]
            out = rank(p, genes, ids)
            scores = genes @ p
            oracle = sorted(zip(ids, scores), key=lambda t: (-t[1], t[0]))
            assert [g for g, _ in out.entries] == [g for g, _ in oracle]

    def test_candidate_order_invariance(self):
        rng = np.random.default_rng(1)
        genes = rng.normal(size=(10, 4))
        genes = genes / np.linalg.norm(genes, axis=1, keepdims=True)
        p = unit(rng.normal(size=4))
        ids = [f"G{i}" for i in range(10)]
        base = rank(p, genes, ids)
        perm = rng.permutation(10)
        shuffled = rank(p, genes[perm], [ids[i] for i in perm])
        assert base.entries == shuffled.entries

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            rank(np.array([1.0]), np.array([[1.0], [0.5]]), ["A", "A"])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rank(np.array([1.0, 0.0]), np.array([[1.0]]), ["A"])


class TestPointMetrics:
    def _ranking(self, ids):
        return RankedGeneList("p", [(g, float(-i)) for i, g in enumerate(ids)])

    def test_reciprocal_rank_values(self):
        assert reciprocal_rank(self._ranking(["A", "B"]), "A") == 1.0
        assert reciprocal_rank(self._ranking(["B", "C", "D", "A"]), "A") == 0.25
        assert reciprocal_rank(self._ranking(["B"]), "A") == 0.0

    def test_mrr_mean_over_patients(self):
        rr = [reciprocal_rank(self._ranking(["B", "A"]), "A"), reciprocal_rank(self._ranking(["B", "C", "D", "A"]), "A")]
        assert np.mean(rr) == 0.375

    def test_ndcg_values(self):
        assert ndcg_at_k(self._ranking(["A", "B"]), "A", 5) == 1.0
        assert ndcg_at_k(self._ranking(["B", "C", "A"]), "A", 3) == 0.5  # 1/log2(4)
        assert ndcg_at_k(self._ranking(["B", "C", "D", "E", "F", "A"]), "A", 5) == 0.0

    def test_hits_values(self):
        assert hits_at(self._ranking(["B", "A"]), "A", 2) == 1.0
        assert hits_at(self._ranking(["B", "C", "A"]), "A", 2) == 0.0

    def test_rr_one_iff_ndcg1_one(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            ids = [f"G{i}" for i in rng.permutation(8)]
            ranking = self._ranking(ids)
            assert (reciprocal_rank(ranking, "G3") == 1.0) == (ndcg_at_k(ranking, "G3", 1) == 1.0)

    def test_metric_oracles_on_random_rankings(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            count = int(rng.integers(2, 30))
            ids = [f"G{i}" for i in range(count)]
            rng.shuffle(ids)
            ranking = self._ranking(ids)
            true = f"G{int(rng.integers(count))}"
            position = ids.index(true) + 1
            assert reciprocal_rank(ranking, true) == 1.0 / position
            for k in (1, 3, 10):
                expected = 1.0 / math.log2(position + 1) if position <= k else 0.0
                assert ndcg_at_k(ranking, true, k) == expected
                assert hits_at(ranking, true, k) == (1.0 if position <= k else 0.0)

    def test_ndcg_non_decreasing_in_k(self):
        rng = np.random.default_rng(4)
        ids = [f"G{i}" for i in rng.permutation(40)]
        ranking = self._ranking(ids)
        values = [ndcg_at_k(ranking, "G7", k) for k in (1, 3, 5, 10, 25, 50)]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestTopQMatch:
    def test_identical_patient_matches_at_q1(self):
        embs = unit(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = top_q_match(embs[:1], [5], embs, [5, 6], qs=[1])
        assert out[1] == 1.0

    def test_no_shared_gene_zero_everywhere(self):
        rng = np.random.default_rng(5)
        test = rng.normal(size=(4, 3))
        ref = rng.normal(size=(6, 3))
        out = top_q_match(test, [1, 2, 3, 4], ref, [9] * 6, qs=[1, 3, 6])
        assert all(v == 0.0 for v in out.values())

    def test_q_clamped_with_warning(self):
        embs = unit(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = top_q_match(embs, [1, 2], embs, [1, 2], qs=[50])
        assert out[50] == 1.0

    def test_monotone_in_q(self):
        rng = np.random.default_rng(6)
        test = rng.normal(size=(10, 4))
        ref = rng.normal(size=(30, 4))
        labels_t = rng.integers(0, 5, size=10)
        labels_r = rng.integers(0, 5, size=30)
        out = top_q_match(test, labels_t, ref, labels_r, qs=[1, 3, 10, 30])
        values = [out[q] for q in (1, 3, 10, 30)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(7)
        test = rng.normal(size=(30, 5))
        ref = rng.normal(size=(30, 5))
        labels_t = rng.integers(0, 6, size=30)
        labels_r = rng.integers(0, 6, size=30)
        qs = (1, 3, 5, 10, 30)
        got = top_q_match(test, labels_t, ref, labels_r, qs=qs)
        t_unit = test / np.linalg.norm(test, axis=1, keepdims=True)
        r_unit = ref / np.linalg.norm(ref, axis=1, keepdims=True)
        sims = t_unit @ r_unit.T
        for q in qs:
            hits = 0
            for i in range(30):
                order = sorted(range(30), key=lambda j: (-sims[i, j], j))[:q]
                hits += any(labels_r[j] == labels_t[i] for j in order)
            assert got[q] == hits / 30

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            top_q_match(np.ones((1, 2)), [1], np.ones((0, 2)), [], qs=[1])


@pytest.fixture(scope="module")
def setup():
    graph = synthetic_graph(n_phenotypes=30, n_genes=12, n_diseases=12, n_other=6, seed=2)
    cohort = simulate_cohort(graph, SimulatorConfig(n_patients=12, distractor_candidates=7, seed=11))
    config = small_model_config(out_dim=8, d_in=6)
    params = init_parameters(config, 6, np.random.default_rng(3), n_graph_nodes=graph.n_nodes)
    return graph, cohort, params


class TestEvaluate:
    def test_candidates_mode_report_complete(self, setup):
        graph, cohort, params = setup
        report = evaluate(graph, cohort, params, mode="candidates")
        assert 0.0 <= report.mrr <= 1.0
        assert len(report.patients) == len(cohort)
        keys = sorted(report.to_json_dict())
        assert keys == ["hits", "mrr", "ndcg", "patients", "top_q"]
        ndcg_series = [report.ndcg[k] for k in sorted(report.ndcg)]
        assert all(a <= b for a, b in zip(ndcg_series, ndcg_series[1:]))

    def test_khop_mode_counts_exclusions(self, setup):
        graph, cohort, params = setup
        report = evaluate(graph, cohort, params, mode="khop", k=2)
        assert report.n_evaluated + report.n_excluded == len(cohort)
        for p in report.patients:
            if p.excluded:
                assert p.rank is None

    def test_all_metrics_in_unit_interval(self, setup):
        graph, cohort, params = setup
        report = evaluate(graph, cohort, params, mode="candidates")
        for metrics in (report.ndcg, report.hits, report.top_q):
            for v in metrics.values():
                assert 0.0 <= v <= 1.0

    def test_perfect_model_gives_mrr_one(self, setup):
        graph, cohort, params = setup

        # fake "model" behavior through the metric path: rank lists where
        # the true gene always wins
        from phenokg.evaluate import RankedGeneList, reciprocal_rank

        for rec in cohort:
            entries = [(g, 1.0 if g == rec.true_gene else 0.0) for g in rec.candidate_genes]
            entries.sort(key=lambda t: (-t[1], t[0]))
            ranking = RankedGeneList(rec.id, entries)
            assert reciprocal_rank(ranking, rec.true_gene) == 1.0
            assert ndcg_at_k(ranking, rec.true_gene, 1) == 1.0

    def test_missing_true_gene_is_error(self, setup):
        graph, cohort, params = setup
        from phenokg.patients import PatientRecord

        broken = [PatientRecord(id="x", phenotypes=cohort[0].phenotypes)]
        with pytest.raises(PatientDataError, match="no true gene"):
            evaluate(graph, broken, params, mode="khop")
