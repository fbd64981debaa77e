import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from phenokg.model import init_parameters
from phenokg.patients import SimulatorConfig, simulate_cohort, synthetic_graph
from phenokg.service import ServiceContext, make_server, parse_addr, resolve_addr, search_phenotypes, serve_rank

from conftest import small_model_config


@pytest.fixture(scope="module")
def ctx():
    graph = synthetic_graph(n_phenotypes=30, n_genes=12, n_diseases=12, n_other=6, seed=2)
    config = small_model_config(out_dim=16, d_in=8)
    params = init_parameters(config, 8, np.random.default_rng(4), n_graph_nodes=graph.n_nodes)
    return ServiceContext(graph=graph, params=params)


@pytest.fixture(scope="module")
def server(ctx):
    srv = make_server(ctx, "127.0.0.1:0")
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    host, port = srv.server_address[:2]
    yield f"http://{host}:{port}"
    srv.shutdown()


def http_get(url):
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read().decode("utf-8"))


def http_post(url, payload):
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode("utf-8"), headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read().decode("utf-8"))


class TestSearchPhenotypes:
    def test_prefix_query(self, ctx):
        out = search_phenotypes(ctx.graph, "HP:00000", limit=5)
        assert len(out) == 5
        assert all(ext.startswith("HP:00000") for ext, _ in out)
        assert out == sorted(out)

    def test_empty_query_returns_first_ids(self, ctx):
        out = search_phenotypes(ctx.graph, "", limit=3)
        assert [ext for ext, _ in out] == ["HP:0000000", "HP:0000001", "HP:0000002"]

    def test_no_match_empty(self, ctx):
        assert search_phenotypes(ctx.graph, "ZZZ", limit=5) == []

    def test_case_insensitive(self, ctx):
        assert search_phenotypes(ctx.graph, "hp:0000001", limit=5)

    def test_bad_limit(self, ctx):
        with pytest.raises(ValueError):
            search_phenotypes(ctx.graph, "", limit=0)


class TestServeRank:
    def test_basic_ranking(self, ctx):
        status, body = serve_rank(ctx, {"phenotypes": ["HP:0000000"], "k": 2})
        assert status == 200
        assert body["excluded"] is False
        assert body["subgraph"]["nodes"] > 0
        scores = [e["score"] for e in body["ranking"]]
        assert scores == sorted(scores, reverse=True)

    def test_unknown_phenotype_listed(self, ctx):
        status, body = serve_rank(ctx, {"phenotypes": ["HP:0000000", "HP:0000000X"]})
        assert status == 422
        assert body["unknown_phenotypes"] == ["HP:0000000X"]

    def test_candidate_list_respected(self, ctx):
        status, body = serve_rank(
            ctx, {"phenotypes": ["HP:0000000"], "candidate_genes": ["ENSG00000000000", "ENSG00000000001"]}
        )
        assert status == 200
        returned = {e["gene"] for e in body["ranking"]}
        assert returned <= {"ENSG00000000000", "ENSG00000000001"}

    def test_unknown_gene_listed(self, ctx):
        status, body = serve_rank(ctx, {"phenotypes": ["HP:0000000"], "candidate_genes": ["ENSG_NOPE"]})
        assert status == 422
        assert body["unknown_genes"] == ["ENSG_NOPE"]

    def test_invalid_k_rejected(self, ctx):
        for bad in (0, 5, "2", True):
            status, _ = serve_rank(ctx, {"phenotypes": ["HP:0000000"], "k": bad})
            assert status == 422

    def test_empty_phenotypes_rejected(self, ctx):
        status, _ = serve_rank(ctx, {"phenotypes": []})
        assert status == 422

    def test_top_caps_results(self, ctx):
        status, body = serve_rank(ctx, {"phenotypes": ["HP:0000000"], "k": 2, "top": 2})
        assert status == 200
        assert len(body["ranking"]) <= 2

    def test_identical_requests_identical_responses(self, ctx):
        a = serve_rank(ctx, {"phenotypes": ["HP:0000000", "HP:0000003"], "k": 2})
        b = serve_rank(ctx, {"phenotypes": ["HP:0000000", "HP:0000003"], "k": 2})
        assert json.dumps(a) == json.dumps(b)

    def test_adding_phenotype_changes_scores_deterministically(self, ctx):
        base = serve_rank(ctx, {"phenotypes": ["HP:0000000"], "k": 2})[1]
        more1 = serve_rank(ctx, {"phenotypes": ["HP:0000000", "HP:0000003"], "k": 2})[1]
        more2 = serve_rank(ctx, {"phenotypes": ["HP:0000000", "HP:0000003"], "k": 2})[1]
        assert more1 == more2
        base_scores = {e["gene"]: e["score"] for e in base["ranking"]}
        more_scores = {e["gene"]: e["score"] for e in more1["ranking"]}
        shared = set(base_scores) & set(more_scores)
        assert shared and any(base_scores[g] != more_scores[g] for g in shared)


class TestHttpEndpoints:
    def test_health(self, server):
        status, body = http_get(f"{server}/health")
        assert (status, body) == (200, {"status": "ok"})

    def test_phenotype_autocomplete(self, server):
        status, body = http_get(f"{server}/phenotypes?q=HP:0000001&limit=5")
        assert status == 200
        assert all(m["id"].startswith("HP:") for m in body["matches"])
        assert all(set(m) == {"id", "index"} for m in body["matches"])

    def test_rank_roundtrip(self, server):
        status, body = http_post(f"{server}/rank", {"phenotypes": ["HP:0000000"], "k": 2})
        assert status == 200
        assert set(body) == {"ranking", "subgraph", "excluded"}
        assert all(set(e) == {"gene", "score"} for e in body["ranking"])

    def test_rank_unknown_phenotype_422(self, server):
        status, body = http_post(f"{server}/rank", {"phenotypes": ["HP:0000000X"]})
        assert status == 422
        assert body["unknown_phenotypes"] == ["HP:0000000X"]

    def test_malformed_json_400(self, server):
        req = urllib.request.Request(f"{server}/rank", data=b"{broken", headers={"Content-Type": "application/json"})
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(req)
        assert exc.value.code == 400

    def test_unknown_path_404(self, server):
        status, _ = http_get(f"{server}/nope")
        assert status == 404

    def test_concurrent_identical_requests(self, server):
        payload = {"phenotypes": ["HP:0000000", "HP:0000003"], "k": 2}
        results = [None] * 8

        def worker(i):
            results[i] = http_post(f"{server}/rank", payload)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == results[0] for r in results)


class TestParseAddr:
    def test_valid(self):
        assert parse_addr("0.0.0.0:8000") == ("0.0.0.0", 8000)

    def test_invalid(self):
        for bad in ("localhost", ":90x", "nohost:"):
            with pytest.raises(ValueError):
                parse_addr(bad)


class TestResolveAddr:
    def test_flag_wins_over_env(self):
        assert resolve_addr("1.2.3.4:99", env={"PHENOKG_ADDR": "5.6.7.8:11"}) == "1.2.3.4:99"

    def test_env_wins_over_default(self):
        assert resolve_addr(None, env={"PHENOKG_ADDR": "5.6.7.8:11"}) == "5.6.7.8:11"

    def test_default_when_nothing_set(self):
        assert resolve_addr(None, env={}) == "127.0.0.1:8350"
