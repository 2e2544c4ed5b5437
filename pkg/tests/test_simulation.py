import logging
import math

import numpy as np
import pytest

from betamix.angles import pairwise_z, standardize
from betamix.exceptions import InputError
from betamix.graph import bayes_edges, graph_from_pairs, select_predictors
from betamix.mixture import FitOptions, fit
from betamix.simulation import (
    CorrelationSpec,
    Scenario,
    build_correlation,
    evaluate,
    format_results,
    parse_scenarios,
    run_scenario,
    sample_linear_model,
    sample_mvn,
)


class TestSpec:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(kind="tree", P=10),
            dict(kind="clusters", P=10, rho=0.5, size_param=0),
            dict(kind="clusters", P=10, rho=1.0, size_param=2),
            dict(kind="cycle", P=10, rho=0.3, size_param=2),
            dict(kind="random_clusters", P=100, rho=0.3),
            dict(kind="linear_model", P=50),
            dict(kind="linear_model", P=200, design="grid"),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            CorrelationSpec(**kw)

    def test_settings_label(self):
        assert CorrelationSpec("clusters", 500, 0.3, 25).settings == "Cluster size 25"
        assert CorrelationSpec("band", 500, 0.3, 5).settings == "Width 5"


class TestBuildCorrelation:
    def test_ar1(self):
        m = build_correlation(CorrelationSpec("ar1", 4, 0.5))
        np.testing.assert_allclose(m.corr[0], [1, 0.5, 0.25, 0.125])
        assert len(m.truth) == 6

    def test_ar1_truth_cutoff(self):
        m = build_correlation(CorrelationSpec("ar1", 6, 0.5, truth_min_abs=0.2))
        assert m.truth == {(i, k) for i in range(6) for k in range(i + 1, i + 3) if k < 6}

    def test_clusters(self):
        m = build_correlation(CorrelationSpec("clusters", 4, 0.9, 2))
        want = np.array([[1, 0.9, 0, 0], [0.9, 1, 0, 0], [0, 0, 1, 0.9], [0, 0, 0.9, 1]])
        np.testing.assert_allclose(m.corr, want)
        assert m.truth == {(0, 1), (2, 3)} and not m.repaired

    def test_cycle(self):
        m = build_correlation(CorrelationSpec("cycle", 8, 0.3, 4))
        assert m.truth == {(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (5, 6), (6, 7), (4, 7)}
        assert m.corr[0, 3] == pytest.approx(0.3)

    def test_band(self):
        m = build_correlation(CorrelationSpec("band", 6, 0.2, 2))
        assert m.truth == {(i, k) for i in range(6) for k in range(i + 1, min(i + 3, 6))}
        assert m.corr[0, 3] == 0

    def test_hub_and_block_ar1(self):
        m = build_correlation(CorrelationSpec("hub", 10, 0.4, 5))
        assert m.truth == {(0, j) for j in range(1, 5)} | {(5, j) for j in range(6, 10)}
        m = build_correlation(CorrelationSpec("block_ar1", 40, 0.5, 20))
        assert all(k < 20 for _, k in m.truth) and len(m.truth) == 190

    def test_random_clusters(self):
        m = build_correlation(CorrelationSpec("random_clusters", 500, 0.5, seed=3))
        # recover the blocks from the truth: each is a clique on consecutive indices
        members = sorted({v for e in m.truth for v in e})
        assert len(members) <= 500
        blocks, start = [], 0
        for j in range(1, 501):
            if j == 500 or (start, j) not in m.truth and (j - 1, j) not in m.truth:
                blocks.append(j - start)
                start = j
        sizes = [b for b in blocks if b > 1]
        assert len(sizes) == 40
        assert min(sizes) >= 5 and max(sizes) <= 25 and sum(sizes) <= 500
        assert len(set(sizes)) > 1

    @pytest.mark.parametrize("kind,size", [("clusters", 5), ("band", 3), ("cycle", 6), ("hub", 4), ("ar1", 0)])
    def test_truth_symmetric_free_of_loops(self, kind, size):
        m = build_correlation(CorrelationSpec(kind, 30, 0.4, size))
        assert all(i < k for i, k in m.truth)
        np.testing.assert_array_equal(m.corr, m.corr.T)
        np.testing.assert_array_equal(np.diag(m.corr), 1.0)

    def test_repair_logged(self, caplog):
        with caplog.at_level(logging.WARNING, logger="betamix.simulation"):
            m = build_correlation(CorrelationSpec("band", 50, 0.9, 5))
        assert m.repaired and m.min_eigenvalue < 0
        assert "not positive definite" in caplog.text
        assert np.linalg.eigvalsh(m.corr).min() > 0
        np.testing.assert_allclose(np.diag(m.corr), 1.0)

    def test_identity(self):
        m = build_correlation(CorrelationSpec("identity", 5))
        np.testing.assert_array_equal(m.corr, np.eye(5))
        assert m.truth == frozenset()


class TestSampling:
    def test_deterministic(self):
        c = build_correlation(CorrelationSpec("ar1", 5, 0.5)).corr
        np.testing.assert_array_equal(sample_mvn(c, 10, 4).values, sample_mvn(c, 10, 4).values)
        assert not np.array_equal(sample_mvn(c, 10, 4).values, sample_mvn(c, 10, 5).values)

    def test_identity_correlations_small(self):
        n = 400
        x = sample_mvn(np.eye(20), n, 7).values
        r = np.corrcoef(x, rowvar=False)[np.triu_indices(20, 1)]
        assert np.abs(r).max() < 3 / math.sqrt(n) * 1.5

    def test_ar1_lag_one(self):
        c = build_correlation(CorrelationSpec("ar1", 10, 0.9)).corr
        x = sample_mvn(c, 5000, 8).values
        r = np.corrcoef(x, rowvar=False)
        assert np.abs(np.diag(r, 1) - 0.9).max() < 0.02


class TestLinearModel:
    def test_shape_and_truth(self):
        data, truth = sample_linear_model(120, 50, seed=1)
        assert data.values.shape == (50, 121)
        assert data.column_names[-1] == "Y" and data.column_names[0] == "X1"
        assert truth == {(0, 120), (29, 120), (99, 120)}
        x = data.values
        assert x[:, :120].min() >= 0 and x[:, :120].max() <= 1

    def test_noiseless_y_tracks_x1(self):
        data, _ = sample_linear_model(150, 400, seed=2, noise_sd=0.0)
        x = data.values
        r = [abs(np.corrcoef(x[:, j], x[:, -1])[0, 1]) for j in range(150)]
        assert int(np.argmax(r)) == 0

    def test_copula_designs_keep_uniform_margins(self):
        data, _ = sample_linear_model(100, 2000, seed=3, design="ar1_block", rho=0.8)
        x = data.values
        assert x[:, :15].min() >= 0 and x[:, :15].max() <= 1
        assert abs(x[:, :15].mean() - 0.5) < 0.02
        assert np.corrcoef(x[:, 0], x[:, 1])[0, 1] > 0.7

    def test_independent_selection(self):
        data, truth = sample_linear_model(500, 500, seed=4)
        zv = pairwise_z(standardize(data))
        res = fit(zv)
        g = bayes_edges(zv, res.posteriors, 0.01)
        assert select_predictors(g, "Y") == {0, 29, 99}
        score = evaluate(g, truth, node=500)
        assert score["tpr"] == 1.0 and score["fdr"] == 0.0


class TestEvaluate:
    truth = frozenset((i, i + 1) for i in range(9))

    def test_perfect(self):
        s = evaluate(graph_from_pairs(10, self.truth), self.truth)
        assert s == {"tp": 9, "fp": 0, "fn": 0, "tpr": 1.0, "fdr": 0.0}

    def test_empty(self):
        s = evaluate(graph_from_pairs(10, []), self.truth)
        assert s["tpr"] == 0.0 and s["fdr"] == 0.0 and s["fn"] == 9

    def test_one_extra(self):
        s = evaluate(graph_from_pairs(10, set(self.truth) | {(0, 9)}), self.truth)
        assert s["fdr"] == pytest.approx(0.1)

    def test_node_restricted(self):
        g = graph_from_pairs(5, [(0, 4), (1, 4), (1, 2)])
        s = evaluate(g, {(0, 4), (3, 4), (1, 2)}, node=4)
        assert (s["tp"], s["fp"], s["fn"]) == (1, 1, 1)

    def test_no_truth(self):
        s = evaluate(graph_from_pairs(4, [(0, 1)]), set())
        assert math.isnan(s["tpr"]) and s["fdr"] == 1.0


class TestRunScenario:
    def test_identity_scenario(self):
        res = run_scenario(Scenario(CorrelationSpec("identity", 100, seed=5), n=60, reps=2))
        assert math.isnan(res.tpr)
        assert all(r["tp"] == 0 and r["fn"] == 0 for r in res.per_rep)
        assert res.fdr <= 0.01 or all(r["fp"] <= 1 for r in res.per_rep)

    def test_threads_do_not_change_results(self):
        sc = Scenario(CorrelationSpec("clusters", 100, 0.6, 10, seed=9), n=50, reps=3)
        a, b = run_scenario(sc, threads=1), run_scenario(sc, threads=3)
        assert a.per_rep == b.per_rep and a.tpr == b.tpr and a.fdr == b.fdr
        assert [r["seed"] for r in a.per_rep] == [9, 10, 11]

    def test_tpr_grows_with_rho(self):
        tprs = [
            run_scenario(Scenario(CorrelationSpec("clusters", 120, rho, 12, seed=1), n=60, reps=2)).tpr
            for rho in (0.3, 0.5, 0.8)
        ]
        assert tprs[0] <= tprs[1] <= tprs[2]

    def test_tpr_grows_with_n(self):
        tprs = [
            run_scenario(Scenario(CorrelationSpec("clusters", 120, 0.4, 12, seed=1), n=n, reps=2)).tpr
            for n in (40, 80, 160)
        ]
        assert tprs[0] <= tprs[1] <= tprs[2]

    def test_linear_model_scenario(self):
        res = run_scenario(Scenario(CorrelationSpec("linear_model", 100, seed=2), n=200, reps=1))
        assert res.tpr == 1.0


class TestConfig:
    def test_key_value_blocks(self):
        text = "# table rows\nkind=clusters\nP=500\nrho=0.3\nsize=25\nN=200\n\nstructure=band\nP=100\nrho=0.5\nsize_param=5\nn=50\nreps=2\ness=yes\n"
        sc = parse_scenarios(text)
        assert len(sc) == 2
        assert sc[0].spec == CorrelationSpec("clusters", 500, 0.3, 25)
        assert sc[0].n == 200 and sc[0].reps == 5
        assert sc[1].reps == 2 and sc[1].options.estimate_ess is True

    def test_json_forms(self):
        one = parse_scenarios('{"kind": "ar1", "P": 50, "rho": 0.5, "n": 30}')
        assert one[0].spec.kind == "ar1"
        many = parse_scenarios('{"defaults": {"n": 40, "reps": 3}, "scenarios": [{"kind": "identity", "P": 10}]}')
        assert many[0].n == 40 and many[0].reps == 3
        assert len(parse_scenarios('[{"kind": "identity", "P": 10, "n": 5}, {"kind": "identity", "P": 10, "n": 6}]')) == 2

    @pytest.mark.parametrize(
        "text",
        ["", "kind=clusters\nP=10", "kind=clusters\nP=10\nn=20\nbogus=1", "kind=clusters\nP=ten\nn=20\nsize=2",
         "oops", "{bad json", "kind=tree\nP=10\nn=20"],
    )
    def test_errors(self, text):
        with pytest.raises(InputError):
            parse_scenarios(text)

    def test_options_pass_through(self):
        sc = parse_scenarios("kind=identity\nP=10\nn=20\ncdelta=true\ndelta=0.01\nmax_iter=7\n")[0]
        assert sc.options == FitOptions(estimate_c_delta=True, delta=0.01, max_iter=7)


class TestFormat:
    def test_header_and_na(self):
        res = run_scenario(Scenario(CorrelationSpec("identity", 30, seed=1), n=40, reps=1))
        text = format_results([res])
        lines = text.strip().split("\n")
        assert lines[0] == "structure,rho,N,P,settings,TPR,FDR"
        assert lines[1].startswith("identity,0,40,30,identity,NA,")
