"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the "acceptance criteria" section of the pytest
terminal summary. Criteria 1, 6 and 7 run full experiments and take a few
minutes each.
"""
from __future__ import annotations

import contextlib
import io
import json
import math
import os
import time

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from netchoice import inference
from netchoice.cli import EXIT_OK, main
from netchoice.mnl import mnl_choice_prob, mnl_log_likelihood
from netchoice.model import ChoiceSequence, Dataset, MixingSpec, ThetaVector
from netchoice.patents import (
    PATENT_SPEC,
    PATENT_TRUTH,
    SAMPLE_CITATIONS,
    SAMPLE_PATENTS,
    build_patent_dataset,
    load_corpus,
)
from netchoice.rc import RCOptions, SimulatedLikelihood, fit_rc, rc_conditional_prob, sequence_prob, \
    simulated_seq_prob
from netchoice.rng import Stream, derive_seed, draw_coefficients
from netchoice.synthetic import RC_TRUTH, generate_network, run_preset

from conftest import ACCEPTANCE_LINES, central_difference, random_dataset, situation


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def scale_p_values(row: dict) -> list[float]:
    return [p for n, p in zip(row["names"], row["p_values"]) if n.startswith("s")]


class TestCriterion1Recovery:
    def test_desk_scale_table1(self):
        t0 = time.time()
        res = run_preset("table1", seed=1, desk=True)["rc"]
        biases = {p.name: p.bias for p in res.parameters}
        truth = {"m1": RC_TRUTH.means[0], "m2": RC_TRUTH.means[1], "s1": RC_TRUTH.scales[0], "s2": RC_TRUTH.scales[1]}
        assert set(biases) == set(truth)
        fits = [r for r in res.rows if r.get("converged")]
        max_scale_p = max(max(scale_p_values(r)) for r in fits)
        elapsed = time.time() - t0
        ok = (not res.excluded and max(biases.values()) <= 0.15 and max_scale_p < 0.01 and elapsed <= 600)
        record(1, ok, "biases " + ", ".join(f"{k} {v:.4f}" for k, v in biases.items())
               + f" (limit 0.15); largest scale p-value {max_scale_p:.2g} (limit 0.01); "
               f"{len(fits)}/{len(res.rows)} converged; {elapsed:.0f}s")
        assert ok


class TestCriterion2Attenuation:
    def test_mnl_on_random_coefficient_data(self):
        res = run_preset("table2", seed=1, desk=True)["mnl"]
        assert not res.excluded
        b1 = np.array([r["values"][0] for r in res.rows])
        se1 = np.array([r["std_errors"][0] for r in res.rows])
        z = (RC_TRUTH.means[0] - b1) / se1
        ok = bool(np.all(np.abs(z) > 5) and 1.5 <= b1.mean() <= 2.3)
        record(2, ok, f"mean beta1 {b1.mean():.4f} (required in [1.5, 2.3]); smallest |beta1 - 3| / SE "
                      f"{np.abs(z).min():.2f} (required > 5) over {len(b1)} networks")
        assert ok


class TestCriterion3MnlTruth:
    def test_mnl_recovery_and_rc_scale_tests(self):
        out = run_preset("table3", seed=1, desk=True)
        mnl, rc = out["mnl"], out["rc"]
        truth = np.array([-1.0, 3.0])
        z = np.array([(np.array(r["values"]) - truth) / np.array(r["std_errors"]) for r in mnl.rows])
        rc_rows = [r for r in rc.rows if r.get("converged")]
        some_scale_insignificant = np.mean([max(scale_p_values(r)) > 0.10 for r in rc_rows])
        ok = bool(np.all(np.abs(z) < 3) and some_scale_insignificant > 0.5)
        record(3, ok, f"largest MNL |z| {np.abs(z).max():.2f} (required < 3); a scale with p > 0.10 in "
                      f"{some_scale_insignificant:.0%} of {len(rc_rows)} RC fits (required > 50%); "
                      f"misclassification fraction {rc.misclassified_fraction:.0%} (reported only)")
        assert ok


SPECS = [
    MixingSpec(("normal", "lognormal")),
    MixingSpec(("uniform", "triangular")),
    MixingSpec(("fixed", "normal", "lognormal"), correlated=True),
    MixingSpec(("normal", "normal"), correlated=True),
]


def quadrature_prob(seq: ChoiceSequence, m: float, s: float, nodes: int = 64) -> float:
    z, w = hermegauss(nodes)
    return float(np.dot(w, [sequence_prob([m + s * zi], seq) for zi in z]) / math.sqrt(2 * math.pi))


class TestCriterion4Numerics:
    def test_numerical_correctness(self):
        t0 = time.time()
        rng = np.random.default_rng(2024)
        # (a) probabilities sum to one
        worst_sum = 0.0
        for _ in range(10**4):
            J, K = int(rng.integers(1, 12)), int(rng.integers(1, 5))
            X = rng.normal(scale=3.0, size=(J, K))
            beta = rng.normal(scale=2.0, size=K)
            worst_sum = max(worst_sum, abs(mnl_choice_prob(beta, X).sum() - 1.0),
                            abs(rc_conditional_prob(beta, situation(X, 0)).sum() - 1.0))
        ok_a = worst_sum <= 1e-12

        # (b) analytic gradients against central differences
        worst_grad = 0.0
        for i in range(100):
            d = random_dataset(rng, n_sequences=4, k=SPECS[i % len(SPECS)].n_coefficients)
            beta = rng.normal(size=len(d.characteristic_names))
            _, g = mnl_log_likelihood(beta, d)
            fd = central_difference(lambda b: mnl_log_likelihood(b, d)[0], beta)
            worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2))))
            spec = SPECS[i % len(SPECS)]
            sim = SimulatedLikelihood(d, spec, n_draws=20, seed=i)
            x = rng.normal(scale=0.5, size=spec.n_params)
            g = sim.gradient(x)
            fd = central_difference(lambda p: sim.loglik(p, False)[0], x)
            worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2))))
        ok_b = worst_grad <= 1e-5

        # (c) simulated sequence probability against 64-node Gauss-Hermite quadrature
        seq = ChoiceSequence("a", (situation([[0.3], [-0.2], [0.1]], 0), situation([[0.5], [0.0]], 1),
                                   situation([[-0.4], [0.2], [0.0], [0.1]], 3)))
        spec1, theta1 = MixingSpec(("normal",)), ThetaVector((0.5,), (0.8,))
        exact = quadrature_prob(seq, 0.5, 0.8)
        sim_p = simulated_seq_prob(spec1, theta1, seq, draw_coefficients(spec1, theta1, 10**5, Stream(1)))
        rel_c = abs(sim_p - exact) / exact
        ok_c = rel_c <= 1e-3

        # (d) all-Fixed mixed logit is the MNL likelihood bit for bit
        ok_d = True
        for i in range(20):
            d = random_dataset(rng, n_sequences=10, k=2)
            sim = SimulatedLikelihood(d, MixingSpec.all_fixed(2), n_draws=7, seed=i)
            b = rng.normal(size=2)
            ok_d &= sim.loglik(b, False)[0] == mnl_log_likelihood(b, d)[0]
        elapsed = time.time() - t0
        ok = bool(ok_a and ok_b and ok_c and ok_d and elapsed <= 120)
        record(4, ok, f"(a) worst |sum - 1| {worst_sum:.1e}; (b) worst relative gradient error "
                      f"{worst_grad:.1e}; (c) relative error vs quadrature {rel_c:.1e}; (d) bitwise "
                      f"{'equal' if ok_d else 'different'}; {elapsed:.0f}s")
        assert ok


class TestCriterion5InferenceArithmetic:
    def test_reported_numbers(self):
        m1 = inference.coefficient_median("lognormal", -1.4749, 0.9)
        m2 = inference.coefficient_median("lognormal", 1.0956, 0.3)
        mass = inference.interval_mass("normal", -0.0090, 1.3405, -2.278, 2.260)
        rate = inference.substitution_rate(2.9909, 0.2287)
        # exp of the rounded published means gives 0.228802 and 2.990977; the
        # published 0.2287 and 2.9909 are one unit off in the fourth decimal,
        # so agreement is checked to that unit
        ok = abs(m1 - 0.2287) <= 1.5e-4 and abs(m2 - 2.9909) <= 1.5e-4 and abs(mass - 0.9095) < 5e-4 \
            and 13.0 <= rate <= 13.1
        record(5, ok, f"medians {m1:.6f} and {m2:.6f} vs 0.2287 and 2.9909 (agree within one unit of the "
                      f"fourth decimal, not to exact 4-decimal rounding); interval mass {mass:.4f} vs 0.9095; "
                      f"substitution rate {rate:.4f}")
        assert ok


class TestCriterion6Calibration:
    def test_null_rejection_rates(self):
        # null: two independent normal coefficients; tested restriction: their correlation is zero.
        # Short sequences and Halton draws keep the simulation bias of the log-likelihood small
        t0 = time.time()
        full = MixingSpec(("normal", "normal"), correlated=True)
        restricted = MixingSpec(("normal", "normal"))
        truth = ThetaVector((1.0, 1.0), (1.0, 1.0))
        wald_p, lr_p = [], []
        n_reps = 200
        for i in range(n_reps):
            data = generate_network(300, restricted, truth, degree_range=(1, 3), stream=Stream(1000 + i))
            opts = RCOptions(n_draws=200, seed=derive_seed(7, i), draw_scheme="halton")
            r = fit_rc(data, restricted, opts=opts)
            f = fit_rc(data, full, init=ThetaVector(r.theta_hat.means, r.theta_hat.scales, (0.0,)), opts=opts)
            wald_p.append(inference.wald_test(f, inference.restriction_matrix(f, ["chol21"])).p_value)
            lr_p.append(inference.lr_test(f, r).p_value)
        wald_rate = float(np.mean(np.array(wald_p) < 0.05))
        lr_rate = float(np.mean(np.array(lr_p) < 0.05))
        elapsed = time.time() - t0
        ok = 0.02 <= wald_rate <= 0.10 and 0.02 <= lr_rate <= 0.10 and elapsed <= 900
        record(6, ok, f"Wald rejection rate {wald_rate:.3f}, LR rejection rate {lr_rate:.3f} at the 5% level "
                      f"over {n_reps} null datasets (required in [0.02, 0.10]); {elapsed:.0f}s")
        assert ok


def cli(*argv) -> tuple[int, str]:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


class TestCriterion7PatentPipeline:
    def test_recovery_through_the_cli(self, tmp_path):
        spec_json = json.dumps(PATENT_SPEC.to_json())
        estimates = []
        for seed in range(10):
            d = tmp_path / f"seed{seed}"
            d.mkdir()
            if seed == 0:
                pat, cit = SAMPLE_PATENTS, SAMPLE_CITATIONS  # the bundled corpus is the seed-0 draw
            else:
                pat, cit = d / "patents.csv", d / "citations.csv"
                assert cli("--seed", seed, "generate", "--kind", "patents", "--patents-out", pat,
                           "--citations-out", cit)[0] == EXIT_OK
            code, out = cli("ingest", "--patents", pat, "--citations", cit)
            assert code == EXIT_OK and json.loads(out)["n_errors"] == 0
            assert cli("--seed", seed, "build-dataset", "--patents", pat, "--citations", cit, "--cohort-year", 1975,
                       "--all-candidates", "--out", d / "data.csv")[0] == EXIT_OK
            assert cli("--seed", seed, "fit-rc", "--data", d / "data.csv", "--spec", spec_json, "--draws", 100,
                       "--out", d / "fit.json")[0] == EXIT_OK
            code, out = cli("report", "--fit", d / "fit.json")
            assert code == EXIT_OK
            rep = json.loads(out)["fit"]["extra"]["reported"]
            estimates.append(dict(zip(rep["names"], rep["values"])))
        names = list(estimates[0])
        est = np.array([[e[n] for n in names] for e in estimates])
        truth = dict(zip([f"m{i + 1}" for i in range(3)], PATENT_TRUTH.means))
        truth |= {f"s{i + 1}": s for i, s in enumerate(PATENT_TRUTH.scales)}
        truth |= {n: 0.0 for n in names if n.startswith("cor")}
        mc_se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
        z = (est.mean(axis=0) - np.array([truth[n] for n in names])) / mc_se
        ok_recovery = bool(np.all(np.abs(z) < 3))

        # structural invariants of the sampled (k = 6) construction
        corpus = load_corpus(SAMPLE_PATENTS, SAMPLE_CITATIONS)
        P = corpus.patents
        exclusive = sized = True
        inclusions: dict[str, int] = {}
        not_cited: dict[str, int] = {}
        pool_size: dict[str, int] = {}
        for p in P.values():
            if p.award_year < 1975:
                pool_size[p.category] = pool_size.get(p.category, 0) + 1
        for s in range(50):
            data = build_patent_dataset(corpus, 1975, 10000, 6, True, Stream(s))
            for seq in data.sequences:
                cat = P[seq.chooser_id].category
                for sit in seq.situations:
                    sized &= len(sit.alternatives) == 7
                    exclusive &= all(P[a.id].award_year < 1975 and P[a.id].category == cat
                                     for a in sit.alternatives)
                    for a in sit.alternatives:
                        if a is not sit.chosen:
                            inclusions[a.id] = inclusions.get(a.id, 0) + 1
                    # every pool member other than the cited one is eligible
                    not_cited[cat] = not_cited.get(cat, 0) + 1
                    not_cited[sit.chosen.id] = not_cited.get(sit.chosen.id, 0) + 1
        # each eligible pool member enters a situation with probability 6 / (pool - 1)
        freq_dev = 0.0
        for pid, n_in in inclusions.items():
            cat = P[pid].category
            n_eligible = not_cited[cat] - not_cited.get(pid, 0)
            freq_dev = max(freq_dev, abs(n_in / n_eligible - 6 / (pool_size[cat] - 1)))
        ok_invariants = bool(exclusive and sized and freq_dev <= 0.01)
        ok = ok_recovery and ok_invariants
        record(7, ok, "mean estimate minus truth in MC standard errors: "
               + ", ".join(f"{n} {v:+.2f}" for n, v in zip(names, z))
               + f" (required |.| < 3 over 10 seeds); cohort exclusivity {exclusive}; k+1 alternatives {sized}; "
                 f"largest inclusion-frequency deviation {freq_dev:.4f} (limit 0.01)")
        assert ok

    @pytest.mark.skipif(not (os.environ.get("NETCHOICE_NBER_PATENTS") and os.environ.get("NETCHOICE_NBER_CITATIONS")),
                        reason="set NETCHOICE_NBER_PATENTS and NETCHOICE_NBER_CITATIONS to the NBER extract")
    def test_directional_claims_on_nber(self, tmp_path):
        ingest_dir = tmp_path / "nber"
        code, _ = cli("ingest", "--format", "nber", "--patents", os.environ["NETCHOICE_NBER_PATENTS"],
                      "--citations", os.environ["NETCHOICE_NBER_CITATIONS"], "--out-dir", ingest_dir)
        assert code == EXIT_OK
        assert cli("build-dataset", "--patents", ingest_dir / "patents.csv", "--citations",
                   ingest_dir / "citations.csv", "--cohort-year", 1975, "--choosers", 10000,
                   "--out", tmp_path / "data.csv")[0] == EXIT_OK
        cli("fit-rc", "--data", tmp_path / "data.csv", "--spec", json.dumps(PATENT_SPEC.to_json()),
            "--out", tmp_path / "fit.json")
        rep = json.loads((tmp_path / "fit.json").read_text())["extra"]["reported"]
        v = dict(zip(rep["names"], rep["values"]))
        p = dict(zip(rep["names"], rep["p_values"]))
        claims = {"m2 > 0 and significant": v["m2"] > 0 and p["m2"] < 0.05,
                  "all scales significant": all(p[f"s{i}"] < 0.05 for i in (1, 2, 3)),
                  "|m3| < 0.02": abs(v["m3"]) < 0.02}
        # reported only: the directional claims are not gated
        print("NBER directional claims: " + "; ".join(f"{k}: {'holds' if ok else 'does not hold'}"
                                                      for k, ok in claims.items()))


class TestCriterion8Determinism:
    def test_byte_identical_across_threads(self, tmp_path):
        spec2 = '{"coefficients": [{"name": "x", "family": "normal"}, {"name": "y", "family": "lognormal"}]}'
        theta2 = '{"means": [3.0, 0.0], "scales": [2.0, 1.0]}'
        net, pat, cit = tmp_path / "net.csv", tmp_path / "p.csv", tmp_path / "c.csv"
        data = tmp_path / "d.csv"
        fit = tmp_path / "fit.json"
        restricted = tmp_path / "restricted.json"
        commands = [
            ["generate", "--nodes", 60, "--spec", spec2, "--theta", theta2, "--degree-range", 1, 5, "--out", net],
            ["generate", "--kind", "patents", "--n-patents", 300, "--patents-out", pat, "--citations-out", cit],
            ["ingest", "--patents", pat, "--citations", cit],
            ["build-dataset", "--patents", pat, "--citations", cit, "--cohort-year", 1975, "--out", data],
            ["fit-mnl", "--data", net],
            ["fit-rc", "--data", net, "--spec", spec2, "--draws", 30, "--correlated", "--out", fit],
            ["fit-rc", "--data", net, "--spec", spec2, "--draws", 30, "--out", restricted],
            ["fit-rc", "--data", net, "--spec", spec2, "--draws", 30, "--draw-scheme", "halton"],
            ["report", "--fit", fit, "--restricted", restricted, "--wald", "chol21"],
            ["experiment", "table3", "--desk", "--networks", 2, "--nodes", 40, "--draws", 20],
            ["robustness", "--patents", pat, "--citations", cit, "--years", 1975, "--choosers", 60,
             "--seeds", 0, 1, "--draws", 15],
            ["study", "--data", data, "--draws", 15],
        ]
        differing = []
        for cmd in commands:
            out_file = cmd[cmd.index("--out") + 1] if "--out" in cmd else None
            outputs = set()
            for threads in (1, 2, 4):
                code, out = cli("--seed", 11, "--threads", threads, *cmd)
                outputs.add((code, out, out_file.read_bytes() if out_file else b""))
            if len(outputs) != 1 or next(iter(outputs))[0] != EXIT_OK:
                differing.append(" ".join(map(str, cmd[:1])))
        ok = not differing
        record(8, ok, f"{len(commands)} command runs at 1, 2 and 4 threads; "
                      + ("all byte-identical" if ok else f"differences in {differing}"))
        assert ok
