"""End-to-end acceptance suite; each test reports one pass/fail line in the terminal summary."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from aiig.belief import Belief, OpponentModelSet, update_probe
from aiig.cli import main
from aiig.distill import distill, exact_average, total_variation
from aiig.ensemble import evaluate_protagonist, train_vs_scripted
from aiig.env import AgentType, GameConfig, StepFlags, ProtagonistAction, protagonist_reward_given_type
from aiig.learner import LearnerConfig, actor_objective_grad
from aiig.meta import MetaConfig, Population, RobustnessReport, accept, anneal
from aiig.recurrent import HIDDEN_SIZE, RAW_OBS_DIM
from aiig.nn import DenseNet, RecurrentNet, softmax
from aiig.rollout import ScriptedOpponentPolicy, ScriptedProtagonist
from oracles import (brute_force_posterior, count_kinks, filter_episode, finite_difference_grads,
                     kl_grid_minimizer, max_relative_error, relu_pattern, synthetic_models,
                     within_binomial_3sigma)
from test_distill import ensemble_buffer, random_members, random_states

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.toml")


def cli(*args):
    return main([str(a) for a in args])


@pytest.mark.criterion(1)
def test_filter_matches_brute_force(criterion):
    models = synthetic_models(0)
    start = time.perf_counter()
    worst = 0.0
    for seed in range(1000):
        beliefs, factors = filter_episode(seed, models)
        oracle = brute_force_posterior([0.5, 0.5], factors)
        worst = max(worst, float(np.max(np.abs(np.array(beliefs[-1]) - oracle))))
    elapsed = time.perf_counter() - start
    assert criterion.report(worst <= 1e-10 and elapsed < 10.0,
                            f"max deviation {worst:.2e} over 1000 episodes in {elapsed:.1f}s")


@pytest.mark.criterion(2)
def test_probe_update_exact(criterion):
    b = update_probe(Belief.uniform(), AgentType.ENEMY, 0.8)
    err = max(abs(b[AgentType.ALLY] - 0.2), abs(b[AgentType.ENEMY] - 0.8))
    assert criterion.report(err <= 1e-12, f"posterior {b.tolist()} (error {err:.1e})")


@pytest.mark.criterion(3)
def test_environment_constants(criterion):
    cfg = GameConfig()
    checks = {
        "world_size": cfg.world_size == 8.0, "tag_range": cfg.tag_range == 2.5,
        "probe_accuracy": cfg.probe_accuracy == 0.8, "r_tag_enemy": cfg.r_tag_enemy == 10.0,
        "r_tag_ally": cfg.r_tag_ally == -20.0, "r_tagged": cfg.r_tagged == -10.0,
        "tag_cost": cfg.tag_cost == -0.2, "probe_cost_unit": cfg.probe_cost_unit == 0.25,
        "distance_coeff": cfg.distance_coeff == 0.25, "distance_exponent": cfg.distance_exponent == 0.4,
    }

    def reward(action, count=0, d=0.0, tag=False, success=False, t=AgentType.ALLY):
        return protagonist_reward_given_type(
            StepFlags(action, tag, success, action == ProtagonistAction.PROBE, count, d), t, cfg)

    checks["probe cost 3rd"] = reward(ProtagonistAction.PROBE, count=3) == -0.75
    checks["distance 32"] = reward(ProtagonistAction.MOVE_UP, d=32.0) == -0.25 * 32.0 ** 0.4 == -1.0
    checks["tag enemy"] = reward(ProtagonistAction.TAG, tag=True, success=True, t=AgentType.ENEMY) == 10.0 - 0.2
    checks["tag ally"] = reward(ProtagonistAction.TAG, tag=True, success=True) == -20.0 - 0.2
    bad = [k for k, ok in checks.items() if not ok]
    assert criterion.report(not bad, f"{len(checks)} constants checked" + (f", mismatched {bad}" if bad else ""))


@pytest.mark.criterion(4)
def test_gradients_all_architectures(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}
    kinks = entries = 0
    dense = [("protagonist actor", (7, 64, 64, 6), "softmax"),
             ("protagonist critic", (13, 64, 64, 1), "linear"),
             ("opponent actor", (7, 64, 64, 4), "softmax"),
             ("opponent critic", (11, 64, 64, 1), "linear"),
             ("recurrent critic", (RAW_OBS_DIM + HIDDEN_SIZE + 6, 64, 64, 1), "linear")]
    for name, sizes, head in dense:
        net = DenseNet(sizes, head=head, rng=rng)
        x = rng.normal(size=(4, sizes[0]))
        proj = rng.normal(size=(4, sizes[-1]))
        _, cache = net.forward(x)
        analytic = net.backward(cache, proj)
        numeric = finite_difference_grads(lambda: float(np.sum(net(x) * proj)), net.params, h=1e-4,
                                          pattern_fn=lambda: relu_pattern(net.forward(x)[1]))
        errors[name] = max_relative_error(analytic, numeric, atol=1e-7)
        kinks += count_kinks(numeric)
        entries += sum(p.size for p in net.params)
    for name, head in (("recurrent actor", "softmax"), ("recurrent actor logits", "linear")):
        net = RecurrentNet(RAW_OBS_DIM, HIDDEN_SIZE, (64, 6), head=head, rng=rng)
        xs = rng.normal(size=(5, 2, RAW_OBS_DIM))
        proj = rng.normal(size=(5, 2, 6))
        hproj = rng.normal(size=(5, 2, HIDDEN_SIZE))

        def loss():
            out, c = net.forward(xs)
            return float(np.sum(out * proj) + np.sum(c.hs[1:] * hproj))

        _, cache = net.forward(xs)
        analytic = net.backward(cache, proj, grad_hidden=hproj)
        numeric = finite_difference_grads(loss, net.params, h=1e-4,
                                          pattern_fn=lambda: relu_pattern(net.forward(xs)[1].readout))
        errors[name] = max_relative_error(analytic, numeric, atol=1e-7)
        kinks += count_kinks(numeric)
        entries += sum(p.size for p in net.params)
    logits, q = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    _, grad = actor_objective_grad(softmax(logits), q, 0.1)
    numeric = finite_difference_grads(
        lambda: float(actor_objective_grad(softmax(logits), q, 0.1)[0].sum()), [logits], h=1e-6)
    errors["actor objective"] = max_relative_error([grad], numeric, atol=1e-7)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst <= 1e-4 and elapsed < 60.0 and kinks <= 0.05 * entries
    assert criterion.report(ok, f"worst relative error {worst:.1e} over {len(errors)} checks "
                                f"({kinks}/{entries} kink entries excluded) in {elapsed:.1f}s")


@pytest.mark.criterion(5)
def test_distillation_matches_average(criterion):
    start = time.perf_counter()
    tvs = {}
    for k in (2, 4):
        members = random_members(k, 10 + k)
        rng = np.random.default_rng(k)
        res = distill(ensemble_buffer(members, 20_000, rng), AgentType.ENEMY, rng=rng)
        test = random_states(np.random.default_rng(99), 1000)
        tvs[k] = float(total_variation(res.net(test), exact_average(members, test)).mean())
    elapsed = time.perf_counter() - start
    members = [[(0.9, 0.1), (0.2, 0.8), (0.5, 0.5)],
               [(0.3, 0.7), (0.6, 0.4), (0.1, 0.9)],
               [(0.6, 0.4), (0.7, 0.3), (0.35, 0.65)]]
    grid_err = max(abs(kl_grid_minimizer([m[s] for m in members], 1000)[0] - np.mean([m[s][0] for m in members]))
                   for s in range(3))
    ok = all(v <= 0.05 for v in tvs.values()) and elapsed < 120.0 and grid_err <= 1e-3
    assert criterion.report(ok, f"mean TV K=2 {tvs[2]:.4f}, K=4 {tvs[4]:.4f} in {elapsed:.1f}s; "
                                f"KL grid minimizer off the mean by {grid_err:.1e}")


@pytest.mark.criterion(6)
def test_annealer(criterion):
    meta = MetaConfig()
    wins = 0
    for seed in range(20):
        pop, _ = anneal(Population([0, 1, 2, 3], [4, 5]), lambda p: abs(p.K - 2), meta,
                        np.random.default_rng(seed), proposals=200)
        wins += pop.K == 2
    freq_ok = []
    for i, (delta, T) in enumerate([(-2.0, 30.0), (-1.0, 1.0), (-0.5, 0.2), (1.0, 5.0), (-2.0, 0.2)]):
        rng = np.random.default_rng(100 + i)
        p = math.exp(min(0.0, delta) / T)
        k = sum(accept(0.0, -delta, T, rng) for _ in range(10_000))
        freq_ok.append(within_binomial_3sigma(k, 10_000, p))
    assert criterion.report(wins >= 18 and all(freq_ok),
                            f"K=2 reached in {wins}/20 seeds; {sum(freq_ok)}/{len(freq_ok)} "
                            "acceptance frequencies within 3 sigma")


@pytest.mark.criterion(7)
def test_rho_assembly(criterion):
    rho = RobustnessReport.assemble(-14.4, -83.0, 4, 0.1, 1.0).rho
    assert criterion.report(abs(rho - 10.1) <= 1e-12, f"rho = {rho!r}")


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_training_beats_random_against_rush(criterion):
    cfg = GameConfig()
    opponent = ScriptedOpponentPolicy("rush", cfg)
    models = OpponentModelSet.scripted("rush", cfg)
    start = time.perf_counter()
    gaps = []
    for seed in range(3):
        run = train_vs_scripted("rush", 50_000, LearnerConfig(), cfg, seed)
        trained = evaluate_protagonist(run.protagonist, opponent, models, cfg, 500, seed=20_000 + seed)
        baseline = evaluate_protagonist(ScriptedProtagonist("uniform"), opponent, models, cfg, 500,
                                        seed=20_000 + seed)
        gaps.append(trained - baseline)
    elapsed = time.perf_counter() - start
    wins = sum(g >= 5.0 for g in gaps)
    assert criterion.report(wins == 3 and elapsed <= 600.0,
                            f"gaps over uniform random {[round(g, 2) for g in gaps]}, "
                            f"{wins}/3 seeds >= 5 in {elapsed:.0f}s")


@pytest.mark.criterion(9)
def test_deterministic_reruns(criterion, tmp_path):
    csvs = {}
    for name in ("a", "b"):
        d = tmp_path / name
        assert cli("train", "--config", SMOKE, "--out", d / "train", "--deterministic") == 0
        ckpt = d / "train" / "protagonist.ckpt"
        assert cli("evaluate", "--config", SMOKE, "--checkpoint", ckpt, "--out", d / "eval",
                   "--deterministic") == 0
        assert cli("meta", "--config", SMOKE, "--checkpoint", ckpt, "--out", d / "meta",
                   "--deterministic") == 0
        assert cli("trace", "--config", SMOKE, "--checkpoint", ckpt, "--opponent", "rush",
                   "--out", d / "trace", "--deterministic") == 0
        assert cli("report", d / "train", "--out", d / "report") == 0
        csvs[name] = {p.relative_to(d): p.read_bytes()
                      for p in sorted(d.rglob("*")) if p.suffix in (".csv", ".jsonl")}
    same = csvs["a"] == csvs["b"] and len(csvs["a"]) >= 6
    assert criterion.report(same, f"{len(csvs['a'])} CSV/trace files compared across two runs")


@pytest.mark.criterion(10)
def test_matrix_populates_every_cell(criterion, tmp_path, capsys):
    start = time.perf_counter()
    assert cli("matrix", "--config", SMOKE, "--out", tmp_path, "--deterministic") == 0
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    header = rows[0].split(",")
    cells = [dict(zip(header, r.split(","))) for r in rows[1:]]
    populated = [c for c in cells if c["runs"] == "1" and c["eval_protagonist_reward"] != ""]
    text = (tmp_path / "summary.txt").read_text()
    gap_lines = [l for l in text.splitlines() if "gap" in l]
    needed = ["ensemble vs single", "ensemble optimization", "evolution"]
    has_gaps = all(any(n in l for l in gap_lines) for n in needed) and "unavailable" not in text
    ok = len(cells) == 8 and len(populated) == 8 and has_gaps and elapsed <= 3600
    assert criterion.report(ok, f"{len(populated)}/8 cells populated, {len(gap_lines)} gap "
                                f"observations, {elapsed:.0f}s at smoke budget")
