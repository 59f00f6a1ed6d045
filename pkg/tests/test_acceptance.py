"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also collected in the terminal summary.
"""
import os
import zlib

import numpy as np
import pytest

import gradcases
import oracles
from corehts.data import generate_synthetic, load_panel, prepare
from corehts.harness.bound import verify_bound
from corehts.harness.config import TrainConfig
from corehts.harness.experiments import DEFAULT_WEIGHTS, noisy_experiment, sweep_weights
from corehts.harness.training import train
from corehts.hierarchy import build_aggregation, coherency, projection_matrix, summing_matrix
from corehts.losses import FinalLinearLayer, coherency_bound, core_regularizer
from corehts.metrics import crps_empirical, mse_per_level, wmape
from corehts.models import DropoutForecaster, VaeForecaster, build_model, sample_forecasts
from corehts.numerics import TRAIN, Graph

N_POINTS = 50
SEEDS = range(10)
SWEEP = (0.0, *DEFAULT_WEIGHTS)
# desk-scale training: a 53-series tree, 300 steps
DESK = dict(hidden=32, max_epochs=2000)


def desk_data(seed):
    panel, spec = generate_synthetic([4, 3, 3], 4, 300, seed=seed)
    return prepare(panel, spec)


def random_layer(rng, m, d, coherent_with=None):
    W = rng.standard_normal((m, d))
    b = rng.standard_normal(m)
    if coherent_with is not None:
        S = summing_matrix(coherent_with)
        W = S @ rng.standard_normal((S.shape[1], d))
        b = S @ rng.standard_normal(S.shape[1])
    return FinalLinearLayer(W, b)


def make_coherent(model, A, rng):
    S = summing_matrix(A)
    model.params["W"].value = S @ rng.standard_normal((S.shape[1], model.params["W"].shape[1]))
    model.params["b"].value = S @ rng.standard_normal(S.shape[1])


@pytest.fixture(scope="module")
def point_runs():
    """Per seed: the weight sweep over {0} plus the grid, and a projection run."""
    out = []
    for seed in SEEDS:
        data = desk_data(seed)
        cfg = TrainConfig(variant="core", seed=seed, **DESK)
        sweep = sweep_weights(cfg, data, SWEEP)
        proj = train(cfg.replace(variant="projection"), data).report
        out.append((sweep, proj))
    return out


def test_criterion_1_gradients(record_criterion):
    worst, failures = 0.0, []
    for name in gradcases.OP_CASES:
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for i in range(N_POINTS):
            ok, err = gradcases.check_op(name, rng, i)
            worst = max(worst, err)
            if not ok:
                failures.append((name, i, err))
    for variant, mode in gradcases.MODEL_COMBOS:
        rng = np.random.default_rng(zlib.crc32(f"{variant}/{mode}".encode()))
        for i in range(N_POINTS):
            ok, err = gradcases.check_model(variant, mode, rng)
            worst = max(worst, err)
            if not ok:
                failures.append((f"{variant}/{mode}", i, err))
    n = N_POINTS * (len(gradcases.OP_CASES) + len(gradcases.MODEL_COMBOS))
    detail = (f"{len(gradcases.OP_CASES)} ops + {len(gradcases.MODEL_COMBOS)} models x {N_POINTS} points, "
              f"{n - len(failures)}/{n} ok, worst rel err {worst:.2e}")
    assert record_criterion(1, not failures, detail), failures[:5]


def test_criterion_2_identities(record_criterion, tree8):
    rng = np.random.default_rng(2)
    checks = {}
    specs = [tree8[0], generate_synthetic([4, 3, 3], 4, 10, seed=0)[1], generate_synthetic(2, 5, 10, seed=0)[1]]
    worst_cAy = worst_cPy = worst_sym = worst_idem = 0.0
    for spec in specs:
        A = build_aggregation(spec)
        E = A.entries
        checks.setdefault("A.A = A", True)
        checks["A.A = A"] &= np.array_equal(E @ E, E)
        P = projection_matrix(summing_matrix(A))
        worst_sym = max(worst_sym, float(np.max(np.abs(P - P.T))))
        worst_idem = max(worst_idem, float(np.max(np.abs(P @ P - P))))
        for _ in range(200):
            y = rng.standard_normal(A.m) * rng.uniform(0.1, 100)
            n = np.linalg.norm(y)
            worst_cAy = max(worst_cAy, coherency(E @ y, A) / n)
            worst_cPy = max(worst_cPy, coherency(P @ y, A) / n)
    checks["c(Ay) <= 1e-10|y|"] = worst_cAy <= 1e-10
    checks["P symmetric"] = worst_sym <= 1e-10
    checks["P idempotent"] = worst_idem <= 1e-10
    checks["c(Py) <= 1e-8|y|"] = worst_cPy <= 1e-8

    # l_c = 0 layers: directly on 1000 random z, and through a model on 1000 windows
    A = tree8[1]
    worst_lc0 = 0.0
    for _ in range(1000):
        L = random_layer(rng, 8, 6, coherent_with=A)
        z = rng.standard_normal(6) * rng.uniform(0.1, 10)
        worst_lc0 = max(worst_lc0, coherency(L(z), A))
    model = build_model("core", "point", 8, hidden=6, lag=3, rng=rng)
    make_coherent(model, A, rng)
    lc = core_regularizer(model.final_layer, A).item()
    X = rng.standard_normal((1000, 3, 8)) * 5
    for _ in range(3):
        model.forward(Graph(), X[:100], TRAIN, rng)
    worst_model = max(coherency(row, A) for row in model.predict(X))
    checks["l_c=0 => c <= 1e-6"] = max(worst_lc0, worst_model) <= 1e-6 and lc <= 1e-12
    detail = (f"max c(Ay)/|y| {worst_cAy:.1e}, |P-P'| {worst_sym:.1e}, |PP-P| {worst_idem:.1e}, "
              f"c(Py)/|y| {worst_cPy:.1e}, c at l_c=0 {max(worst_lc0, worst_model):.1e}")
    assert record_criterion(2, all(checks.values()), detail), checks


def test_criterion_3_bound_inequality(record_criterion, tree8, point_runs):
    _, A = tree8
    rng = np.random.default_rng(3)
    worst = 0.0
    bad = 0
    for _ in range(1000):
        d = int(rng.integers(1, 40))
        L = random_layer(rng, 8, d)
        z = rng.standard_normal((1, d)) * rng.uniform(0.01, 100)
        c = coherency(L(z[0]), A)
        bnd = coherency_bound(L, A, z)[0]
        worst = max(worst, c / bnd)
        bad += c > bnd * (1 + 1e-9)
    passes = violations = 0
    max_ratio = 0.0
    for sweep, proj in point_runs:
        for rep in (*sweep.reports, proj):
            passes += rep.bound_check["forward_passes"]
            violations += rep.bound_check["violations"]
            max_ratio = max(max_ratio, rep.bound_check["max_ratio"])
    detail = (f"random pairs: {bad}/1000 violations (max ratio {worst:.6f}); training: {violations} violations "
              f"over {passes} forward passes in {len(point_runs) * (len(SWEEP) + 1)} runs (max ratio {max_ratio:.6f})")
    assert record_criterion(3, bad == 0 and violations == 0 and passes > 0, detail)


def test_criterion_4_tail_bound(record_criterion):
    rows = []
    for d in (8, 32, 128):
        rows += verify_bound(d, 100_000, seed=d)
    print(f"{'d':>4} {'delta':>6} {'freq':>9} {'4exp(-δ²/8d)':>13} {'4exp(-δ²/8d²)':>14}")
    for r in rows:
        print(f"{r['d']:>4} {r['delta']:>6g} {r['violation_freq']:>9.5f} {min(1.0, r['bound_8d']):>13.4g}"
              f" {min(1.0, r['bound_8d2']):>14.4g}")
    ok = all(r["holds_8d"] for r in rows)
    n_stmt = sum(r["holds_8d2"] for r in rows)
    detail = (f"{sum(r['holds_8d'] for r in rows)}/{len(rows)} rows within the 8d bound "
              f"(8d^2 variant, printed for comparison: {n_stmt}/{len(rows)})")
    assert record_criterion(4, ok, detail)


def test_criterion_5_point_forecasts(record_criterion, point_runs):
    coh = {"base": [], "core": [], "projection": []}
    wm = {"base": [], "core": []}
    interior = 0
    for seed, (sweep, proj) in zip(SEEDS, point_runs):
        base = sweep.reports[0]
        # CoRe: best validation weight among the nonzero grid
        k = 1 + int(np.argmin(sweep.val_scores[1:]))
        core = sweep.reports[k]
        interior += sweep.best_index != 0
        coh["base"].append(base.test["coherency"])
        coh["core"].append(core.test["coherency"])
        coh["projection"].append(proj.test["coherency"])
        wm["base"].append(base.test["wmape"])
        wm["core"].append(core.test["wmape"])
        print(f"seed {seed}: w*={SWEEP[k]:g} coherency base {base.test['coherency']:.4f} core "
              f"{core.test['coherency']:.4f} proj {proj.test['coherency']:.1e}; wmape base "
              f"{base.test['wmape']:.4f} core {core.test['wmape']:.4f}; sweep argmin w={sweep.best_weight:g}")
    m = {k: float(np.mean(v)) for k, v in coh.items()}
    w = {k: float(np.mean(v)) for k, v in wm.items()}
    a = m["projection"] <= 1e-8 and m["projection"] < m["core"] < m["base"]
    b = w["core"] <= w["base"]
    c = interior >= 6
    detail = (f"(a) coherency proj {m['projection']:.1e} < core {m['core']:.4f} < base {m['base']:.4f}: {a}; "
              f"(b) wmape core {w['core']:.4f} <= base {w['base']:.4f}: {b}; "
              f"(c) argmin at w != 0 in {interior}/10 seeds: {c}")
    assert record_criterion(5, a and b and c, detail)


def test_criterion_6_noisy_data(record_criterion):
    panel, spec = generate_synthetic([4, 3, 3], 4, 300, seed=100)
    cfg = TrainConfig(seed=0, **DESK)
    res = noisy_experiment(panel, spec, cfg, n_datasets=20, drop=0.2, variants=("base", "core", "projection"),
                           seed=0, weights=DEFAULT_WEIGHTS)
    table = {row["variant"]: row for row in res.table()}
    for v, row in table.items():
        print(f"{v:>11}: coherency {row['coherency_mean']:.4g} ± {row['coherency_std']:.2g}  "
              f"wmape {row['wmape_mean']:.4g} ± {row['wmape_std']:.2g}  (n={row['n_runs']})")
    pm, ps = table["projection"]["coherency_mean"], table["projection"]["coherency_std"]
    proj_zero = pm <= 1e-8 and ps <= 1e-8
    shown = f"{pm:.0f} ± {ps:.0f}" if proj_zero else f"{pm:.2g} ± {ps:.2g}"
    ordered = table["core"]["coherency_mean"] < table["base"]["coherency_mean"]
    detail = (f"20 datasets, projection {shown}; core {table['core']['coherency_mean']:.4f} < "
              f"base {table['base']['coherency_mean']:.4f}: {ordered}")
    assert record_criterion(6, proj_zero and ordered and len(res.datasets) == 20, detail)


def test_criterion_7_distributional(record_criterion, tree8):
    _, A = tree8
    rng = np.random.default_rng(7)
    worst = 0.0
    for cls in (VaeForecaster, DropoutForecaster):
        for _ in range(5):
            model = cls(8, hidden=6, lag=3, rng=rng)
            make_coherent(model, A, rng)
            X = rng.standard_normal((40, 3, 8)) * 3
            for _ in range(3):
                model.forward(Graph(), X, TRAIN, rng)
            s = sample_forecasts(model, X, 100, rng)
            worst = max(worst, max(coherency(row, A) for row in s.reshape(-1, 8)))
    samples_ok = worst <= 1e-6

    crps_ok = (crps_empirical(np.array([[0.0], [2.0]]), np.array([0.0])) == 0.5
               and crps_empirical(np.full((4, 3), 0.7), np.full(3, 0.7)) == 0.0
               and crps_empirical(np.full((6, 1), 2.5), np.array([-1.0])) == 3.5)

    means = {}
    for mode in ("vae", "dropout"):
        for variant in ("base", "core"):
            vals = []
            for seed in range(3):
                cfg = TrainConfig(variant=variant, mode=mode, weight=1e-2, seed=seed, **DESK)
                vals.append(train(cfg, desk_data(seed)).report.test["sample_coherency"])
            means[(mode, variant)] = float(np.mean(vals))
            print(f"{mode:>7} {variant:>4}: sample coherency per seed {np.round(vals, 4).tolist()}")
    lower = all(means[(m, "core")] < means[(m, "base")] for m in ("vae", "dropout"))
    detail = (f"coherent-decoder samples max c {worst:.1e}; CRPS examples exact: {crps_ok}; mean sample coherency "
              + ", ".join(f"{m} core {means[(m, 'core')]:.4f} vs base {means[(m, 'base')]:.4f}"
                          for m in ("vae", "dropout")))
    assert record_criterion(7, samples_ok and crps_ok and lower, detail)


def test_criterion_8_metric_oracles(record_criterion, tree8):
    spec, A = tree8
    levels = [spec.level[n] for n in spec.node_ids]
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(500):
        y = rng.uniform(0.5, 3.0, (8, 1))
        yhat = y + rng.standard_normal((8, 1))
        worst = max(worst, abs(wmape(yhat, y) - oracles.wmape(yhat.tolist(), y.tolist())))
        lv = mse_per_level(yhat, y, spec)
        ref = oracles.mse_levels(yhat.tolist(), y.tolist(), levels)
        worst = max(worst, max(abs(lv[k] - ref[k]) for k in ref))
        v = yhat[:, 0]
        worst = max(worst, abs(coherency(v, A) - oracles.coherency(v.tolist(), A.entries.tolist())))
        n = int(rng.integers(1, 11))
        s = rng.standard_normal((n, 1, 1))
        yy = rng.standard_normal((1, 1))
        worst = max(worst, abs(crps_empirical(s, yy) - oracles.crps(s.tolist(), yy.tolist())))
    assert record_criterion(8, worst <= 1e-12, f"500 instances, max abs deviation {worst:.1e}")


LABOUR = (os.environ.get("COREHTS_LABOUR_VALUES"), os.environ.get("COREHTS_LABOUR_HIERARCHY"))


@pytest.mark.skipif(not all(LABOUR), reason="set COREHTS_LABOUR_VALUES and COREHTS_LABOUR_HIERARCHY")
def test_criterion_9_labour(record_criterion):
    panel, spec = load_panel(*LABOUR)
    data = prepare(panel, spec)
    cfg = TrainConfig(variant="core", seed=0)
    sweep = sweep_weights(cfg, data, SWEEP)
    base = sweep.reports[0]
    k = 1 + int(np.argmin(sweep.val_scores[1:]))
    core = sweep.reports[k]
    ok = core.test["coherency"] < base.test["coherency"]
    # reference WMAPE for this dataset; reported, not asserted
    ref = {"base": 0.45, "core": 0.40}
    within = {v: r.test["wmape"] <= 2 * ref[v] for v, r in (("base", base), ("core", core))}
    detail = (f"{panel.m} series x {panel.S} steps; coherency core {core.test['coherency']:.4f} < base "
              f"{base.test['coherency']:.4f}: {ok}; wmape base {base.test['wmape']:.3f} core "
              f"{core.test['wmape']:.3f} (within 2x of reference: {within})")
    assert record_criterion(9, ok, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-v"]))
