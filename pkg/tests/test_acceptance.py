"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py``; the summary section at the
end repeats every verdict.  Criteria 5 and 8 share two full cross-validated
runs, so they take several minutes.
"""
import time

import numpy as np
import pytest
from scipy import stats

from gohscore.errors import InfeasibleCropError
from gohscore.harness.data import make_slice_dataset
from gohscore.harness.experiment import ExperimentConfig, run_cv
from gohscore.imagecore import Volume, read_volume, write_volume
from gohscore.metrics import bland_altman, icc_2_1, linear_fit, weighted_kappa, \
    wilcoxon_signed_rank
from gohscore.nnreg import NetSpec, Regressor, TrainConfig, train, write_loss_log
from gohscore.nnreg.training import evaluate, prepare_slice
from gohscore.sampling import SliceDataset, balanced_weights, feasible_crop_starts, \
    random_crop_z, sample_batch
from gohscore.synth import TextureParams, generate_healthy_phantom, synthesize

from oracles import (bland_altman_plain, feasible_starts_bruteforce, icc_definition,
                     kappa_loops, max_gradient_error, ols_lstsq, pixel_scores,
                     wilcoxon_enumerated)


def note(request, text):
    request.node.user_properties.append(("detail", text))


# ---------------------------------------------------------------------------

@pytest.mark.acceptance(1, "synthesis scores equal pixel recounts")
def test_synthesis_score_oracle(request):
    t0 = time.perf_counter()
    params = TextureParams()
    mismatches = bound_violations = 0
    for s in range(1000):
        base, lung = generate_healthy_phantom(np.random.SeedSequence([1, s]), (128, 128))
        _, scores, tr = synthesize(base, lung, params, np.random.default_rng([2, s]))
        if tuple(scores) != pixel_scores(tr.lesion_gg, tr.lesion_ret, tr.lung):
            mismatches += 1
        # the bound holds exactly on the pixel counts behind the percentages;
        # on the percentages, GG + RET may round one ulp below TOT
        g = np.count_nonzero(tr.lesion_gg)
        r = np.count_nonzero(tr.lesion_ret)
        u = np.count_nonzero(tr.lesion_gg | tr.lesion_ret)
        ok = max(g, r) <= u <= g + r
        ok &= max(scores.gg, scores.ret) <= scores.tot <= (scores.gg + scores.ret) * (1 + 1e-12)
        bound_violations += not ok
    elapsed = time.perf_counter() - t0
    note(request, f"{mismatches} mismatches, {bound_violations} bound violations, "
                  f"{elapsed:.1f} s")
    assert mismatches == 0 and bound_violations == 0
    assert elapsed < 60


@pytest.mark.acceptance(2, "balanced sampling on a skewed fixture")
def test_balanced_sampling(request):
    t0 = time.perf_counter()
    grades = np.array([0] * 80 + [5] * 10 + [50] * 10)
    scores = np.column_stack([grades, grades, np.zeros_like(grades)])
    ds = SliceDataset(np.zeros((100, 2, 2)), scores, [f"c{i}" for i in range(100)],
                      [1] * 100)
    _, drawn, _ = sample_batch(ds, balanced_weights(scores), 100_000, 0.0,
                               np.random.default_rng(0))
    counts = np.array([np.sum(drawn[:, 0] == g) for g in (0, 5, 50)])
    freq = counts / counts.sum()
    p = stats.chisquare(counts).pvalue
    elapsed = time.perf_counter() - t0
    note(request, f"freq {np.round(freq, 4).tolist()}, chi2 p={p:.3f}, {elapsed:.1f} s")
    assert counts.sum() == 100_000
    assert np.all(np.abs(freq - 1 / 3) <= 0.01)
    assert p > 0.01
    assert elapsed < 10


@pytest.mark.acceptance(3, "analytic gradients match finite differences")
def test_gradient_verification(request):
    t0 = time.perf_counter()
    net = Regressor(NetSpec(2, (16, 16), [4, 8], 3), seed=0, dtype=np.float64)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(4, 16, 16)), rng.normal(size=(4, 3))
    worst, probed = max_gradient_error(net, x, y, n_probe=200)
    elapsed = time.perf_counter() - t0
    note(request, f"{net.n_parameters()} params, {probed} probes, "
                  f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert net.n_parameters() <= 5000 and probed >= 100
    assert worst < 1e-4
    assert elapsed < 60


def _prepared(ds, spec):
    x = np.array([prepare_slice(s, spec) for s in ds.slices])
    return x, ds.scores / 100.0


@pytest.mark.acceptance(4, "overfit capacity and generalization sanity")
def test_overfit_and_generalize(request, tmp_path):
    t0 = time.perf_counter()
    spec = NetSpec(2, (64, 64), [8, 16, 32, 64], 3)
    cfg = TrainConfig(learning_rate=2e-3, batch=8, epochs=500)

    fixed = make_slice_dataset(4, seed=10, lesion_prob=0.5, max_axis_frac=0.4)
    fixed = fixed.subset(np.arange(16))
    x, y = _prepared(fixed, spec)
    net, log = train(Regressor(spec, seed=0, dtype=np.float32), (x, y), cfg, mae_scale=100.0)
    write_loss_log(tmp_path / "overfit_loss.csv", log)
    fit_mae = 100.0 * evaluate(net, x, y)[1]

    tr = make_slice_dataset(40, seed=11, lesion_prob=0.5, max_axis_frac=0.4)
    va = make_slice_dataset(20, seed=12, lesion_prob=0.5, max_axis_frac=0.4)
    xt, yt = _prepared(tr, spec)
    xv, yv = _prepared(va, spec)
    baseline = 100.0 * np.mean(np.abs(yv - yt.mean(axis=0)))
    net, glog = train(Regressor(spec, seed=1, dtype=np.float32), (xt, yt),
                      TrainConfig(learning_rate=2e-3, batch=8, epochs=60),
                      validation=(xv, yv), mae_scale=100.0)
    val_mae = 100.0 * evaluate(net, xv, yv)[1]
    elapsed = time.perf_counter() - t0
    note(request, f"16-slice MAE {fit_mae:.2f} after 500 epochs; val MAE {val_mae:.2f} vs "
                  f"mean-predictor {baseline:.2f} (ratio {val_mae / baseline:.2f}); "
                  f"{elapsed:.0f} s")
    assert (tmp_path / "overfit_loss.csv").read_text().count("\n") == 501
    assert len(tr) == 200 and len(va) == 100
    assert fit_mae < 5.0
    assert val_mae <= 0.6 * baseline
    assert elapsed < 600


# ---------------------------------------------------------------------------
# criteria 5 and 8 share two full runs

ACCEPTANCE_CONFIG = dict(
    seed=0, folds=4, n_volumes=64, n_slices=40,
    net_2d=NetSpec(2, (64, 64), [4, 8, 16, 16], 3),
    train=TrainConfig(learning_rate=2e-3, batch=8, epochs=5),
)


@pytest.fixture(scope="module")
def cv_runs(tmp_path_factory):
    cfg = ExperimentConfig(**ACCEPTANCE_CONFIG)
    assert cfg.phantom.depth == 64
    runs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        result = run_cv(cfg, out)
        runs.append((result, out, time.perf_counter() - t0))
    return runs


@pytest.mark.acceptance(5, "level pipeline on 64 phantom volumes")
def test_level_pipeline(request, cv_runs):
    result, _, elapsed = cv_runs[0]
    rows = dict(result.level_rows)
    pooled = rows["all"]
    per_level = ", ".join(f"{k[-1]}:{rows[k].mae:.2f}" for k in sorted(rows) if k != "all")
    note(request, f"pooled MAE {pooled.mae:.2f} slices, BA mean {pooled.bland_altman[0]:+.2f}, "
                  f"per-level MAE {per_level}; run {elapsed:.0f} s")
    assert len(result.level_predictions) == 5 * 64
    assert pooled.mae < 8.0
    assert abs(pooled.bland_altman[0]) <= 1.0
    assert elapsed < 900


@pytest.mark.acceptance(6, "metrics match brute-force oracles")
def test_metric_oracles(request):
    t0 = time.perf_counter()
    tol = 1e-9
    # kappa: operation examples plus random tables against explicit summation
    assert abs(weighted_kappa([0, 5, 20, 100], [0, 5, 20, 100]) - 1.0) <= tol
    assert abs(weighted_kappa([0, 5], [5, 0]) - kappa_loops([0, 5], [5, 0])) <= tol
    assert abs(weighted_kappa([0, 5], [5, 0]) + 1.0) <= tol
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.integers(0, 21, 15) * 5, rng.integers(0, 21, 15) * 5
        for w in ("linear", "quadratic"):
            ref = kappa_loops(a, b, w)
            assert abs(weighted_kappa(a, b, w) - ref) <= tol
            assert abs(weighted_kappa(b, a, w) - ref) <= tol
    # ICC
    fixture = np.array([[1, 2], [3, 4], [5, 6]], float)
    assert abs(icc_2_1(fixture) - icc_definition(fixture)) <= tol
    assert abs(icc_2_1([[1, 1], [2, 2], [4, 4]]) - 1.0) <= tol
    shifted = fixture + [0, 3]
    assert abs(icc_2_1(shifted) - icc_definition(shifted)) <= tol
    assert icc_2_1(shifted) < icc_2_1(fixture)
    for _ in range(100):
        t = rng.normal(size=(5, 3))
        assert abs(icc_2_1(t) - icc_definition(t)) <= tol
    # OLS
    assert np.allclose(linear_fit([0, 1, 2], [0, 1, 2]), (1, 0), atol=tol, rtol=0)
    assert np.allclose(linear_fit([1, 4, 6], [5, 11, 15]), (2, 3), atol=tol, rtol=0)
    assert np.allclose(linear_fit([0, 1, 2], [0, 0, 3]), (1.5, -0.5), atol=tol, rtol=0)
    assert np.allclose(linear_fit([0, 1, 2], [0, 0, 3]), ols_lstsq([0, 1, 2], [0, 0, 3]),
                       atol=tol, rtol=0)
    # Bland-Altman
    assert bland_altman([3, 4], [3, 4]) == (0.0, 0.0, 0.0)
    d = np.array([1, -1, 1, -1], float)
    assert np.allclose(bland_altman(d, np.zeros(4)), bland_altman_plain(d, np.zeros(4)),
                       atol=tol, rtol=0)
    assert np.allclose(bland_altman(d, np.zeros(4)),
                       (0.0, -1.96 * np.sqrt(4 / 3), 1.96 * np.sqrt(4 / 3)), atol=tol, rtol=0)
    # Wilcoxon: exact p against 2^n enumeration, 100 fixtures with n <= 12
    assert abs(wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5) - 0.0625) <= tol
    assert abs(wilcoxon_signed_rank([1, -1], [0, 0]) - 1.0) <= tol
    worst = 0.0
    for i in range(100):
        n = 1 + i % 12
        a = np.round(rng.normal(size=n), 1)   # rounding creates ties and zeros
        b = np.round(rng.normal(size=n), 1)
        if np.all(a == b):
            b[0] += 1.0
        worst = max(worst, abs(wilcoxon_signed_rank(a, b) - wilcoxon_enumerated(a, b)))
    elapsed = time.perf_counter() - t0
    note(request, f"worst Wilcoxon gap {worst:.1e}, {elapsed:.1f} s")
    assert worst <= tol
    assert elapsed < 30


@pytest.mark.acceptance(7, "crop feasibility equals brute force")
def test_crop_feasibility(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    infeasible = 0
    for _ in range(1000):
        depth = int(rng.integers(8, 120))
        crop = int(rng.integers(2, depth + 1))
        span = rng.uniform(0.05, 1.0) * (depth - 1)
        levels = np.sort(rng.uniform(0, span, 5)) + rng.uniform(0, depth - 1 - span)
        expect = feasible_starts_bruteforce(levels, depth, crop)
        assert list(feasible_crop_starts(levels, depth, crop)) == expect
        vol = Volume(np.arange(depth, dtype=float)[:, None, None] * np.ones((depth, 2, 2)),
                     (1.0, 1.0, 1.0))
        if expect:
            c, local = random_crop_z(vol, levels, (2, 2, crop), rng)
            assert int(c.voxels[0, 0, 0]) in expect
            assert np.all((local >= 0) & (local <= crop - 1))
        else:
            infeasible += 1
            with pytest.raises(InfeasibleCropError):
                random_crop_z(vol, levels, (2, 2, crop), rng)
    elapsed = time.perf_counter() - t0
    note(request, f"{infeasible} infeasible configurations, {elapsed:.2f} s")
    assert infeasible > 0
    assert elapsed < 5


@pytest.mark.acceptance(8, "reproducible reports and bitwise volume round trips")
def test_reproducibility_and_io(request, cv_runs, tmp_path):
    (_, out_a, ta), (_, out_b, tb) = cv_runs
    reports = sorted(p.name for p in out_a.glob("*report*.csv"))
    same = [(out_a / n).read_bytes() == (out_b / n).read_bytes() for n in reports]
    rng = np.random.default_rng(0)
    trips = 0
    for i in range(10):
        nz, ny, nx = rng.integers(2, 24, 3)
        vox = rng.normal(0, 500, (nz, ny, nx)).astype(np.float32)
        vol = Volume(vox, tuple(rng.uniform(0.3, 3.0, 3)), origin_z=float(rng.normal(0, 50)))
        write_volume(tmp_path / f"v{i}.mhd", vol)
        back = read_volume(tmp_path / f"v{i}.mhd")
        trips += (back.voxels.astype(np.float32).tobytes() == vox.tobytes()
                  and back.spacing == vol.spacing and back.origin_z == vol.origin_z)
    note(request, f"{sum(same)}/{len(reports)} report CSVs identical, {trips}/10 round trips; "
                  f"runs {ta:.0f} s + {tb:.0f} s")
    assert len(reports) >= 4 and all(same)
    assert trips == 10
    assert ta + tb < 900
