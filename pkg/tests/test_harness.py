import json
import logging

import numpy as np
import pytest

from gohscore.errors import DivergenceError, FormatError
from gohscore.harness import (ExperimentConfig, PhantomVolumeSpec, assign_folds, cascade_predict,
                              generate_phantom_volume, load_config, rater_agreement, run_cv,
                              run_score_ablation)
from gohscore.harness.data import (make_slice_dataset, make_volume_set, read_slice_dataset,
                                   read_volume_set, write_slice_dataset, write_volume_set)
from gohscore.harness.experiment import (LEVEL_PRED_COLUMNS, level_report_rows,
                                         read_predictions, score_report_rows)
from gohscore.harness.phantoms import marker_template
from gohscore.harness.reports import format_table3, write_table3_csv
from gohscore.imagecore import extract_slice
from gohscore.metrics import wilcoxon_signed_rank
from gohscore.nnreg.network import NetSpec
from gohscore.nnreg.training import TrainConfig, prepare_slice
from gohscore.sampling import LEVEL_ORDER
from gohscore.synth import round_to_grade

from helpers import rater_csv, tiny_config


class TestPhantoms:
    def test_deterministic(self):
        a, la = generate_phantom_volume(PhantomVolumeSpec(), 5)
        b, lb = generate_phantom_volume(PhantomVolumeSpec(), 5)
        assert np.array_equal(a.voxels, b.voxels) and np.array_equal(la, lb)

    def test_levels_ordered_and_inside(self):
        spec = PhantomVolumeSpec()
        for s in range(20):
            vol, levels = generate_phantom_volume(spec, s)
            assert np.all(np.diff(levels) >= 2)
            assert 0 <= levels[0] and levels[-1] <= vol.dims[2] - 1

    def test_marker_peak_at_level(self):
        spec = PhantomVolumeSpec()
        for s in range(10):
            vol, levels = generate_phantom_volume(spec, s)
            bg = np.median(vol.voxels, axis=0)
            for lvl, truth in zip(LEVEL_ORDER, levels):
                tpl = marker_template(lvl, spec.size)
                resp = [(tpl * (img - bg)).sum() for img in vol.voxels]
                assert abs(int(np.argmax(resp)) - truth) <= 1.0

    @pytest.mark.parametrize("kw", [dict(level_fractions=(0.5, 0.4, 0.6, 0.7, 0.8)),
                                    dict(depth=8), dict(jitter=0.2),
                                    dict(level_fractions=(0.01, 0.3, 0.5, 0.7, 0.8))])
    def test_spec_validated(self, kw):
        with pytest.raises(ValueError):
            PhantomVolumeSpec(**kw)


class TestFolds:
    def test_partition_and_balance(self):
        ids = [f"c{i}" for i in range(16)]
        folds = assign_folds(ids, 4, seed=0)
        assert set(folds) == set(ids)
        sizes = np.bincount(list(folds.values()), minlength=4)
        assert list(sizes) == [4, 4, 4, 4]

    def test_order_invariant(self):
        ids = [f"c{i}" for i in range(16)]
        rev = list(reversed(ids)) + ids[:3]
        assert assign_folds(ids, 4, 7) == assign_folds(rev, 4, 7)

    def test_seed_changes_assignment(self):
        ids = [f"c{i}" for i in range(16)]
        assert assign_folds(ids, 4, 0) != assign_folds(ids, 4, 1)


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = load_config(path)
        assert back == cfg

    def test_unknown_keys(self, tmp_path):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"sed": 1})
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"train": {"lr": 0.1}})
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError):
            load_config(path)

    @pytest.mark.parametrize("kw", [dict(folds=1), dict(synth_prob=1.5), dict(n_slices=12),
                                    dict(tasks=("levels", "hc")), dict(crop_dims=(16, 16, 16)),
                                    dict(n_volumes=1)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            tiny_config(**kw)


class TestDataIO:
    def test_slice_dataset_roundtrip(self, tmp_path):
        ds = make_slice_dataset(3, seed=2, size=32, lesion_prob=0.7)
        assert len(ds) == 15 and list(ds.levels[:5]) == [1, 2, 3, 4, 5]
        assert all(round_to_grade(g) == g for g in ds.scores.ravel())
        write_slice_dataset(tmp_path, ds)
        back = read_slice_dataset(tmp_path / "dataset.csv")
        assert np.array_equal(back.scores, ds.scores)
        assert list(back.case_ids) == list(ds.case_ids)
        assert np.array_equal(back.slices, ds.slices.astype(np.float32))

    def test_dataset_missing_column(self, tmp_path):
        (tmp_path / "d.csv").write_text("case_id,level,slice_path,tot,gg\n")
        with pytest.raises(FormatError) as exc:
            read_slice_dataset(tmp_path / "d.csv")
        assert exc.value.field == "ret"

    def test_volume_set_roundtrip(self, tmp_path):
        vols = make_volume_set(2, PhantomVolumeSpec(depth=32, size=16), seed=3)
        write_volume_set(tmp_path, vols)
        back = read_volume_set(tmp_path)
        for (ca, va, la), (cb, vb, lb) in zip(vols, back):
            assert ca == cb and np.array_equal(la, lb)
            assert np.array_equal(vb.voxels, va.voxels.astype(np.float32))

    def test_volume_set_incomplete(self, tmp_path):
        write_volume_set(tmp_path, make_volume_set(1, PhantomVolumeSpec(depth=32, size=16), 0))
        lines = (tmp_path / "levels.csv").read_text().splitlines()
        (tmp_path / "levels.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(FormatError):
            read_volume_set(tmp_path)


@pytest.fixture(scope="module")
def cv_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cv")
    cfg = tiny_config()
    return cfg, run_cv(cfg, out), out


class TestRunCV:
    def test_counts(self, cv_run):
        cfg, res, _ = cv_run
        assert len(res.level_predictions) == 5 * cfg.n_volumes
        assert len(res.score_predictions) == cfg.n_slices
        assert {r["fold"] for r in res.score_predictions} == set(range(cfg.folds))
        assert set(res.fold_level_rows) == set(range(cfg.folds))

    def test_outputs(self, cv_run):
        cfg, _, out = cv_run
        for name in ("config.json", "levels_predictions.csv", "levels_report.csv",
                     "scores_predictions.csv", "scores_report.csv", "table1.txt",
                     "table2.txt", "loss_levels_fold0.csv", "loss_scores_fold1.csv"):
            assert (out / name).exists(), name
        assert load_config(out / "config.json") == cfg

    def test_reports_recomputable_from_predictions(self, cv_run):
        cfg, res, out = cv_run
        kind, preds = read_predictions(out / "levels_predictions.csv")
        assert kind == "levels"
        assert [r.mae for _, r in level_report_rows(preds)] == \
            [r.mae for _, r in res.level_rows]
        kind, preds = read_predictions(out / "scores_predictions.csv")
        assert kind == "scores"
        again = score_report_rows(preds, cfg.kappa_weighting)
        for (p1, a), (p2, b) in zip(again, res.score_rows):
            assert p1 == p2 and a.mae == b.mae and a.bland_altman == b.bland_altman

    def test_deterministic(self, cv_run, tmp_path):
        cfg, _, out = cv_run
        run_cv(cfg, tmp_path)
        for name in ("levels_report.csv", "scores_report.csv", "scores_predictions.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_bad_prediction_header(self, tmp_path):
        (tmp_path / "p.csv").write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            read_predictions(tmp_path / "p.csv")
        (tmp_path / "q.csv").write_text(",".join(LEVEL_PRED_COLUMNS) + "\nv,0,1,x,2\n")
        with pytest.raises(FormatError):
            read_predictions(tmp_path / "q.csv")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_fold(self):
        cfg = tiny_config(tasks=("scores",), train=TrainConfig(learning_rate=1e30, epochs=3))
        with pytest.raises(DivergenceError) as exc:
            run_cv(cfg)
        assert exc.value.fold == 0 and "fold 0" in str(exc.value)


def test_ablation_chain(tmp_path):
    cfg = tiny_config(tasks=("scores",))
    table = run_score_ablation(cfg, tmp_path)
    assert [name for name, _ in table] == ["plain", "balanced", "balanced+synthesis"]
    assert all(rep.wilcoxon_p is None for _, rep in table[0][1])
    _, plain = read_predictions(tmp_path / "ablation_plain_predictions.csv")
    _, bal = read_predictions(tmp_path / "ablation_balanced_predictions.csv")
    err = lambda rs: np.abs([r["tot_pred"] - r["tot_true"] for r in rs])
    try:
        expect = wilcoxon_signed_rank(err(bal), err(plain))
    except ValueError:
        expect = None
    got = table[1][1][0][1].wilcoxon_p
    assert got == expect or (expect is not None and np.isnan(expect) and np.isnan(got))
    assert (tmp_path / "table2_ablation.txt").exists()


class _LevelStub:
    def __init__(self, spec, raw):
        self.spec, self.raw = spec, np.asarray(raw, float)

    def forward(self, x):
        return self.raw[None]


class _ScoreStub:
    spec = NetSpec(2, (16, 16), [2], 3)

    def __init__(self):
        self.seen = []

    def forward(self, x):
        self.seen.append(np.array(x))
        return np.array([[0.231, 1.7, -0.2]])


class TestCascade:
    def test_feeds_selected_slices(self, caplog):
        vol, _ = generate_phantom_volume(PhantomVolumeSpec(depth=32, size=16), 4)
        spec3 = NetSpec(3, (24, 16, 16), [2], 5)
        raw = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
        net2 = _ScoreStub()
        with caplog.at_level(logging.INFO, logger="gohscore.harness.experiment"):
            out = cascade_predict(_LevelStub(spec3, raw), net2, vol)
        cont = raw * 23 + 4
        assert [r.level for r in out] == list(LEVEL_ORDER)
        assert np.allclose([r.continuous for r in out], cont)
        assert [r.index for r in out] == [int(np.floor(c + 0.5)) for c in cont]
        for r, x in zip(out, net2.seen):
            ref = prepare_slice(extract_slice(vol, r.index), net2.spec, (-1000.0, 400.0))
            assert np.array_equal(x, ref)
            assert r.scores == (23.1, 100.0, 0.0) and r.grades == (25, 100, 0)
        assert sum("level" in m for m in caplog.messages) == 5

    def test_clamps_out_of_range(self):
        vol, _ = generate_phantom_volume(PhantomVolumeSpec(depth=32, size=16), 4)
        out = cascade_predict(_LevelStub(NetSpec(3, (24, 16, 16), [2], 5),
                                         [-0.5, 0.1, 0.2, 0.3, 2.0]), _ScoreStub(), vol)
        assert out[0].index == 0 and out[-1].index == 31


class TestRaterAgreement:
    def _rows(self):
        cons = [("a", 1, 10, 5, 5), ("a", 2, 30, 20, 10), ("b", 1, 0, 0, 0), ("b", 3, 55, 40, 15)]
        rows = [(c, l, "consensus", "", t, g, r) for c, l, t, g, r in cons]
        rows += [(c, l, "model", "", t, g, r) for c, l, t, g, r in cons]
        rows += [(c, l, "r2", "s1", t + 5, g, r) for c, l, t, g, r in cons]
        rows += [(c, l, "r1", "s2", t, g, r) for c, l, t, g, r in cons]
        rows += [(c, l, "r1", "s1", t, g + 5, r) for c, l, t, g, r in cons]
        return rows

    def test_order_and_values(self, tmp_path):
        rater_csv(tmp_path / "t.csv", self._rows())
        rep = rater_agreement(tmp_path / "t.csv")
        assert [n for n, _ in rep] == ["r1_s1", "r1_s2", "r2_s1", "model"]
        model = dict(rep)["model"]
        for p in ("TOT", "GG", "RET"):
            mae, std, wk, icc = model[p]
            assert (mae, std, wk) == (0.0, 0.0, 1.0) and icc == pytest.approx(1.0)
        mae, std, _, _ = dict(rep)["r2_s1"]["TOT"]
        assert (mae, std) == (5.0, 0.0)

    def test_outputs(self, tmp_path):
        rater_csv(tmp_path / "t.csv", self._rows())
        rep = rater_agreement(tmp_path / "t.csv")
        write_table3_csv(tmp_path / "t3.csv", rep)
        assert len((tmp_path / "t3.csv").read_text().splitlines()) == 5
        assert format_table3(rep).splitlines()[-1].startswith("model")

    def test_missing_consensus_case(self, tmp_path):
        rows = self._rows() + [("z", 1, "r1", "s1", 5, 5, 0)]
        rater_csv(tmp_path / "t.csv", rows)
        with pytest.raises(FormatError):
            rater_agreement(tmp_path / "t.csv")

    def test_no_consensus(self, tmp_path):
        rater_csv(tmp_path / "t.csv", [r for r in self._rows() if r[2] != "consensus"])
        with pytest.raises(FormatError):
            rater_agreement(tmp_path / "t.csv")

    def test_duplicate(self, tmp_path):
        rows = self._rows()
        rater_csv(tmp_path / "t.csv", rows + [rows[-1]])
        with pytest.raises(FormatError):
            rater_agreement(tmp_path / "t.csv")
