import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from adbank.adapters import init_adapter_set, read_bank_checkpoint
from adbank.errors import ConfigError, DataError
from adbank.featio import load_manifest, read_text_bank
from adbank.harness import (
    ScenarioSpec,
    SynthSpec,
    evaluate_classes,
    evaluate_zero_shot,
    load_report_csv,
    load_training_samples,
    render_table,
    report_from_dict,
    report_to_dict,
    run_scenario,
    scenario_from_dict,
    select_budget,
    synth_class_names,
    synth_generate,
    write_report_csv,
)
from adbank.metrics import ClassEval, make_report
from adbank.numcore import RandomStream
from adbank.scoring import ScoreConfig
from adbank.training import TrainConfig

FAST_TRAIN = TrainConfig(epochs_base=2, epochs_task=2)
FAST_SPEC = dict(n_classes=5, train_normals=3, train_anomalies=3,
                 test_normals=4, test_anomalies=4, seed=3)


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def make_scenario(data_dir, names, tasks, holdout=(), seed=5, shots=3):
    return ScenarioSpec(
        name="t",
        base_classes=list(names),
        tasks=[list(t) for t in tasks],
        manifest_path=str(data_dir / "manifest.json"),
        text_bank_path=str(data_dir / "textbank.cmtx"),
        shots_normal=shots,
        shots_anomalous=shots,
        zero_shot_holdout=[list(g) for g in holdout],
        seed=seed,
    )


@pytest.fixture(scope="module")
def synth_tree(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("synth")
    manifest = synth_generate(SynthSpec(**FAST_SPEC), data_dir)
    return data_dir, manifest


class TestSynthGenerate:
    def test_same_seed_byte_identical_tree(self, tmp_path):
        synth_generate(SynthSpec(**FAST_SPEC), tmp_path / "a")
        synth_generate(SynthSpec(**FAST_SPEC), tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_manifest_loads_and_counts(self, synth_tree):
        data_dir, _ = synth_tree
        manifest = load_manifest(data_dir / "manifest.json")
        assert len(manifest.classes) == 5
        entry = manifest.classes[0]
        assert len(entry.train_normals) == 3
        assert len(entry.train_anomalies) == 3
        assert len(entry.test_samples) == 8

    def test_margin_preset_oracle_pixel_ap(self, synth_tree):
        # Nearest-text-vector oracle (fresh near-zero adapters, alpha=1).
        data_dir, manifest = synth_tree
        text = read_text_bank(data_dir / "textbank.cmtx")
        oracle = init_adapter_set([16, 16, 16, 16], RandomStream(0))
        report = evaluate_classes(
            oracle, synth_class_names(5), manifest, text, 1.0, ScoreConfig(), 0
        )
        assert report.acc_pixel >= 0.9

    def test_mask_geometry(self, synth_tree):
        data_dir, manifest = synth_tree
        ref = manifest.classes[0].train_anomalies[0]
        from adbank.featio import load_sample

        sample = load_sample(manifest, "class00", ref)
        assert sample.mask.shape == (16, 16)  # 8x8 grid at mask_scale 2
        area = sample.mask.mean()
        assert 0.05 - 1e-9 <= area <= 0.3 + 1e-9


class TestBudget:
    def test_subsample_deterministic(self, synth_tree):
        _, manifest = synth_tree
        refs = manifest.classes[0].train_normals
        a = select_budget(refs, 2, RandomStream(1), "x")
        b = select_budget(refs, 2, RandomStream(1), "x")
        assert [r.sample_id for r in a] == [r.sample_id for r in b]
        assert len(set(r.sample_id for r in a)) == 2

    def test_shortfall_is_data_error(self, synth_tree):
        _, manifest = synth_tree
        refs = manifest.classes[0].train_normals
        with pytest.raises(DataError, match="budget shortfall"):
            select_budget(refs, 99, RandomStream(1), "class00 train normals")

    def test_load_training_samples_respects_budget(self, synth_tree):
        _, manifest = synth_tree
        samples = load_training_samples(
            manifest, ["class00", "class01"], 2, 1, RandomStream(2)
        )
        assert len(samples) == 6  # (2 normal + 1 anomalous) per class


class TestScenarioSpec:
    def test_overlapping_holdout_rejected_naming_class(self, synth_tree):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec = make_scenario(data_dir, names[:2], [names[2:3]], holdout=[[names[2]]])
        with pytest.raises(ConfigError, match="class02"):
            spec.validate()

    def test_duplicate_in_phases_rejected(self, synth_tree):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec = make_scenario(data_dir, names[:2], [[names[1]]])
        with pytest.raises(ConfigError):
            spec.validate()

    def test_nonuniform_task_sizes_rejected(self, synth_tree):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec = make_scenario(data_dir, names[:2], [[names[2]], [names[3], names[4]]])
        with pytest.raises(ConfigError, match="uniform"):
            spec.validate()

    def test_from_dict_missing_fields(self):
        with pytest.raises(ConfigError, match="manifest_path"):
            scenario_from_dict({"name": "x", "base_classes": ["a"], "tasks": [],
                                "text_bank_path": "t"})


@pytest.fixture(scope="module")
def small_run(synth_tree, tmp_path_factory):
    data_dir, _ = synth_tree
    names = synth_class_names(5)
    out = tmp_path_factory.mktemp("run")
    spec = make_scenario(
        data_dir, names[:2], [[names[2]], [names[3]]], holdout=[[names[4]]]
    )
    run = run_scenario(spec, FAST_TRAIN, ScoreConfig(), out_dir=out)
    return run, out


class TestRunScenario:
    def test_history_length_and_bank_growth(self, small_run):
        run, _ = small_run
        assert run.completed_tasks == 2
        assert len(run.history) == run.completed_tasks + 1
        assert len(run.bank.tasks) == 2
        assert [r.checkpoint_id for r in run.history] == [0, 1, 2]

    def test_seen_classes_grow(self, small_run):
        run, _ = small_run
        assert [len(r.classes) for r in run.history] == [2, 3, 4]

    def test_zero_shot_report_tagged(self, small_run):
        run, _ = small_run
        assert len(run.zero_shot) == 1
        assert run.zero_shot[0].scope == "zero_shot"
        assert [c.class_id for c in run.zero_shot[0].classes] == ["class04"]

    def test_fm_flags(self, small_run):
        run, _ = small_run
        assert not run.history[0].fm_defined
        assert run.history[1].fm_defined
        assert run.history[2].fm_defined

    def test_outputs_on_disk(self, small_run):
        _, out = small_run
        assert (out / "checkpoints" / "checkpoint_000.cmab").is_file()
        assert (out / "checkpoints" / "checkpoint_002.cmab").is_file()
        assert (out / "logs" / "train_base.csv").is_file()
        assert (out / "logs" / "train_task_002.csv").is_file()
        assert (out / "reports" / "checkpoint_002.json").is_file()
        assert (out / "reports" / "zero_shot_000.json").is_file()
        assert (out / "reports" / "summary.json").is_file()
        assert (out / "reports" / "report.csv").is_file()

    def test_checkpoint_banks_grow_and_earlier_sets_frozen(self, small_run):
        _, out = small_run
        bank1 = read_bank_checkpoint(out / "checkpoints" / "checkpoint_001.cmab")
        bank2 = read_bank_checkpoint(out / "checkpoints" / "checkpoint_002.cmab")
        assert len(bank1.tasks) == 1 and len(bank2.tasks) == 2
        for a, b in zip(bank1.base.adapters, bank2.base.adapters):
            assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
        for a, b in zip(bank1.tasks[0].adapters, bank2.tasks[0].adapters):
            assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)

    def test_json_reports_round_trip(self, small_run):
        run, out = small_run
        doc = json.loads((out / "reports" / "checkpoint_002.json").read_text())
        rebuilt = report_from_dict(doc)
        final = run.history[-1]
        assert rebuilt.acc_image == final.acc_image
        assert rebuilt.fm_avg == final.fm_avg
        assert len(rebuilt.classes) == len(final.classes)

    def test_zero_tasks_scenario(self, synth_tree, tmp_path):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec = make_scenario(data_dir, names[:2], [])
        run = run_scenario(spec, FAST_TRAIN, ScoreConfig(), out_dir=tmp_path / "r0")
        assert len(run.history) == 1
        assert not run.history[0].fm_defined
        assert run.history[0].fm_avg == 0.0

    def test_same_seed_byte_identical_outputs(self, synth_tree, tmp_path):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec = make_scenario(data_dir, names[:2], [[names[2]]])
        run_scenario(spec, FAST_TRAIN, ScoreConfig(), out_dir=tmp_path / "r1")
        run_scenario(spec, FAST_TRAIN, ScoreConfig(), out_dir=tmp_path / "r2")
        assert tree_digest(tmp_path / "r1") == tree_digest(tmp_path / "r2")

    def test_different_seed_changes_weights(self, synth_tree, tmp_path):
        data_dir, _ = synth_tree
        names = synth_class_names(5)
        spec_a = make_scenario(data_dir, names[:2], [], seed=5)
        spec_b = make_scenario(data_dir, names[:2], [], seed=6)
        run_a = run_scenario(spec_a, FAST_TRAIN, ScoreConfig())
        run_b = run_scenario(spec_b, FAST_TRAIN, ScoreConfig())
        assert not np.array_equal(
            run_a.bank.base.adapters[0].w1, run_b.bank.base.adapters[0].w1
        )


class TestZeroShot:
    def test_empty_holdout_gives_no_reports(self, synth_tree):
        _, manifest = synth_tree
        text = read_text_bank(manifest.root / "textbank.cmtx")
        from adbank.adapters import AdapterBank

        bank = AdapterBank(init_adapter_set([16] * 4, RandomStream(0)), [])
        reports = evaluate_zero_shot(
            bank, [], ["class00"], manifest, text, 0.9, ScoreConfig(), 0
        )
        assert reports == []

    def test_untrained_bank_matches_raw_oracle_within_tolerance(self, synth_tree):
        data_dir, manifest = synth_tree
        text = read_text_bank(data_dir / "textbank.cmtx")
        fresh = init_adapter_set([16] * 4, RandomStream(0))
        oracle = evaluate_classes(
            fresh, ["class04"], manifest, text, 1.0, ScoreConfig(), 0
        )
        near_identity = evaluate_classes(
            fresh, ["class04"], manifest, text, 0.9, ScoreConfig(), 0
        )
        assert abs(near_identity.acc_pixel - oracle.acc_pixel) <= 0.05

    def test_overlap_rejected(self, synth_tree):
        _, manifest = synth_tree
        text = read_text_bank(manifest.root / "textbank.cmtx")
        from adbank.adapters import AdapterBank

        bank = AdapterBank(init_adapter_set([16] * 4, RandomStream(0)), [])
        with pytest.raises(ConfigError, match="class00"):
            evaluate_zero_shot(
                bank, [["class00"]], ["class00"], manifest, text, 0.9,
                ScoreConfig(), 0,
            )


class TestReports:
    def fixture_reports(self):
        r0 = make_report(0, [ClassEval("a", 0.9, 0.5, 4, 4), ClassEval("b", 0.8, 0.4, 4, 4)])
        r1 = make_report(1, [
            ClassEval("a", 0.85, 0.45, 4, 4),
            ClassEval("b", 0.75, 0.35, 4, 4),
            ClassEval("c", 0.7, 0.3, 4, 4),
        ])
        r1.fm_image, r1.fm_pixel, r1.fm_avg, r1.fm_defined = 0.05, 0.05, 0.05, True
        return [("checkpoint_000", r0), ("checkpoint_001", r1)]

    def test_csv_round_trip_reconstructs_values(self, tmp_path):
        reports = self.fixture_reports()
        path = tmp_path / "report.csv"
        write_report_csv(reports, path)
        loaded = load_report_csv(path)
        assert len(loaded) == 2
        for (_, original), rebuilt in zip(reports, loaded):
            assert rebuilt.acc_image == original.acc_image
            assert rebuilt.acc_pixel == original.acc_pixel
            assert rebuilt.fm_avg == original.fm_avg
            assert [c.class_id for c in rebuilt.classes] == [
                c.class_id for c in original.classes
            ]
            for c_new, c_old in zip(rebuilt.classes, original.classes):
                assert c_new.image_auroc == c_old.image_auroc
                assert c_new.pixel_ap == c_old.pixel_ap

    def test_acc_avg_column_invariant(self, tmp_path):
        reports = self.fixture_reports()
        path = tmp_path / "report.csv"
        write_report_csv(reports, path)
        for report in load_report_csv(path):
            assert abs(report.acc_avg - (report.acc_image + report.acc_pixel) / 2) < 1e-12

    def test_golden_csv_bytes(self, tmp_path):
        # Serialization stability: fixed input must produce these exact bytes.
        reports = [("checkpoint_000", make_report(0, [ClassEval("a", 0.75, 0.5, 2, 3)]))]
        path = tmp_path / "golden.csv"
        write_report_csv(reports, path)
        expected = (
            "report_id,checkpoint_id,scope,class_id,image_auroc,pixel_ap,"
            "n_test_normal,n_test_anomalous,acc_image,acc_pixel,acc_avg,"
            "fm_image,fm_pixel,fm_avg,fm_defined\n"
            "checkpoint_000,0,seen,a,0.75,0.5,2,3,0.75,0.5,0.625,0.0,0.0,0.0,0\n"
        )
        assert path.read_text() == expected

    def test_render_table_triple_format(self):
        reports = self.fixture_reports()
        table = render_table(reports)
        assert "85.0/45.0/65.0" in table  # checkpoint_000 triple
        assert "5.0/5.0/5.0" in table  # checkpoint_001 FM triple

    def test_report_dict_round_trip(self):
        _, report = self.fixture_reports()[1]
        rebuilt = report_from_dict(report_to_dict(report))
        assert rebuilt == report
