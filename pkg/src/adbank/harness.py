"""Scenario orchestration and the desk-scale synthetic generator.

A scenario runs as: joint base training on all base classes, then one
adapter set trained per task in stream order, each frozen and appended to
the bank. After every phase all seen classes are evaluated with the
bank-averaged adapters; after the final task the zero-shot holdout groups
are evaluated with the same averaged set. The forgetting measure at each
checkpoint compares classes against the checkpoint right after their own
task.

The synthetic generator plants rectangle anomalies in per-class Gaussian
feature clusters whose anomalous cells are shifted toward the anomaly text
vector, so a no-training nearest-text-vector classifier is already a
strong oracle at the default margin and a margin of zero removes the
signal entirely.

Everything written to a run directory is deterministic for a fixed seed:
paths are stored relative, floats serialize via repr, and no timestamps
are recorded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import AdapterBank, AdapterSet, average_bank, write_bank_checkpoint
from .errors import ConfigError, DataError, UndefinedMetricError
from .featio import (
    ClassEntry,
    FeatureSample,
    Manifest,
    SampleRef,
    StageGrid,
    TextBank,
    load_manifest,
    load_sample,
    read_text_bank,
    write_feature_file,
    write_manifest,
    write_mask_file,
    write_text_bank,
)
from .metrics import (
    ClassEval,
    MetricReport,
    class_eval,
    forgetting_measure,
    make_report,
)
from .numcore import RandomStream
from .scoring import ScoreConfig, score_sample
from .training import TrainConfig, train_adapter_set, write_epoch_log

STAGE_COUNT = 4


# ---------------------------------------------------------------------------
# Scenario specification


@dataclass
class ScenarioSpec:
    """Declarative description of one continual run.

    ``tasks`` is the ordered list of class batches; ``zero_shot_holdout``
    holds class groups that are never trained and only evaluated after the
    final task. Base, task, and holdout classes must be pairwise disjoint
    and all tasks must have the same size.
    """

    name: str
    base_classes: list[str]
    tasks: list[list[str]]
    manifest_path: str
    text_bank_path: str
    shots_normal: int = 10
    shots_anomalous: int = 10
    zero_shot_holdout: list[list[str]] = field(default_factory=list)
    seed: int = 0

    def validate(self):
        if not self.base_classes:
            raise ConfigError("scenario needs at least one base class")
        if self.shots_normal < 1 or self.shots_anomalous < 0:
            raise ConfigError("invalid shot budgets")
        sizes = {len(task) for task in self.tasks}
        if len(sizes) > 1:
            raise ConfigError(f"task sizes must be uniform within a run, got {sizes}")
        if any(len(task) == 0 for task in self.tasks):
            raise ConfigError("tasks must be nonempty")
        trained = list(self.base_classes)
        for task in self.tasks:
            trained.extend(task)
        duplicates = {c for c in trained if trained.count(c) > 1}
        if duplicates:
            raise ConfigError(f"classes appear in more than one phase: {sorted(duplicates)}")
        trained_set = set(trained)
        for group in self.zero_shot_holdout:
            overlap = trained_set & set(group)
            if overlap:
                raise ConfigError(
                    f"zero-shot holdout overlaps trained classes: {sorted(overlap)}"
                )

    def trained_classes(self) -> list[str]:
        out = list(self.base_classes)
        for task in self.tasks:
            out.extend(task)
        return out


_SCENARIO_REQUIRED = ["name", "base_classes", "tasks", "manifest_path", "text_bank_path"]


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> ScenarioSpec:
    missing = [key for key in _SCENARIO_REQUIRED if key not in doc]
    if missing:
        raise ConfigError(f"scenario config missing required fields {missing}")

    def resolve(path: str) -> str:
        p = Path(path)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return str(p)

    spec = ScenarioSpec(
        name=str(doc["name"]),
        base_classes=[str(c) for c in doc["base_classes"]],
        tasks=[[str(c) for c in task] for task in doc["tasks"]],
        manifest_path=resolve(doc["manifest_path"]),
        text_bank_path=resolve(doc["text_bank_path"]),
        shots_normal=int(doc.get("shots_normal", 10)),
        shots_anomalous=int(doc.get("shots_anomalous", 10)),
        zero_shot_holdout=[
            [str(c) for c in group] for group in doc.get("zero_shot_holdout", [])
        ],
        seed=int(doc.get("seed", 0)),
    )
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Synthetic generator


@dataclass
class SynthSpec:
    """Desk-scale stand-in for encoder features.

    Normal cells cluster around a unit per-class mean aligned with the
    normal text vector; anomalous rectangle cells are shifted toward the
    anomaly text vector by ``margin * cluster_std``. ``margin = 0`` makes
    the two distributions identical (null preset).
    """

    n_classes: int
    grid_h: int = 8
    grid_w: int = 8
    dim: int = 16
    train_normals: int = 10
    train_anomalies: int = 10
    test_normals: int = 10
    test_anomalies: int = 10
    mask_scale: int = 2
    area_min: float = 0.05
    area_max: float = 0.3
    margin: float = 2.0
    cluster_std: float = 0.35
    class_spread: float = 0.1
    seed: int = 0


def synth_from_dict(doc: dict) -> SynthSpec:
    if "n_classes" not in doc:
        raise ConfigError("synth config missing required fields ['n_classes']")
    known = {f for f in SynthSpec.__dataclass_fields__}
    kwargs = {k: v for k, v in doc.items() if k in known}
    return SynthSpec(**kwargs)


def _sample_rectangle(spec: SynthSpec, stream: RandomStream):
    cells = spec.grid_h * spec.grid_w
    for _ in range(1000):
        rect_h = stream.randint(1, spec.grid_h + 1)
        rect_w = stream.randint(1, spec.grid_w + 1)
        frac = rect_h * rect_w / cells
        if spec.area_min <= frac <= spec.area_max:
            break
    else:
        side = max(1, int(np.ceil(np.sqrt(spec.area_min * cells))))
        rect_h = min(side, spec.grid_h)
        rect_w = min(side, spec.grid_w)
    top = stream.randint(0, spec.grid_h - rect_h + 1)
    left = stream.randint(0, spec.grid_w - rect_w + 1)
    return top, left, rect_h, rect_w


def synth_class_names(n_classes: int) -> list[str]:
    return [f"class{i:02d}" for i in range(n_classes)]


def synth_generate(spec: SynthSpec, out_dir) -> Manifest:
    """Write a full synthetic dataset tree: features, masks, text bank, manifest.

    The tree is byte-identical for identical specs (seed included).
    """
    if spec.dim < 2:
        raise ConfigError("synthetic features need dim >= 2")
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    normal_vec = np.zeros(spec.dim)
    normal_vec[0] = 1.0
    anomaly_vec = np.zeros(spec.dim)
    anomaly_vec[1] = 1.0
    bank = TextBank(
        normal_vec,
        anomaly_vec,
        provenance=["synthetic normal axis", "synthetic anomaly axis"],
    )
    write_text_bank(bank, out_dir / "textbank.cmtx")

    root = RandomStream(spec.seed)
    cells = spec.grid_h * spec.grid_w
    entries = []
    for name in synth_class_names(spec.n_classes):
        stream = root.child(f"class/{name}")
        offset = stream.gaussian(spec.dim, 1.0) * spec.class_spread
        mean = normal_vec + offset
        mean /= np.linalg.norm(mean)
        anom_dir = anomaly_vec - mean
        anom_dir /= np.linalg.norm(anom_dir)
        anom_mean = mean + spec.margin * spec.cluster_std * anom_dir

        (out_dir / "features" / name).mkdir(exist_ok=True)
        (out_dir / "masks" / name).mkdir(exist_ok=True)
        groups: dict[str, list[SampleRef]] = {
            "train_normals": [],
            "train_anomalies": [],
            "test_samples": [],
        }

        def emit(kind: str, count: int, anomalous: bool, split: str):
            for j in range(count):
                sample_id = f"{name}_{kind}{j:03d}"
                if anomalous:
                    top, left, rect_h, rect_w = _sample_rectangle(spec, stream)
                    cell_mask = np.zeros((spec.grid_h, spec.grid_w))
                    cell_mask[top : top + rect_h, left : left + rect_w] = 1.0
                    mask = np.kron(
                        cell_mask, np.ones((spec.mask_scale, spec.mask_scale))
                    ).astype(np.uint8)
                    cell_means = np.where(
                        cell_mask.reshape(cells, 1) > 0, anom_mean, mean
                    )
                else:
                    mask = None
                    cell_means = np.broadcast_to(mean, (cells, spec.dim))
                stages = []
                for _ in range(STAGE_COUNT):
                    noise = stream.gaussian(cells * spec.dim, 1.0).reshape(
                        cells, spec.dim
                    )
                    stages.append(
                        StageGrid(
                            spec.grid_h,
                            spec.grid_w,
                            cell_means + spec.cluster_std * noise,
                        )
                    )
                label = "anomalous" if anomalous else "normal"
                sample = FeatureSample(sample_id, name, label, stages, mask)
                feature_rel = f"features/{name}/{kind}{j:03d}.cmfg"
                write_feature_file(sample, out_dir / feature_rel)
                mask_rel = None
                if anomalous:
                    mask_rel = f"masks/{name}/{kind}{j:03d}.cmsk"
                    write_mask_file(mask, out_dir / mask_rel)
                groups[split].append(
                    SampleRef(sample_id, feature_rel, label, mask_rel)
                )

        emit("trn_n", spec.train_normals, False, "train_normals")
        emit("trn_a", spec.train_anomalies, True, "train_anomalies")
        emit("tst_n", spec.test_normals, False, "test_samples")
        emit("tst_a", spec.test_anomalies, True, "test_samples")
        entries.append(ClassEntry(name, **groups))

    manifest = Manifest("synthetic", entries, out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# Budgeted sample selection


def select_budget(
    refs: list[SampleRef], shots: int, stream: RandomStream, what: str
) -> list[SampleRef]:
    """Deterministic seeded subsample of exactly ``shots`` refs."""
    if len(refs) < shots:
        raise DataError(f"budget shortfall: {what} has {len(refs)} < {shots} samples")
    if len(refs) == shots:
        return list(refs)
    order = stream.permutation(len(refs))
    return [refs[int(i)] for i in order[:shots]]


def load_training_samples(
    manifest: Manifest,
    class_ids: list[str],
    shots_normal: int,
    shots_anomalous: int,
    budget_root: RandomStream,
) -> list[FeatureSample]:
    samples = []
    for class_id in class_ids:
        entry = manifest.class_entry(class_id)
        stream = budget_root.child(f"budget/{class_id}")
        chosen = select_budget(
            entry.train_normals, shots_normal, stream, f"{class_id} train normals"
        ) + select_budget(
            entry.train_anomalies,
            shots_anomalous,
            stream,
            f"{class_id} train anomalies",
        )
        for ref in chosen:
            samples.append(load_sample(manifest, class_id, ref))
    return samples


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_classes(
    adapter_set: AdapterSet,
    class_ids: list[str],
    manifest: Manifest,
    text: TextBank,
    alpha: float,
    score_cfg: ScoreConfig,
    checkpoint_id: int,
    scope: str = "seen",
) -> MetricReport:
    """Evaluate each class's full test set with one (averaged) adapter set.

    Pixel maps are rendered at each sample's mask resolution; maskless
    (normal) samples reuse the class's mask resolution and contribute
    all-negative pixels to the pooled ranking.
    """
    evals: list[ClassEval] = []
    for class_id in class_ids:
        entry = manifest.class_entry(class_id)
        if not entry.test_samples:
            raise DataError(f"class {class_id!r} has no test samples")
        samples = [load_sample(manifest, class_id, ref) for ref in entry.test_samples]
        dims = None
        for sample in samples:
            if sample.mask is not None:
                dims = sample.mask.shape
                break
        if dims is None:
            dims = (samples[0].stages[0].height, samples[0].stages[0].width)
        image_scores, image_labels = [], []
        pixel_scores, pixel_labels = [], []
        for sample in samples:
            out_h, out_w = sample.mask.shape if sample.mask is not None else dims
            pixel_map, img_score = score_sample(
                sample, adapter_set, text, alpha, score_cfg, out_h, out_w
            )
            image_scores.append(img_score)
            image_labels.append(1 if sample.anomalous else 0)
            pixel_scores.append(pixel_map.probs.ravel())
            if sample.mask is not None:
                pixel_labels.append(sample.mask.ravel())
            else:
                pixel_labels.append(np.zeros(out_h * out_w, dtype=np.uint8))
        evals.append(
            class_eval(
                class_id,
                image_scores,
                image_labels,
                np.concatenate(pixel_scores),
                np.concatenate(pixel_labels),
            )
        )
    return make_report(checkpoint_id, evals, scope)


def evaluate_zero_shot(
    bank: AdapterBank,
    holdout_groups: list[list[str]],
    trained_classes: list[str],
    manifest: Manifest,
    text: TextBank,
    alpha: float,
    score_cfg: ScoreConfig,
    checkpoint_id: int,
) -> list[MetricReport]:
    """Evaluate never-trained class groups with the final averaged set."""
    trained = set(trained_classes)
    averaged = average_bank(bank)
    reports = []
    for group in holdout_groups:
        overlap = trained & set(group)
        if overlap:
            raise ConfigError(
                f"zero-shot holdout overlaps trained classes: {sorted(overlap)}"
            )
        reports.append(
            evaluate_classes(
                averaged, group, manifest, text, alpha, score_cfg,
                checkpoint_id, scope="zero_shot",
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Scenario run


@dataclass
class RunState:
    spec: ScenarioSpec
    bank: AdapterBank
    completed_tasks: int
    history: list[MetricReport]
    zero_shot: list[MetricReport]
    out_dir: Path | None = None


def _apply_fm(history: list[MetricReport]) -> None:
    """Fill FM fields of the last report from the history so far."""
    report = history[-1]
    try:
        fm_image, fm_pixel, fm_avg = forgetting_measure(history)
    except UndefinedMetricError:
        report.fm_defined = False
        return
    report.fm_image, report.fm_pixel, report.fm_avg = fm_image, fm_pixel, fm_avg
    report.fm_defined = True


def run_scenario(
    spec: ScenarioSpec,
    train_cfg: TrainConfig,
    score_cfg: ScoreConfig,
    out_dir=None,
) -> RunState:
    """Run a full scenario: base training, task stream, zero-shot, reports."""
    spec.validate()
    manifest = load_manifest(spec.manifest_path)
    text = read_text_bank(spec.text_bank_path)
    for class_id in spec.trained_classes() + [
        c for group in spec.zero_shot_holdout for c in group
    ]:
        manifest.class_entry(class_id)

    if out_dir is not None:
        out_dir = Path(out_dir)
        for sub in ("checkpoints", "logs", "reports"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)

    root = RandomStream(spec.seed)
    budget_root = root.child("budget")

    def persist_phase(tag: str, epoch_log, bank: AdapterBank, checkpoint: int):
        if out_dir is None:
            return
        write_epoch_log(epoch_log, out_dir / "logs" / f"train_{tag}.csv")
        write_bank_checkpoint(
            bank, out_dir / "checkpoints" / f"checkpoint_{checkpoint:03d}.cmab"
        )

    base_samples = load_training_samples(
        manifest, spec.base_classes, spec.shots_normal, spec.shots_anomalous,
        budget_root,
    )
    base_result = train_adapter_set(
        base_samples, text, train_cfg, train_cfg.epochs_base,
        root.child("train/base"), tau=score_cfg.tau, tag="base",
    )
    bank = AdapterBank(base_result.adapter_set, [])
    persist_phase("base", base_result.epoch_log, bank, 0)

    seen = list(spec.base_classes)
    history = [
        evaluate_classes(
            average_bank(bank), seen, manifest, text, train_cfg.alpha, score_cfg, 0
        )
    ]

    for task_idx, task_classes in enumerate(spec.tasks, start=1):
        task_samples = load_training_samples(
            manifest, task_classes, spec.shots_normal, spec.shots_anomalous,
            budget_root,
        )
        tag = f"task:{task_idx}"
        result = train_adapter_set(
            task_samples, text, train_cfg, train_cfg.epochs_task,
            root.child(f"train/{tag}"), tau=score_cfg.tau, tag=tag,
        )
        bank.tasks.append(result.adapter_set)
        persist_phase(f"task_{task_idx:03d}", result.epoch_log, bank, task_idx)
        seen = seen + list(task_classes)
        history.append(
            evaluate_classes(
                average_bank(bank), seen, manifest, text, train_cfg.alpha,
                score_cfg, task_idx,
            )
        )
        _apply_fm(history)

    zero_shot = evaluate_zero_shot(
        bank, spec.zero_shot_holdout, spec.trained_classes(), manifest, text,
        train_cfg.alpha, score_cfg, len(spec.tasks),
    )

    run = RunState(spec, bank, len(spec.tasks), history, zero_shot, out_dir)
    if out_dir is not None:
        emit_reports(run)
    return run


# ---------------------------------------------------------------------------
# Report serialization
#
# CSV column order (frozen): report_id, checkpoint_id, scope, class_id,
# image_auroc, pixel_ap, n_test_normal, n_test_anomalous, acc_image,
# acc_pixel, acc_avg, fm_image, fm_pixel, fm_avg, fm_defined

CSV_COLUMNS = [
    "report_id",
    "checkpoint_id",
    "scope",
    "class_id",
    "image_auroc",
    "pixel_ap",
    "n_test_normal",
    "n_test_anomalous",
    "acc_image",
    "acc_pixel",
    "acc_avg",
    "fm_image",
    "fm_pixel",
    "fm_avg",
    "fm_defined",
]


def _triple(image: float, pixel: float, avg: float) -> str:
    return f"{100 * image:.1f}/{100 * pixel:.1f}/{100 * avg:.1f}"


def report_to_dict(report: MetricReport) -> dict:
    return {
        "checkpoint_id": report.checkpoint_id,
        "scope": report.scope,
        "acc_image": report.acc_image,
        "acc_pixel": report.acc_pixel,
        "acc_avg": report.acc_avg,
        "acc_triple": _triple(report.acc_image, report.acc_pixel, report.acc_avg),
        "fm_image": report.fm_image,
        "fm_pixel": report.fm_pixel,
        "fm_avg": report.fm_avg,
        "fm_defined": report.fm_defined,
        "classes": [
            {
                "class_id": c.class_id,
                "image_auroc": c.image_auroc,
                "pixel_ap": c.pixel_ap,
                "n_test_normal": c.n_test_normal,
                "n_test_anomalous": c.n_test_anomalous,
            }
            for c in report.classes
        ],
    }


def report_from_dict(doc: dict) -> MetricReport:
    report = MetricReport(
        checkpoint_id=int(doc["checkpoint_id"]),
        classes=[
            ClassEval(
                class_id=c["class_id"],
                image_auroc=float(c["image_auroc"]),
                pixel_ap=float(c["pixel_ap"]),
                n_test_normal=int(c["n_test_normal"]),
                n_test_anomalous=int(c["n_test_anomalous"]),
            )
            for c in doc["classes"]
        ],
        scope=doc["scope"],
        acc_image=float(doc["acc_image"]),
        acc_pixel=float(doc["acc_pixel"]),
        acc_avg=float(doc["acc_avg"]),
        fm_image=float(doc["fm_image"]),
        fm_pixel=float(doc["fm_pixel"]),
        fm_avg=float(doc["fm_avg"]),
        fm_defined=bool(doc["fm_defined"]),
    )
    return report


def _dump_json(doc, path: Path):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report_csv(
    reports: list[tuple[str, MetricReport]], path: Path
) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for report_id, report in reports:
        for c in report.classes:
            if "," in c.class_id or "\n" in c.class_id:
                raise DataError(
                    f"class id {c.class_id!r} cannot be stored in the CSV schema"
                )
            row = [
                report_id,
                str(report.checkpoint_id),
                report.scope,
                c.class_id,
                repr(c.image_auroc),
                repr(c.pixel_ap),
                str(c.n_test_normal),
                str(c.n_test_anomalous),
                repr(report.acc_image),
                repr(report.acc_pixel),
                repr(report.acc_avg),
                repr(report.fm_image),
                repr(report.fm_pixel),
                repr(report.fm_avg),
                "1" if report.fm_defined else "0",
            ]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_report_csv(path) -> list[MetricReport]:
    """Rebuild MetricReports from the frozen CSV schema."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != CSV_COLUMNS:
        raise DataError(f"unexpected report CSV header in {path}")
    by_report: dict[str, MetricReport] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise DataError(f"malformed report CSV row: {line!r}")
        row = dict(zip(CSV_COLUMNS, parts))
        report = by_report.get(row["report_id"])
        if report is None:
            report = MetricReport(
                checkpoint_id=int(row["checkpoint_id"]),
                classes=[],
                scope=row["scope"],
                acc_image=float(row["acc_image"]),
                acc_pixel=float(row["acc_pixel"]),
                acc_avg=float(row["acc_avg"]),
                fm_image=float(row["fm_image"]),
                fm_pixel=float(row["fm_pixel"]),
                fm_avg=float(row["fm_avg"]),
                fm_defined=row["fm_defined"] == "1",
            )
            by_report[row["report_id"]] = report
        report.classes.append(
            ClassEval(
                class_id=row["class_id"],
                image_auroc=float(row["image_auroc"]),
                pixel_ap=float(row["pixel_ap"]),
                n_test_normal=int(row["n_test_normal"]),
                n_test_anomalous=int(row["n_test_anomalous"]),
            )
        )
    return list(by_report.values())


def _labelled_reports(run: RunState) -> list[tuple[str, MetricReport]]:
    out = [
        (f"checkpoint_{report.checkpoint_id:03d}", report) for report in run.history
    ]
    out.extend(
        (f"zero_shot_{idx:03d}", report) for idx, report in enumerate(run.zero_shot)
    )
    return out


def summary_dict(run: RunState) -> dict:
    def row(report_id: str, report: MetricReport) -> dict:
        return {
            "report_id": report_id,
            "checkpoint_id": report.checkpoint_id,
            "scope": report.scope,
            "n_classes": len(report.classes),
            "acc_triple": _triple(report.acc_image, report.acc_pixel, report.acc_avg),
            "fm_triple": _triple(report.fm_image, report.fm_pixel, report.fm_avg)
            if report.fm_defined
            else None,
            "acc_image": report.acc_image,
            "acc_pixel": report.acc_pixel,
            "acc_avg": report.acc_avg,
            "fm_image": report.fm_image,
            "fm_pixel": report.fm_pixel,
            "fm_avg": report.fm_avg,
            "fm_defined": report.fm_defined,
        }

    return {
        "scenario": run.spec.name,
        "seed": run.spec.seed,
        "completed_tasks": run.completed_tasks,
        "checkpoints": [
            row(f"checkpoint_{r.checkpoint_id:03d}", r) for r in run.history
        ],
        "zero_shot": [
            row(f"zero_shot_{i:03d}", r) for i, r in enumerate(run.zero_shot)
        ],
    }


def emit_reports(run: RunState) -> None:
    reports_dir = run.out_dir / "reports"
    for report_id, report in _labelled_reports(run):
        _dump_json(report_to_dict(report), reports_dir / f"{report_id}.json")
    _dump_json(summary_dict(run), reports_dir / "summary.json")
    write_report_csv(_labelled_reports(run), reports_dir / "report.csv")


def load_run_reports(run_dir) -> list[tuple[str, MetricReport]]:
    reports_dir = Path(run_dir) / "reports"
    if not reports_dir.is_dir():
        raise DataError(f"no reports directory under {run_dir}")
    out = []
    for path in sorted(reports_dir.glob("checkpoint_*.json")) + sorted(
        reports_dir.glob("zero_shot_*.json")
    ):
        out.append((path.stem, report_from_dict(json.loads(path.read_text()))))
    if not out:
        raise DataError(f"no report files under {reports_dir}")
    return out


def render_table(reports: list[tuple[str, MetricReport]]) -> str:
    """Image/Pixel/Avg triples per checkpoint, one row per report."""
    lines = [f"{'report':<20} {'classes':>7}  {'ACC (img/pix/avg)':>20}  {'FM (img/pix/avg)':>20}"]
    for report_id, report in reports:
        acc = _triple(report.acc_image, report.acc_pixel, report.acc_avg)
        fm = (
            _triple(report.fm_image, report.fm_pixel, report.fm_avg)
            if report.fm_defined
            else "-"
        )
        lines.append(f"{report_id:<20} {len(report.classes):>7}  {acc:>20}  {fm:>20}")
    return "\n".join(lines)
