"""Experiment runner: desk-scale error tables and visualization exports.

``run_table`` trains the full pipeline for every (samples-per-class, seed)
cell, evaluates one row per variant (single pathways, fused, and
re-selection on the perturbed table), and writes CSV plus a JSON report
with mean and standard deviation across seeds.  Cells are flushed to disk
as they complete so partial results survive an abort.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import adversarial
from .bayes import pathway_posterior
from .cdbn import visualize_feature
from .datasets import (FaceSpec, LabeledDataset, generate_faces, load_mnist,
                       sample_per_class, save_idx_dataset, synthesize_digits)
from .imaging import montage, to_unit_range, write_pgm
from .pipeline import (PipelineConfig, TrainedPipeline, structural_blocks,
                       train_pipeline)
from .bayes import reselect_features


@dataclass(frozen=True)
class ExperimentConfig:
    """One table run: dataset choice, cell grid, and pipeline settings."""

    dataset: str = "digits"            # "digits", "faces", or "idx"
    table: int = 1                     # 1 clean, 2 perturbed, 3 faces
    samples_per_class: tuple[int, ...] = (10,)
    seeds: tuple[int, ...] = (0,)
    test_size: int = 400
    corpus_per_class: int = 200        # synthetic corpus size (train pool)
    test_corpus_per_class: int = 80
    corpus_seed: int = 7
    train_images: str | None = None    # IDX paths when dataset == "idx"
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    pipeline: PipelineConfig = PipelineConfig()
    attack_target: int = 6
    attack_eps: float = 0.05
    attack_steps: int = 10
    surrogate: adversarial.SurrogateConfig = adversarial.SurrogateConfig()
    out_dir: str = "results"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "pipeline" in doc and isinstance(doc["pipeline"], dict):
            doc["pipeline"] = PipelineConfig.from_json(json.dumps(doc["pipeline"]))
        if "surrogate" in doc and isinstance(doc["surrogate"], dict):
            doc["surrogate"] = adversarial.SurrogateConfig(**doc["surrogate"])
        for key in ("samples_per_class", "seeds"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return ExperimentConfig(**doc)


def _face_config(cfg: ExperimentConfig) -> PipelineConfig:
    from dataclasses import replace
    return replace(cfg.pipeline, image_size=64)


def load_corpora(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Training pool and held-out test pool for the configured dataset."""
    if cfg.dataset == "idx":
        if not all((cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels)):
            raise ValueError("dataset 'idx' needs all four file paths")
        return (load_mnist(cfg.train_images, cfg.train_labels),
                load_mnist(cfg.test_images, cfg.test_labels))
    if cfg.dataset == "digits":
        train = synthesize_digits(cfg.corpus_per_class, seed=cfg.corpus_seed)
        test = synthesize_digits(cfg.test_corpus_per_class, seed=cfg.corpus_seed + 1)
        return train, test
    if cfg.dataset == "faces":
        spec = FaceSpec()
        train = generate_faces(spec, cfg.corpus_per_class, seed=cfg.corpus_seed)
        test = generate_faces(spec, cfg.test_corpus_per_class, seed=cfg.corpus_seed + 1)
        return train, test
    raise ValueError(f"unknown dataset {cfg.dataset!r}")


def _test_subset(pool: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    if size >= len(pool):
        return pool
    per = max(1, size // pool.class_count)
    return sample_per_class(pool, per, seed)


def evaluate_cell(pipeline: TrainedPipeline, test: LabeledDataset,
                  perturbed: LabeledDataset | None = None) -> dict[str, float]:
    """Error of every table row for one trained pipeline.

    Rows: one- and two-layer feature classifiers, semantic features, one
    row per position-neuron grid (named by neuron count), the relationship
    features, the fused posterior, and re-selection on perturbed tables.
    """
    target = perturbed if perturbed is not None else test
    feats = pipeline.features(target.images)
    errors: dict[str, float] = {}

    def pathway_error(model_name: str, x) -> float:
        pred = pathway_posterior(pipeline.models[model_name], x).argmax(axis=1)
        return float((pred != target.labels).mean())

    errors["one_layer"] = pathway_error("one_layer", feats.one_layer)
    errors["two_layer"] = pathway_error("episodic", feats.episodic)
    errors["semantic"] = pathway_error("semantic", feats.semantic)
    for side in pipeline.config.pneuron_sides:
        errors[f"position_{side * side}"] = pathway_error(
            f"position_{side}", feats.position[side])
    errors["relationship"] = pathway_error("relationship", feats.relationship)

    post = pipeline.integrated_posteriors(feats)
    errors["integrated"] = float((post.argmax(axis=1) != target.labels).mean())
    if perturbed is not None:
        final, _, _ = pipeline.predict_with_reselection(target.images)
        errors["reselection"] = float((final != target.labels).mean())
    return errors


@dataclass
class TableReport:
    """All cell evaluations plus per-(row, samples) mean and sd over seeds."""

    table: int
    rows: list = field(default_factory=list)      # per-cell records
    summary: dict = field(default_factory=dict)   # row -> samples -> stats

    def add_cell(self, samples: int, seed: int, errors: dict[str, float]):
        for row, err in errors.items():
            self.rows.append({"row": row, "samples_per_class": samples,
                              "seed": seed, "error": err})

    def summarize(self):
        groups: dict = {}
        for rec in self.rows:
            groups.setdefault(rec["row"], {}).setdefault(
                rec["samples_per_class"], []).append(rec["error"])
        self.summary = {
            row: {str(s): {"mean": float(np.mean(errs)), "sd": float(np.std(errs)),
                           "n": len(errs)}
                  for s, errs in by_samples.items()}
            for row, by_samples in groups.items()
        }
        return self.summary


def run_table(cfg: ExperimentConfig, verbose: bool = True) -> TableReport:
    """Train and evaluate all (samples, seed) cells of one table."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipe_cfg = _face_config(cfg) if cfg.dataset == "faces" else cfg.pipeline

    train_pool, test_pool = load_corpora(cfg)
    report = TableReport(table=cfg.table)
    cells_path = out / f"table{cfg.table}_cells.csv"
    with open(cells_path, "w", newline="") as cells_file:
        writer = csv.writer(cells_file)
        writer.writerow(["row", "samples_per_class", "seed", "error"])
        for samples in cfg.samples_per_class:
            for seed in cfg.seeds:
                if verbose:
                    print(f"[table {cfg.table}] samples={samples} seed={seed}", flush=True)
                train = sample_per_class(train_pool, samples, seed=seed)
                test = _test_subset(test_pool, cfg.test_size, seed=seed + 1000)
                pipeline = train_pipeline(train, pipe_cfg, seed=seed, verbose=verbose)
                perturbed = None
                if cfg.table == 2:
                    surrogate = adversarial.train_surrogate(train, cfg.surrogate,
                                                            seed=seed)
                    attack = adversarial.PerturbConfig(
                        target=cfg.attack_target, eps_step=cfg.attack_eps,
                        max_steps=cfg.attack_steps)
                    perturbed, manifest = adversarial.generate_ambiguous_set(
                        test, surrogate, attack)
                    if verbose:
                        print(f"  attack success rate {manifest['success_rate']:.2f}",
                              flush=True)
                errors = evaluate_cell(pipeline, test, perturbed)
                report.add_cell(samples, seed, errors)
                for row, err in sorted(errors.items()):
                    writer.writerow([row, samples, seed, f"{err:.6f}"])
                cells_file.flush()
                if verbose:
                    msg = " ".join(f"{r}={e:.3f}" for r, e in sorted(errors.items()))
                    print(f"  {msg}", flush=True)
    report.summarize()
    doc = {"table": cfg.table, "config": json.loads(cfg.to_json()),
           "summary": report.summary}
    (out / f"table{cfg.table}_report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True))
    _write_summary_csv(out / f"table{cfg.table}_summary.csv", report)
    return report


def _write_summary_csv(path, report: TableReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "samples_per_class", "mean_error", "sd", "n_seeds"])
        for row in sorted(report.summary):
            for s in sorted(report.summary[row], key=int):
                st = report.summary[row][s]
                writer.writerow([row, s, f"{st['mean']:.6f}", f"{st['sd']:.6f}", st["n"]])


# ---------------------------------------------------------------------------
# visualization exports
# ---------------------------------------------------------------------------

def export_visuals(pipeline: TrainedPipeline, out_dir) -> dict:
    """Write filter/semantic montages, concept heatmaps, and a re-selection
    mask image; returns (and writes) a manifest of produced files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []

    def save(name: str, img) -> None:
        p = out / name
        write_pgm(p, np.clip(img, 0.0, 1.0))
        files.append(str(p))

    for li, layer in enumerate(pipeline.stack.layers):
        tiles = np.stack([visualize_feature(pipeline.stack, li, k)
                          for k in range(layer.n_features)])
        save(f"filters_layer{li + 1}.pgm", montage(tiles, normalize_each=False))

    save("semantic_centers.pgm",
         montage(np.stack([to_unit_range(c) for c in pipeline.bank.centers]),
                 normalize_each=False))

    for c in range(pipeline.class_count):
        save(f"concept_pm_class{c}.pgm", montage(pipeline.concept_pm[c]))
        k = pipeline.bank.k
        save(f"concept_rm_class{c}.pgm",
             montage(pipeline.concept_rm[c].reshape(k * k, 3, 3),
                     columns=k, normalize_each=False))

    # re-selection mask between the two most confusable classes, judged by
    # the distance between their mean relationship matrices
    k = pipeline.bank.k
    flat = pipeline.concept_rm.reshape(pipeline.class_count, -1)
    d = ((flat[:, None] - flat[None]) ** 2).sum(-1)
    d[np.diag_indices_from(d)] = np.inf
    a, b = np.unravel_index(int(d.argmin()), d.shape)
    side = pipeline.config.integrated_side
    blocks = structural_blocks(k, side)
    mask = reselect_features([a, b], pipeline.models["relationship"],
                             blocks["relationship"])
    mask_img = np.repeat(mask.selected.astype(np.float64).reshape(k, k), 3, axis=0)
    mask_img = np.repeat(mask_img, 3, axis=1)
    save(f"reselection_mask_{a}_vs_{b}.pgm", mask_img)

    manifest = {"files": sorted(files), "confusable_pair": [int(a), int(b)]}
    (out / "visuals_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def export_attack_set(ds: LabeledDataset, surrogate, attack_cfg, out_dir,
                      stem: str = "ambiguous") -> dict:
    """Perturb a dataset and save it as IDX files plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perturbed, manifest = adversarial.generate_ambiguous_set(ds, surrogate, attack_cfg)
    images_path = out / f"{stem}-images-idx3-ubyte"
    labels_path = out / f"{stem}-labels-idx1-ubyte"
    save_idx_dataset(perturbed, images_path, labels_path)
    manifest["images_file"] = str(images_path)
    manifest["labels_file"] = str(labels_path)
    (out / f"{stem}_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
