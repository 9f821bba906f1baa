"""End-to-end recognition pipeline.

Training is sequential: unsupervised CRBM stacking, patch clustering into
semantic features, population-coded structure extraction, then one softmax
model per feature pathway.  Recognition fuses the pathway posteriors with
the category priors; ambiguous posteriors trigger feature re-selection on
the structural pathways.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import bayes, population, semantic
from .bayes import (PathwayEnsemble, PathwayModel, SoftmaxConfig, classify_ambiguous,
                    detect_ambiguity, integrate, masked_scores, pathway_posterior,
                    reselect_features, train_pathway)
from .cdbn import CdbnStack, forward_stack, load_stack, save_stack, train_stack
from .crbm import LayerSpec, TrainConfig
from .datasets import LabeledDataset
from .population import (DEFAULT_DIRECTION_SIGMA, PositionNeuronGrid, make_grid,
                         relationship_matrix)
from .semantic import SemanticBank, kmeans, reconstruct_patches, semantic_maps

STRUCTURAL_PATHWAYS = ("position", "relationship")


@dataclass(frozen=True)
class PipelineConfig:
    """Geometry and hyperparameters of the full pipeline."""

    image_size: int = 28
    layer_specs: tuple[LayerSpec, ...] = (LayerSpec(40, 7, 2), LayerSpec(40, 4, 2))
    crbm: TrainConfig = TrainConfig()
    semantic_k: int = 8
    kmeans_max_iter: int = 50
    kmeans_restarts: int = 1
    pneuron_sides: tuple[int, ...] = (4, 8)
    integrated_side: int = 8
    direction_sigma: float = DEFAULT_DIRECTION_SIGMA
    presence_fraction: float = 0.01
    ambiguity_ratio: float = 0.5
    epsilon: float = 0.01
    softmax: SoftmaxConfig = SoftmaxConfig()
    cdbn_cap: int | None = None  # cap on unsupervised training images

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        doc = json.loads(text)
        doc["layer_specs"] = tuple(LayerSpec(*s) for s in doc["layer_specs"])
        doc["crbm"] = TrainConfig(**doc["crbm"])
        doc["softmax"] = SoftmaxConfig(**doc["softmax"])
        doc["pneuron_sides"] = tuple(doc["pneuron_sides"])
        return PipelineConfig(**doc)


@dataclass(frozen=True)
class PathwayFeatures:
    """Per-image feature vectors for every pathway, plus the intermediate
    maps needed for concepts and visualization."""

    one_layer: np.ndarray            # (N, K1 * np1^2)
    episodic: np.ndarray             # (N, K2 * np2^2)
    semantic: np.ndarray             # (N, Ks * np2^2)
    position: dict                   # side -> (N, Ks * side^2)
    relationship: np.ndarray         # (N, Ks^2 * 9)
    semantic_grids: np.ndarray       # (N, Ks, np2, np2)
    position_grids: dict             # side -> (N, Ks, side, side)
    relationship_blocks: np.ndarray  # (N, Ks, Ks, 3, 3)

    def vector(self, pathway: str, side: int | None = None) -> np.ndarray:
        if pathway == "position":
            return self.position[side]
        return getattr(self, pathway)


class FeatureExtractor:
    """Maps raw images to all pathway feature vectors (pure, reusable)."""

    def __init__(self, stack: CdbnStack, bank: SemanticBank,
                 grids: dict[int, PositionNeuronGrid],
                 direction_sigma: float, presence_threshold: float):
        self.stack = stack
        self.bank = bank
        self.grids = grids
        self.direction_sigma = direction_sigma
        self.presence_threshold = presence_threshold
        self.map_size = stack.top.pooled_size

    def compute(self, images: np.ndarray) -> PathwayFeatures:
        images = np.asarray(images, dtype=np.float64)
        acts = forward_stack(images, self.stack)
        n = len(images)
        sem = semantic_maps(acts[-1].pooled, self.bank)  # (N, Ks, np, np)
        ks = self.bank.k

        pm_grids, pm_flat = {}, {}
        for side, grid in self.grids.items():
            pms = np.empty((n, ks, side, side))
            for i in range(n):
                for j in range(ks):
                    pms[i, j] = population.position_matrix(sem[i, j], grid)
            pm_grids[side] = pms
            pm_flat[side] = pms.reshape(n, -1)

        diag = float(np.hypot(self.map_size - 1, self.map_size - 1)) or 1.0
        rms = np.empty((n, ks, ks, 3, 3))
        for i in range(n):
            locations = [population.locate_feature(sem[i, j], self.presence_threshold)
                         for j in range(ks)]
            rms[i] = relationship_matrix(locations, diag, self.direction_sigma).blocks

        return PathwayFeatures(
            one_layer=acts[0].pooled.reshape(n, -1),
            episodic=acts[-1].pooled.reshape(n, -1),
            semantic=sem.reshape(n, -1),
            position=pm_flat,
            relationship=rms.reshape(n, -1),
            semantic_grids=sem,
            position_grids=pm_grids,
            relationship_blocks=rms,
        )


def structural_blocks(n_semantic: int, side: int):
    """Feature-index partitions for re-selection: one block per semantic
    feature's position matrix, one block per feature pair's 3x3 cell."""
    m2 = side * side
    position = [np.arange(j * m2, (j + 1) * m2) for j in range(n_semantic)]
    relationship = [np.arange(p * 9, (p + 1) * 9) for p in range(n_semantic * n_semantic)]
    return {"position": position, "relationship": relationship}


@dataclass
class TrainedPipeline:
    """Everything recognition needs, immutable after training."""

    config: PipelineConfig
    stack: CdbnStack
    bank: SemanticBank
    extractor: FeatureExtractor
    models: dict               # name -> PathwayModel ("position_<side>" for grids)
    ensemble: PathwayEnsemble
    class_count: int
    concept_pm: np.ndarray     # (C, Ks, side, side) at the integrated side
    concept_rm: np.ndarray     # (C, Ks, Ks, 3, 3)
    loss_traces: list | None = None

    # -- scoring ------------------------------------------------------------

    def features(self, images: np.ndarray) -> PathwayFeatures:
        return self.extractor.compute(images)

    def _ensemble_inputs(self, feats: PathwayFeatures):
        side = self.config.integrated_side
        return {
            "episodic": feats.episodic,
            "semantic": feats.semantic,
            "position": feats.position[side],
            "relationship": feats.relationship,
        }

    def pathway_posteriors(self, feats: PathwayFeatures) -> dict:
        inputs = self._ensemble_inputs(feats)
        return {m.pathway: pathway_posterior(m, inputs[m.pathway])
                for m in self.ensemble.models}

    def integrated_posteriors(self, feats: PathwayFeatures) -> np.ndarray:
        posts = self.pathway_posteriors(feats)
        stacked = [posts[m.pathway] for m in self.ensemble.models]
        n = len(stacked[0])
        out = np.empty((n, self.class_count))
        for i in range(n):
            out[i] = integrate([p[i] for p in stacked], self.ensemble.priors,
                               self.ensemble.floor)
        return out

    def predict_batch(self, images: np.ndarray):
        post = self.integrated_posteriors(self.features(images))
        return post.argmax(axis=1), post

    def predict(self, img: np.ndarray):
        labels, post = self.predict_batch(np.asarray(img)[None])
        return int(labels[0]), post[0]

    # -- ambiguity handling ---------------------------------------------------

    def predict_with_reselection(self, images: np.ndarray):
        """Integrated prediction with re-selection on ambiguous posteriors.

        Returns (final labels, base labels, details) where details carries
        per-sample candidate sets and mask sizes for logging.
        """
        feats = self.features(images)
        posts = self.integrated_posteriors(feats)
        base = posts.argmax(axis=1)
        final = base.copy()
        side = self.config.integrated_side
        blocks = structural_blocks(self.bank.k, side)
        model_pos = self.models[f"position_{side}"]
        model_rel = self.models["relationship"]
        details = []
        for i in range(len(posts)):
            cands = detect_ambiguity(posts[i], self.config.ambiguity_ratio)
            if len(cands) < 2:
                details.append({"candidates": cands.tolist(), "mask_size": 0})
                continue
            mask_p = reselect_features(cands, model_pos, blocks["position"])
            mask_r = reselect_features(cands, model_rel, blocks["relationship"])
            scores = [
                masked_scores(model_pos, feats.position[side][i], mask_p.feature_mask),
                masked_scores(model_rel, feats.relationship[i], mask_r.feature_mask),
            ]
            final[i], _ = classify_ambiguous(cands, scores)
            details.append({
                "candidates": cands.tolist(),
                "mask_size": int(mask_p.feature_mask.sum() + mask_r.feature_mask.sum()),
            })
        return final, base, details


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_pipeline(ds: LabeledDataset, config: PipelineConfig, seed: int,
                   verbose: bool = False) -> TrainedPipeline:
    """Train every stage on one labeled dataset, fully seeded."""
    if ds.images.shape[-1] != config.image_size:
        raise ValueError(
            f"dataset image edge {ds.images.shape[-1]} != config {config.image_size}")
    seeds = np.random.SeedSequence(seed).generate_state(4)

    unsup = ds.images
    if config.cdbn_cap is not None and len(unsup) > config.cdbn_cap:
        rng = np.random.default_rng(int(seeds[3]))
        unsup = unsup[rng.choice(len(unsup), config.cdbn_cap, replace=False)]
    if verbose:
        print(f"training stack on {len(unsup)} images ...", flush=True)
    stack, traces = train_stack(unsup, list(config.layer_specs), config.crbm,
                                int(seeds[0]))

    patches = reconstruct_patches(stack)
    bank = kmeans(patches, config.semantic_k, int(seeds[1]),
                  max_iter=config.kmeans_max_iter, restarts=config.kmeans_restarts)

    map_size = stack.top.pooled_size
    grids = {side: make_grid(map_size, side) for side in config.pneuron_sides}
    extractor = FeatureExtractor(
        stack, bank, grids, config.direction_sigma,
        population.default_presence_threshold(map_size, config.presence_fraction))

    if verbose:
        print("extracting training features ...", flush=True)
    feats = extractor.compute(ds.images)

    def fit(name: str, x: np.ndarray, offset: int) -> PathwayModel:
        if verbose:
            print(f"fitting {name} pathway ({x.shape[1]} features) ...", flush=True)
        return train_pathway(x, ds.labels, ds.class_count, seed=int(seeds[2]) + offset,
                             pathway=name.split("_")[0], cfg=config.softmax)

    models = {
        "one_layer": fit("one_layer", feats.one_layer, 0),
        "episodic": fit("episodic", feats.episodic, 1),
        "semantic": fit("semantic", feats.semantic, 2),
        "relationship": fit("relationship", feats.relationship, 3),
    }
    for n, side in enumerate(config.pneuron_sides):
        models[f"position_{side}"] = fit(f"position_{side}", feats.position[side], 4 + n)

    # the fused ensemble pairs episodic/semantic with one position grid
    models_for_ensemble = (
        replace(models["episodic"], pathway="episodic"),
        replace(models["semantic"], pathway="semantic"),
        replace(models[f"position_{config.integrated_side}"], pathway="position"),
        replace(models["relationship"], pathway="relationship"),
    )
    priors = bayes.class_priors(ds.labels, ds.class_count, config.epsilon,
                                n_pathways=len(models_for_ensemble))
    ensemble = PathwayEnsemble(models=models_for_ensemble, priors=priors,
                               epsilon=config.epsilon)

    concept_pm, concept_rm = population.concept_distribution(
        feats.position_grids[config.integrated_side], feats.relationship_blocks,
        ds.labels, ds.class_count)

    return TrainedPipeline(
        config=config, stack=stack, bank=bank, extractor=extractor,
        models=models, ensemble=ensemble, class_count=ds.class_count,
        concept_pm=concept_pm, concept_rm=concept_rm, loss_traces=traces)


def evaluate_error(pipeline: TrainedPipeline, ds: LabeledDataset,
                   reselection: bool = False) -> float:
    """Fraction of misclassified samples under integrated prediction."""
    if reselection:
        labels, _, _ = pipeline.predict_with_reselection(ds.images)
    else:
        labels, _ = pipeline.predict_batch(ds.images)
    return float((labels != ds.labels).mean())


def evaluate_pathway_error(pipeline: TrainedPipeline, feats: PathwayFeatures,
                           labels: np.ndarray, name: str) -> float:
    """Error of a single pathway's softmax model on precomputed features."""
    model = pipeline.models[name]
    side = int(name.split("_")[1]) if name.startswith("position_") else None
    x = feats.vector(name if side is None else "position", side)
    pred = pathway_posterior(model, x).argmax(axis=1)
    return float((pred != np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_pipeline(out_dir, pipeline: TrainedPipeline) -> None:
    """Checkpoint a trained pipeline to a directory (npz arrays + JSON meta)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_stack(out / "stack.npz", pipeline.stack)
    np.savez(out / "semantic.npz", centers=pipeline.bank.centers,
             assignment=pipeline.bank.assignment)
    model_arrays = {}
    for name, m in pipeline.models.items():
        model_arrays[f"w_{name}"] = m.weights
        model_arrays[f"b_{name}"] = m.bias
    np.savez(out / "models.npz", priors=pipeline.ensemble.priors,
             concept_pm=pipeline.concept_pm, concept_rm=pipeline.concept_rm,
             **model_arrays)
    meta = {
        "config": json.loads(pipeline.config.to_json()),
        "class_count": pipeline.class_count,
        "model_names": sorted(pipeline.models),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_pipeline(out_dir) -> TrainedPipeline:
    out = Path(out_dir)
    meta = json.loads((out / "meta.json").read_text())
    config = PipelineConfig.from_json(json.dumps(meta["config"]))
    stack = load_stack(out / "stack.npz")
    with np.load(out / "semantic.npz", allow_pickle=False) as z:
        bank = SemanticBank(centers=z["centers"], assignment=z["assignment"])
    with np.load(out / "models.npz", allow_pickle=False) as z:
        models = {name: PathwayModel(weights=z[f"w_{name}"], bias=z[f"b_{name}"],
                                     pathway=name.split("_")[0])
                  for name in meta["model_names"]}
        priors = z["priors"]
        concept_pm = z["concept_pm"]
        concept_rm = z["concept_rm"]
    map_size = stack.top.pooled_size
    grids = {side: make_grid(map_size, side) for side in config.pneuron_sides}
    extractor = FeatureExtractor(
        stack, bank, grids, config.direction_sigma,
        population.default_presence_threshold(map_size, config.presence_fraction))
    ensemble = PathwayEnsemble(
        models=(replace(models["episodic"], pathway="episodic"),
                replace(models["semantic"], pathway="semantic"),
                replace(models[f"position_{config.integrated_side}"], pathway="position"),
                replace(models["relationship"], pathway="relationship")),
        priors=priors, epsilon=config.epsilon)
    return TrainedPipeline(
        config=config, stack=stack, bank=bank, extractor=extractor, models=models,
        ensemble=ensemble, class_count=int(meta["class_count"]),
        concept_pm=concept_pm, concept_rm=concept_rm)
