"""Multi-pathway visual recognition with learned semantics and structure.

Pipeline stages: unsupervised convolutional RBM stacking (episodic
features), patch clustering (semantic features), population-coded position
and relationship matrices (structure), per-pathway softmax models fused by
Bayesian integration, and feature re-selection when the fused posterior is
ambiguous.
"""

from .bayes import (FeatureMask, PathwayEnsemble, PathwayModel, SoftmaxConfig,
                    classify_ambiguous, detect_ambiguity, integrate,
                    pathway_posterior, reselect_features, train_pathway)
from .cdbn import (CdbnStack, EpisodicFeatures, deconvolve, extract_episodic,
                   load_stack, reconstruct, save_stack, train_stack,
                   visualize_feature)
from .crbm import (CrbmParams, HiddenState, LayerSpec, TrainConfig, cd1_update,
                   energy, hidden_conditional, train_layer, visible_conditional)
from .datasets import (FaceSpec, LabeledDataset, generate_faces, load_mnist,
                       sample_per_class, save_idx_dataset, synthesize_digits)
from .adversarial import (ConvSoftmax, PerturbConfig, SurrogateConfig,
                          generate_ambiguous_set, input_gradient, perturb,
                          train_surrogate)
from .harness import ExperimentConfig, export_visuals, run_table
from .pipeline import (PipelineConfig, TrainedPipeline, evaluate_error,
                       load_pipeline, save_pipeline, train_pipeline)
from .population import (PositionNeuronGrid, RelationshipMatrix,
                         concept_distribution, locate_feature, make_grid,
                         position_matrix, relationship_matrix)
from .semantic import SemanticBank, kmeans, reconstruct_patches, semantic_maps

__version__ = "0.1.0"
