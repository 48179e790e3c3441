"""Similarity learning between multi-subject connectivity graphs.

The pipeline: build a shared graph over nodes from cohort affinities,
augment it with random-walk co-occurrence structure, embed each subject
with shared-weight spectral graph convolutions, and train the twin scoring
head so same-class pairs score high and different-class pairs score low.
"""

from .config import RunConfig, load_run_config, run_config_from_dict
from .errors import ConfigError, DataError, NumericFailure, ValidationError
from .evaluation import (
    EvalReport,
    auc,
    baseline_similarity,
    pair_eval,
    subject_eval,
    upper_triangle_features,
    weighted_knn_classify,
)
from .gcn import (
    ChebFilterBank,
    GCNStack,
    cheb_basis,
    init_stack,
    layer_forward,
    stack_backward,
    stack_forward,
)
from .graphs import (
    AffinityMatrix,
    BinaryGraph,
    LaplacianSet,
    SpectralDecomposition,
    knn_graph,
    laplacians,
    mean_affinity,
    read_affinity_csv,
    spectral_filter_dense,
    threshold_positive,
    write_affinity_csv,
)
from .siamese import (
    ConVarParams,
    PairScore,
    SiameseModel,
    convar_grad,
    convar_loss,
    hinge_grad,
    hinge_loss,
    init_model,
    load_model,
    pair_backward,
    save_model,
    similarity_forward,
)
from .synthetic import SynthSpec, generate_cohort, generate_subject, load_cohort
from .training import (
    AdamState,
    Cohort,
    LabeledPair,
    ModelSpec,
    PairSet,
    Subject,
    TrainConfig,
    adam_step,
    balanced_batches,
    make_pairs,
    stratified_split,
    train,
)
from .walks import (
    FrequencyMatrix,
    Walk,
    WalkParams,
    accumulate_cooccurrence,
    build_frequency,
    higher_order_representation,
    knn_from_frequency,
    merge_graphs,
    random_walk,
)

__version__ = "0.1.0"
