"""Fake-image detection from image-text misalignment in a joint
vision-language embedding space.

An image and its caption embed close together when the image is genuine;
generated images drift from their own descriptions.  This package builds a
hierarchical misalignment representation (whole image vs. caption, plus
object crops vs. caption phrases), trains a small MLP head on it, and
evaluates with threshold accuracy and average precision.
"""

from .classifier import (
    FAKE,
    REAL,
    MlpHead,
    Prediction,
    TrainConfig,
    forward,
    init_head,
    load_head,
    predict,
    save_head,
    train,
)
from .embedding_io import EmbeddingFileReader, read_embedding_file, write_embedding_file
from .errors import DataError, ItmdetectError, ProviderError
from .manifest import EmbeddingRef, EmbeddingRefs, SampleRecord, load_manifest, save_manifest
from .metrics import MetricsReport, ScoredSample, accuracy, average_precision, pr_curve, report
from .perturb import (
    PerturbationKind,
    PerturbationSpec,
    apply_perturbation,
    center_crop,
    perturb_gaussian_blur,
    perturb_gaussian_noise,
    perturb_jpeg,
)
from .pipeline import (
    RepresentationRecord,
    RunConfig,
    export_representations,
    featurize,
    featurize_corpus,
    run_eval,
    run_training,
)
from .providers import (
    ImageRef,
    ObjectDetection,
    Provider,
    ProviderConfig,
    ProviderKind,
    SyntheticParams,
    make_provider,
    write_synthetic_corpus,
)
from .representation import (
    Embedding,
    EmptyObjectPolicy,
    FusionConfig,
    FusionMode,
    Misalignment,
    MisalignmentKind,
    average_local,
    combine,
    cosine_similarity,
    global_distance,
    l2_normalize,
    local_distance,
    misalignment,
)

__version__ = "0.1.0"
