"""Image-text misalignment vectors and their hierarchical fusion.

The misalignment between an image embedding I and a text embedding T is the
difference of their L2-normalized directions, D = I/|I| - T/|T|.  Its squared
Euclidean norm equals 2 - 2*cos(I, T), so well-aligned pairs give small
vectors and misaligned pairs give large ones, while the full vector keeps
the directional information a scalar similarity would discard.

A sample's final representation combines one global misalignment (whole
image vs. full caption) with the mean of per-object local misalignments
(object crop vs. caption phrase): D = w1*D_global + w2*D_local.

All arithmetic is float64 regardless of what a provider delivered; this
keeps the norm/cosine identity and finite-difference checks tight.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyObjectSet, ZeroNormEmbedding

# Norms at or below this are treated as zero (not normalizable).
NORM_EPS = 1e-12


def _as_vector(values, *, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{what} must be a 1-D vector with at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains NaN or infinite entries")
    return arr


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension real vector from an image or text encoder."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values, what="embedding"))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


class MisalignmentKind(enum.Enum):
    GLOBAL = "global"
    LOCAL_SINGLE = "local_single"
    LOCAL_MEAN = "local_mean"
    COMBINED = "combined"


# Any difference of two unit vectors has entries in [-2, 2] and norm in
# [0, 2]; means of such vectors keep both bounds.  A weighted combination
# only satisfies the scaled bound 2*(|w1| + |w2|), so COMBINED vectors are
# checked against that instead (see EmptyObjectPolicy/combine).
_UNIT_DIFF_BOUND = 2.0


@dataclass(frozen=True)
class Misalignment:
    """Difference-of-directions vector, tagged with how it was produced."""

    values: np.ndarray
    kind: MisalignmentKind
    # Entry bound used for the construction check; 2 for pure unit-vector
    # differences, 2*(|w1|+|w2|) for weighted combinations.
    bound: float = _UNIT_DIFF_BOUND

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values, what="misalignment"))
        # Enforced by construction, never by clamping: a violation is a bug
        # in whichever code built this vector.
        limit = self.bound + 1e-9
        if np.abs(self.values).max() > limit:
            raise ValueError(
                f"misalignment entry out of range for bound {self.bound}: "
                f"max |entry| = {np.abs(self.values).max()}"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


class FusionMode(enum.Enum):
    GLOBAL_ONLY = "global_only"
    LOCAL_ONLY = "local_only"
    BOTH = "both"


class EmptyObjectPolicy(enum.Enum):
    # With no detected objects, treat the local distance as the zero vector
    # (so the combined distance degenerates to w1 * global).
    ZERO_LOCAL = "zero_local"
    # Or refuse to featurize the sample.
    SKIP_SAMPLE = "skip_sample"


@dataclass(frozen=True)
class FusionConfig:
    """Weights and mode for combining global and local distances."""

    w1: float = 1.0
    w2: float = 1.0
    mode: FusionMode = FusionMode.BOTH
    empty_object_policy: EmptyObjectPolicy = EmptyObjectPolicy.ZERO_LOCAL

    def __post_init__(self):
        if not (math.isfinite(self.w1) and math.isfinite(self.w2)):
            raise ValueError("fusion weights must be finite")
        if self.mode is FusionMode.BOTH and self.w1 == 0.0 and self.w2 == 0.0:
            raise ValueError("mode=both needs at least one nonzero weight")

    def effective_weights(self) -> tuple[float, float]:
        """(w1, w2) after the mode zeroes out the unused side."""
        if self.mode is FusionMode.GLOBAL_ONLY:
            return self.w1, 0.0
        if self.mode is FusionMode.LOCAL_ONLY:
            return 0.0, self.w2
        return self.w1, self.w2


def l2_normalize(v: Embedding) -> Embedding:
    """Scale v to unit Euclidean norm.

    Raises ZeroNormEmbedding if the norm is at or below NORM_EPS.
    """
    norm = float(np.linalg.norm(v.values))
    if norm <= NORM_EPS:
        raise ZeroNormEmbedding(f"cannot normalize embedding with norm {norm}")
    return Embedding(v.values / norm)


def _check_dims(a: Embedding, b: Embedding) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"embedding dims differ: {a.dim} vs {b.dim}")


def misalignment(
    image_emb: Embedding,
    text_emb: Embedding,
    kind: MisalignmentKind = MisalignmentKind.GLOBAL,
) -> Misalignment:
    """Difference of the two embeddings' unit directions."""
    _check_dims(image_emb, text_emb)
    diff = l2_normalize(image_emb).values - l2_normalize(text_emb).values
    return Misalignment(diff, kind)


def global_distance(whole_image_emb: Embedding, full_caption_emb: Embedding) -> Misalignment:
    """Misalignment of the whole image against the full caption."""
    return misalignment(whole_image_emb, full_caption_emb, MisalignmentKind.GLOBAL)


def local_distance(object_image_emb: Embedding, object_phrase_emb: Embedding) -> Misalignment:
    """Misalignment of one object crop against its caption phrase."""
    return misalignment(object_image_emb, object_phrase_emb, MisalignmentKind.LOCAL_SINGLE)


def average_local(
    locals_: Sequence[Misalignment],
    policy: EmptyObjectPolicy = EmptyObjectPolicy.ZERO_LOCAL,
    *,
    dim: int | None = None,
) -> Misalignment:
    """Entrywise mean of per-object misalignments.

    An empty sequence returns the zero vector of `dim` under ZERO_LOCAL and
    raises EmptyObjectSet under SKIP_SAMPLE.
    """
    if not locals_:
        if policy is EmptyObjectPolicy.SKIP_SAMPLE:
            raise EmptyObjectSet("no local misalignments and policy is skip_sample")
        if dim is None:
            raise ValueError("dim is required to build a zero local distance")
        return Misalignment(np.zeros(dim), MisalignmentKind.LOCAL_MEAN)
    for m in locals_:
        if m.kind is not MisalignmentKind.LOCAL_SINGLE:
            raise ValueError(f"average_local expects local_single inputs, got {m.kind}")
        if m.dim != locals_[0].dim:
            raise DimensionMismatch(f"local misalignment dims differ: {m.dim} vs {locals_[0].dim}")
    if dim is not None and locals_[0].dim != dim:
        raise DimensionMismatch(f"local misalignments have dim {locals_[0].dim}, expected {dim}")
    mean = np.mean([m.values for m in locals_], axis=0)
    return Misalignment(mean, MisalignmentKind.LOCAL_MEAN)


def combine(global_: Misalignment, local: Misalignment, cfg: FusionConfig) -> Misalignment:
    """Weighted sum w1*global + w2*local, honoring the fusion mode."""
    if global_.kind is not MisalignmentKind.GLOBAL:
        raise ValueError(f"combine expects a global distance, got {global_.kind}")
    if local.kind is not MisalignmentKind.LOCAL_MEAN:
        raise ValueError(f"combine expects a local_mean distance, got {local.kind}")
    if global_.dim != local.dim:
        raise DimensionMismatch(f"global/local dims differ: {global_.dim} vs {local.dim}")
    w1, w2 = cfg.effective_weights()
    values = w1 * global_.values + w2 * local.values
    bound = _UNIT_DIFF_BOUND * (abs(w1) + abs(w2))
    return Misalignment(values, MisalignmentKind.COMBINED, bound=bound)


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1]."""
    _check_dims(a, b)
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise ZeroNormEmbedding("cosine similarity of a zero-norm embedding")
    cos = float(np.dot(a.values, b.values) / (na * nb))
    return min(1.0, max(-1.0, cos))
