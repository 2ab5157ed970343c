"""Cross-tokenizer supervision spaces at desk scale.

Aligns two tokenizations of the same text into minimal aligned units,
projects teacher and student predictions onto a common candidate space,
computes reverse-KL losses and coarsening diagnostics, and runs a small
on-policy distillation loop over tabular toy models.
"""

from .alignment import (
    AlignedUnit,
    AtomicFragment,
    BoundarySet,
    MinimalityVerdict,
    UnitPartition,
    boundary_union,
    brute_force_units,
    minimal_aligned_units,
    verify_minimality,
)
from .divergence import (
    Coarsening,
    CoarseDistribution,
    Divergence,
    coarsen,
    decomposition_check,
    expected_delta,
    forward_kl,
    gopd_loss,
    kl_divergence,
    pairwise_sum,
    refines,
    removed_kl_signal,
    reverse_kl,
)
from .errors import (
    ConfigError,
    CoverageError,
    DistributionError,
    DuplicateTokenError,
    EmptyStreamError,
    EmptyTokenError,
    GapOrOverlapError,
    InternalCheckError,
    RealizationMissingError,
    SimctError,
    SpaceMismatchError,
    TextMismatchError,
    TokenMismatchError,
    UnsegmentableTextError,
    VocabularyFormatError,
)
from .opdloop import (
    MismatchReport,
    Mode,
    OpdConfig,
    Rollout,
    StepReport,
    SupervisedPosition,
    coarsening_ablation,
    evaluate_rollouts,
    is_mismatch_unit,
    merge_adjacent_units,
    mismatch_stats,
    make_rollout,
    opd_step,
    recovery_ablation,
    rollout_from_text,
    run_distillation,
    supervised_positions,
)
from .supervision import (
    DistributionSource,
    LengthNorm,
    Side,
    SpaceMode,
    SupervisionDistribution,
    SupervisionSpace,
    SupervisionUnit,
    UnitKind,
    build_space,
    continuation_score,
    project,
    project_scores,
    shared_vocabulary,
    softmax_with_logs,
    unit_scores,
)
from .textbytes import escape_token, unescape_token
from .tokenizer import (
    Segmentation,
    TokenSpan,
    Vocabulary,
    load_segmentation,
    load_vocabulary,
    segment_greedy,
)
from .toymodel import (
    Generation,
    NGramTable,
    RNG_ALGORITHM,
    SamplingConfig,
    StudentLogitTable,
    fit_ngram,
    loss_gradient,
    make_rng,
    nucleus_candidates,
    sample_next,
    sample_rollout,
)

__version__ = "0.1.0"
