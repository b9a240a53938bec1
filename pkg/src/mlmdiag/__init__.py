"""Diagnostics for masked-LM conditional self-consistency, plus EOC inference."""

from ._version import __version__
from .core import (
    Baseline,
    BigramQuadruple,
    CandidateScores,
    KOffset,
    MaskedQuery,
    MaskPattern,
    Multimask,
    TaskInstance,
    TokenSeq,
    ValidationError,
    Vocabulary,
    validate,
)
from .counting import (
    CountReport,
    brute_force_enumerate,
    count_report,
    joint_dof,
    mlm_count_k,
    mlm_count_single,
)
from .oracle import (
    ConsistentProvider,
    JointTable,
    NoiseSpec,
    PerturbedProvider,
    ZeroMassError,
    condition,
    consistent_provider,
    perturbed_provider,
    random_joint,
    verify_cross_ratio,
)
from .patterns import (
    PatternDoesNotFit,
    PresetKey,
    apply_pattern,
    preset_patterns,
    select_patterns,
)
from .providers import Capability, Provider, score_matrix
from .metrics import disagreement_curve, instance_disagrees, log_prob_gap
from .ensemble import EocPrediction, eoc_accuracy_curve, eoc_predict
from .bigram import generate_quadruples, infer_eight, quadruple_stats, solve_one
from .harness import (
    ExperimentConfig,
    lambada_candidates,
    load_tasks,
    run_experiment,
    synth_tasks,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
