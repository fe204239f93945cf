"""Curation and analysis tools for multi-annotator lesion segmentation masks."""

from .agreement import (
    AgreementRecord,
    ConfusionMatrix,
    agreement_scores,
    agreement_table,
    kappa,
    avg_pairwise_kappa,
    cohen_kappa,
    confusion,
    derive_training_sets,
    kappa_distribution,
    kappa_percentiles,
    select_samples,
)
from .anova import (
    AnovaTable,
    FactorSpec,
    RunRecord,
    anova_table,
    build_design,
    designable_shares,
    load_runs,
    study_factors,
)
from .conditioning import (
    ConditioningKind,
    StructuringElement,
    apply_conditioning,
    convex_hull_mask,
    dilate,
    erode,
    opening,
)
from .mask_io import (
    DatasetManifest,
    SampleRecord,
    dataset_stats,
    load_manifest,
    load_mask,
    save_manifest,
    sample_training_mask,
    save_mask,
    split_dataset,
)
from .metrics import (
    EvaluationReport,
    bce_with_logits,
    best_of_jaccard,
    combined_loss,
    evaluate_predictions,
    jaccard,
    soft_jaccard_loss,
)
from .special import betainc, f_pvalue

__version__ = "0.1.0"
