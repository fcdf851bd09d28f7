"""Post-hoc OOD scoring and evaluation on pre-extracted feature/logit dumps."""

from .calib import (
    CalibrationError,
    CalibrationStats,
    class_means,
    column_weight_sums,
    energy_confidence,
    fit_calibration,
    load_stats,
    save_stats,
)
from .datastore import (
    ClassifierHead,
    ConsistencyReport,
    ContainerError,
    FeatureDataset,
    TensorManifest,
    TensorSpec,
    derive_logits,
    logits_consistency,
    read_container,
    read_dataset,
    write_container,
    write_dataset,
)
from .metrics import (
    CSV_HEADER,
    EvalResult,
    MetricError,
    auroc,
    csv_row,
    evaluate,
    fpr_at_tpr,
    threshold_at_tpr,
)
from .scores import (
    DecoupledScores,
    GafdParams,
    MethodSpec,
    ScoreBatchError,
    ScoreError,
    ScoreVector,
    decouple,
    energy_detection_score,
    gafd_cc_score,
    maxlogit_score,
    msp_score,
    react_fit_threshold,
    react_score,
    read_scores,
    score_batch,
    write_scores,
)
from .synth import (
    ExperimentRow,
    OOD_KINDS,
    SynthConfig,
    SynthError,
    experiment_csv,
    make_head,
    run_synthetic_experiment,
    sample_id,
    sample_ood,
)

__version__ = "0.1.0"
