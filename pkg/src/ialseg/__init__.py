"""Importance-aware semantic segmentation at desk scale.

A numpy implementation of frequency-weighted cross-entropy and the
importance-aware loss (group-ranked CE with dynamic importance weights),
two small encoder-decoder segmentation networks with hand-written
backward passes, an Adam trainer, a synthetic street-scene dataset, and
confusion-matrix evaluation tooling.
"""

from .hierarchy import (
    CellValue,
    ClassDef,
    HierarchyError,
    ImportanceHierarchy,
    MatrixSpec,
    build_matrix_specs,
    camvid_hierarchy,
    cityscapes_hierarchy,
    group_rank_map,
    hierarchy_from_dict,
    hierarchy_to_dict,
    parse_hierarchy,
    rasterize_matrix,
    serialize_hierarchy,
)
from .loss import (
    ClassWeights,
    LossBreakdown,
    class_frequencies,
    dynamic_weight,
    enet_weights,
    ial_gradient,
    ial_loss,
    ial_loss_and_grad,
    wce_loss_and_grad,
    weighted_ce,
)
from .layers import softmax
from .net import (
    BiErfPspNet,
    ErfPspNet,
    NetConfig,
    ParamStore,
    Parameter,
    build_network,
)
from .optim import Adam, OptimConfig, lr_at
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_params_into,
    save_checkpoint,
    save_params,
)
from .reference import naive_loss_oracle
from .netpbm import NetpbmError, load_pgm, load_ppm, save_pgm, save_ppm
from .data import (
    Dataset,
    Sample,
    SceneConfig,
    batches,
    generate_scene,
    load_dataset,
    make_dataset,
    scene_hierarchy,
    write_dataset,
)
from .metrics import (
    ConfusionMatrix,
    GroupReport,
    class_metrics,
    group_report,
    predictions_from_prob,
    report_from_json,
    report_to_csv,
    report_to_json,
)
from .train import (
    EpochStats,
    LossConfig,
    TrainResult,
    evaluate_model,
    evaluate_report,
    history_to_csv,
    train_model,
)
from .gradcheck import run_all_checks, run_layer_checks, run_loss_check

__version__ = "0.1.0"
