"""presspose: in-bed pose estimation from pressure-mat recordings.

The pipeline colorizes cleaned pressure maps, passes them through a
trainable polishing network, and reads keypoints out of a frozen
pre-trained pose module. Training updates only the polishing network,
driven by heatmap + PAF losses against rendered targets plus a pixel
regularizer.
"""

from .annotation import (
    PART_NAMES,
    AnnotationStore,
    KeypointSet,
    load_annotations,
    save_annotations,
    visibility_mask,
)
from .adapters import (
    MockPoseAdapter,
    PoseAdapter,
    StageRunnerAdapter,
    load_adapter,
)
from .colormaps import Colormap, colorize, get_colormap, list_colormaps
from .datasets import (
    EvalSample,
    TrainingSample,
    build_eval_samples,
    build_training_samples,
    make_synthetic_recording,
)
from .evaluation import (
    EvalReport,
    PCKCurve,
    auc,
    colormap_benchmark,
    emit_report,
    evaluate_pipeline,
    pck,
    pipeline_auc,
    torso_length,
)
from .polishnet import (
    PolishNet,
    PolishNetConfig,
    init_polishnet,
    load_checkpoint,
    polish_image,
    save_checkpoint,
)
from .pressure import (
    PressureFrame,
    PressureSequence,
    load_sequence,
    median_filter_3d,
    save_sequence,
    trim_transitions,
)
from .targets import (
    LIMBS,
    SkeletonTopology,
    TargetMaps,
    decode_keypoints,
    render_heatmaps,
    render_pafs,
    render_target_maps,
)
from .training import (
    LossWeights,
    SplitPlan,
    TrainConfig,
    heatmap_loss,
    lambda_sweep,
    learning_rate_at,
    make_split_plan,
    paf_loss,
    pixel_loss,
    total_loss,
    train,
)

__version__ = "0.1.0"
