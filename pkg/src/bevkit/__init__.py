"""bevkit: bird's-eye-view traffic scene toolkit.

Synthetic lane-graph scenes with ground truth, rule-based per-timestep
annotation, ego-centric BEV rasterization with controllable noise, VQA
dataset generation/balancing/splitting, unicycle trajectory tooling, and
evaluation metrics. See the `bevkit` CLI for the end-to-end pipeline.
"""

__version__ = "0.1.0"

from .scenemodel import (  # noqa: F401
    Area,
    AreaType,
    Lane,
    LaneType,
    MapGraph,
    Scene,
    TrajectoryCategory,
    Vec2,
    VehicleAction,
    VehicleState,
    VehicleTrack,
    load_scene,
    resample_polyline,
    save_scene,
    validate_scene,
)
from .synth import GroundTruth, SynthSpec, synth_scene  # noqa: F401
from .annotator import AnnotationRecord, AnnotatorConfig, annotate_scene  # noqa: F401
from .bevrender import BevRaster, RenderConfig, render_bev  # noqa: F401
from .vqagen import QAItem, QType, balance_dataset, dataset_stats, gen_questions, split_dataset  # noqa: F401
from .motion import (  # noqa: F401
    ActionSeq,
    ConditionBundle,
    StateSeq,
    assemble_condition,
    describe_trajectory,
    extract_map_understanding_gt,
    inverse_dynamics,
    lane_follow_plan,
    rollout,
    step_unicycle,
)
from .metrics import (  # noqa: F401
    DisplacementMetrics,
    Prediction,
    displacement_metrics,
    obb_overlap,
    qa_accuracy,
    scenario_collision_rate,
)
