"""Evolutionary dexterous-grasp synthesis against a quasi-static oracle."""

from .evaluator import (
    ContactSet,
    EvalConfig,
    EvalResult,
    FitnessBreakdown,
    Grasp,
    depenetrate,
    evaluate,
    penetration_energy,
    prepare_grasp,
    select_contacts,
    solve_closing_command,
    wrench_resist_feasible,
)
from .evolution import (
    Archive,
    ArchiveConfig,
    ArchiveEntry,
    RunConfig,
    SelectionConfig,
    VariationConfig,
    crossover,
    density_reweight,
    embedding_distance,
    grasp_embedding,
    mutate,
    run_evolution,
    seed_population,
    tournament_select,
)
from .geometry import (
    PointSet,
    Primitive,
    SdfScene,
    ball_query,
    farthest_point_sample,
    load_scene,
    save_scene,
    sdf_eval,
    sdf_gradient,
)
from .hand import (
    HandModel,
    HandState,
    WristPose,
    build_parametric_hand,
    clamp_to_limits,
    contact_jacobian,
    forward_kinematics,
    load_hand,
    save_hand,
)
from .metrics import (
    DsgResolution,
    MetricsReport,
    STANDARD_RESOLUTIONS,
    compute_report,
    distinct_stable_grasps,
    marginal_entropies,
    success_rate,
)
from .preference import (
    FeatureExtractor,
    PreferencePair,
    RewardModel,
    e_reward,
    fit_reward_model,
    pairwise_loss,
    reward,
    sample_annotation_pair,
    train,
)

__version__ = "0.1.0"
