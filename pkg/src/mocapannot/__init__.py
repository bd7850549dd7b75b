"""Motion-capture driven 2D/3D keypoint annotation toolkit."""

from .annotation import (
    AnnotatedFrame,
    KEYPOINT_NAMES,
    KeypointTemplate,
    ManualAnnotation,
    bounding_box,
    estimate_template,
    filter_training_crops,
    propagate_frame,
    propagate_sequence,
)
from .calibration import ExtrinsicObservation, calibrate_extrinsics
from .geometry import (
    CameraIntrinsics,
    CameraModel,
    RigidTransform,
    compose,
    invert,
    project,
    project_many,
    rigid_fit,
    solve_pnp,
    triangulate,
    triangulate_many,
)
from .hybrid import (
    GapSpec,
    KeypointSeries,
    compare_fills,
    fill_linear,
    fill_triangulation,
    introduce_gaps,
)
from .mocap import (
    BodyTrack,
    Marker,
    MarkerFrame,
    RigidBodyDef,
    fit_body_pose,
    identify_individuals,
    repair_labels,
    track_sequence,
)
from .qc import (
    PoseOrientation,
    PredictionRecord,
    count_unique_poses,
    filter_frames,
    gap_statistics,
    gesd_outliers,
    pck_report,
    pose_orientation,
    rmse_report,
)
from .sync import (
    ClockMap,
    FlashTimeline,
    IntensitySignal,
    build_clock_map,
    detect_flashes_mocap,
    detect_flashes_video,
    fill_missing_flashes,
)

__version__ = "0.1.0"
