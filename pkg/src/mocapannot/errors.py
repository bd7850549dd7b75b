"""Exception hierarchy shared by all pipeline modules.

Every error carries a module-qualified ``code`` so the CLI can surface
machine-readable failures.
"""


class ToolkitError(Exception):
    """Base class for all pipeline errors."""

    code = "toolkit.error"


# --- geometry ---------------------------------------------------------------

class NonFiniteInput(ToolkitError, ValueError):
    code = "geometry.non_finite_input"


class DegenerateConfiguration(ToolkitError):
    """Point set cannot define the requested transform (collinear, coplanar,
    or too few correspondences)."""

    code = "geometry.degenerate_configuration"


class DegenerateGeometry(ToolkitError):
    """Viewing rays too close to parallel for a reliable triangulation."""

    code = "geometry.degenerate_geometry"


# --- mocap tracking ---------------------------------------------------------

class InsufficientMarkers(ToolkitError):
    code = "mocap.insufficient_markers"


class AmbiguousIdentity(ToolkitError):
    code = "mocap.ambiguous_identity"


# --- synchronizer -----------------------------------------------------------

class NoFlashesDetected(ToolkitError):
    code = "sync.no_flashes_detected"


class IrregularPeriod(ToolkitError):
    code = "sync.irregular_period"


class InsufficientMatches(ToolkitError):
    code = "sync.insufficient_matches"


class ResidualTooHigh(ToolkitError):
    code = "sync.residual_too_high"


# --- calibration ------------------------------------------------------------

class PoorCoverage(ToolkitError):
    code = "calibration.poor_coverage"


class HighReprojection(ToolkitError):
    code = "calibration.high_reprojection"


# --- annotation engine ------------------------------------------------------

class InsufficientViews(ToolkitError):
    code = "annotation.insufficient_views"


class InvalidPose(ToolkitError):
    code = "annotation.invalid_pose"


class NoVisibleKeypoints(ToolkitError):
    code = "annotation.no_visible_keypoints"


# --- quality control --------------------------------------------------------

class TooFewSamples(ToolkitError):
    code = "qc.too_few_samples"


class NoMatchedPairs(ToolkitError):
    code = "qc.no_matched_pairs"


class DegeneratePlane(ToolkitError):
    code = "qc.degenerate_plane"


# --- hybrid filler ----------------------------------------------------------

class InfeasibleSpec(ToolkitError):
    code = "hybrid.infeasible_spec"


class BoundaryGap(ToolkitError):
    code = "hybrid.boundary_gap"


# --- pipeline / manifest ----------------------------------------------------

class ManifestError(ToolkitError):
    code = "pipeline.manifest_error"
