"""pestpipe: metadata-driven two-stage plant pest identification pipeline."""

__version__ = "0.1.0"

from .catalog import ImageRecord, Manifest, Taxonomy, ingest_manifest  # noqa: F401
from .classes import ClassScheme, ScenarioConfig, build_class_scheme  # noqa: F401
from .evaluate import EvalReport, compute_report  # noqa: F401
from .roi import PolygonAnnotation, RoiCrop, extract_roi_crops  # noqa: F401
from .split import SplitAssignment, audit_leakage  # noqa: F401
