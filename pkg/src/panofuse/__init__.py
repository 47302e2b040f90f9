"""panofuse: deterministic promptable panoptic mapping over TSDF submaps."""

from .dataset_io import (
    CategoryTable,
    Dataset,
    Detection,
    FrameRecord,
    UnifiedCategory,
    filter_blurry,
    load_category_table,
    load_manifest,
)
from .errors import EngineError
from .evaluation import (
    GeometricReport,
    PanopticReport,
    Segment,
    detection_prf,
    f1_detail,
    geometric_metrics,
    mean_ap,
    panoptic_quality,
)
from .fusion import (
    DynamicDescriptor,
    FusionConfig,
    PanopticMap,
    Submap,
    associate,
    integrate_mask,
    process_frame,
    render_submap_mask,
    update_descriptor,
)
from .geometry import CameraIntrinsics, Mask, Pose, mask_iou
from .map_model import SurfacePointCloud, extract_points, load_map, query, save_map
from .nms import NmsConfig, custom_nms, per_class_nms
from .retrieval import (
    ElementaryDescriptor,
    make_elementary_descriptor,
    normalize_label,
    retrieve_category,
)

__version__ = "0.1.0"
