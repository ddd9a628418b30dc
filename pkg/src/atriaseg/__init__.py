"""Two-stage bi-atrial LGE-MRI segmentation toolkit.

Library surface: geometric types (Volume, LabelMap, CropBox), NIfTI I/O,
resampling, ROI extraction, 3D CLAHE, morphological post-processing,
DSC/HD95/thickness metrics, pluggable segmentation backends and the batch
pipeline. The hot kernels run on a compiled extension when available, with
a numpy/scipy fallback selected at import (see atriaseg._kernels).
"""

__version__ = "0.1.0"

from ._kernels import active_backend, available_backends, set_backend
from .backends import BackendError, BackendSpec, coarse_segment, segment
from .clahe import (ClaheParams, TileGrid, build_tile_grid, clahe3d, clip_and_redistribute,
                    mapping_from_hist)
from .geometry import (CropBox, Dims, GeometryError, GeometryMismatchError, LabelMap, Spacing,
                       Volume, flatten_index, intensity_range, make_labels, make_volume,
                       same_geometry, unflatten_index, validate_labels)
from .metrics import (AggregateMetrics, AggregateStat, CaseMetrics, ClassMetrics,
                      ThicknessStats, UndefinedMetricError, aggregate, boundary_distance_field,
                      dice, hausdorff_percentile, hd95, surface_voxels, wall_thickness)
from .morphology import fill_holes_greyscale, keep_largest_component, label_components, \
    postprocess
from .nifti import NiftiError, read_fixture, read_labels, read_volume, write_fixture, \
    write_volume
from .pipeline import (CaseRecord, CaseResult, ConfigError, PipelineConfig, config_from_dict,
                       discover_cases, evaluate_pair, load_config, preprocess_cases, run_case,
                       run_dataset)
from .resample import downsample_linear, downsample_nearest, upsample_nearest
from .roi import (EmptyMaskError, RoiParams, binarize, centroid, crop_box_from_coarse_centroid,
                  crop_with_padding, paste_back)
