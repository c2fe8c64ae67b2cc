"""Road segmentation improvement by fusing similar-place priors.

The package retrieves geographically distinct but visually similar
reference images for each query, averages their class logits into a
template prior, and fuses prior and query through a per-class Gaussian
update whose strength adapts to class-coverage consistency.
"""

from .errors import (ConfigError, DataFormatError, ManifestError,
                     NoEligibleReferencesError, RoadFusionError,
                     SchemaMismatchError)
from .evaluation import (DEFAULT_METHODS, DatasetReport, FrameReport, aggregate,
                         class_iou, render_summary, write_frame_csv)
from .engine import EngineConfig, RunContext, run_eval, run_fuse, sweep_ell
from .fusion import (FusedResult, FusionConfig, compute_tempering,
                     dataset_avg_prior, fuse, gt_to_pseudologits,
                     posterior_update, prior_only_predict, road_candidate_mask)
from .manifest import (ClassSchema, DatasetManifest, ImageEntry, load_manifest,
                       write_manifest)
from .prior import (ClassStats, CoverageVector, TemplatePrior, build_template,
                    class_coverage, class_std, coverage_over_set, resize_bilinear)
from .retrieval import (DescriptorIndex, GeoExclusion, RetrievalResult,
                        build_index, cosine_distance, haversine_m,
                        retrieve_similar)
from .tensorio import (Descriptor, LabelGrid, LogitMap, read_descriptor,
                       read_label_grid, read_logit_map, write_descriptor,
                       write_label_grid, write_logit_map)

__version__ = "0.1.0"
