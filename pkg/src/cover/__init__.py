"""Training-free budgeted viewpoint curation over triangle-mesh scenes:
ERP rendering, a warping-based marginal-gain proxy with conflict
penalties, exact reference oracles, baselines, and a bit-exact exporter.
"""

from .bvh import Bvh, build_bvh, brute_force_raycast
from .candidates import (Candidate, CandidateSet, GridConfig, RayFan,
                         filter_all, gen_candidates, sanity_filter)
from .curator import (BASELINES, CuratorConfig, ExactOracle, SelectionState,
                      StepLog, baseline_select, oracle_gap_run, select_greedy,
                      select_exact_greedy, score_candidate, visibility_mask)
from .evaluation import (EvalRow, compare_selectors, cross_scene_run,
                         evaluate_selection, lambda_sweep)
from .geom import (Aabb, PoseWC, QuatWC, UPRIGHT_QUAT, camera_to_world,
                   dir_to_pixel, pixel_to_dir, upright_pose, world_to_camera)
from .render import ErpImage, render_erp, unproject, warp_cloud
from .scene import (RoomSpec, SurfaceElements, TriMesh, discretize_surface,
                    gen_room_scene, load_mesh, save_mesh)

__version__ = "0.1.0"
