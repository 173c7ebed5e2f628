"""LiDAR odometry and mapping toolkit.

Range-image normals and geometric point classes feed a degeneracy-weighted
point-to-plane / point-to-point ICP against a voxel map; a polar descriptor
back-end closes loops through a pose graph.
"""

from .kernels import BACKEND
from .geometry import (
    pose_compose,
    pose_inverse,
    se3_exp,
    se3_log,
    solve_spd6,
    sym_eig3,
)
from .projection import ProjectionConfig, RangeImage, project, unproject
from .normals import NormalConfig, NormalMap, compute_normals
from .classification import ClassifyConfig, LabeledCloud, PointLabel, classify
from .voxel_map import CorrespondenceSet, VoxelMap, downsample
from .degeneracy import DegeneracyReport, compute_point_weights
from .registration import RegistrationParams, RegistrationReport, register, predict_initial_guess
from .scan_context import (
    DescriptorDatabase,
    ScanContextConfig,
    ScanContextDescriptor,
    descriptor_distance,
    make_descriptor,
)
from .pose_graph import PoseGraph
from .dataset_io import (
    DatasetLayout,
    Trajectory,
    open_dataset,
    read_groundtruth,
    read_scan,
    write_trajectory_tum,
)
from .evaluation import ErrorStats, ape, associate, rpe
from .config import PipelineConfig, default_config, load_config, parse_config
from .pipeline import RunResult, run_odometry, run_slam
from .synthetic import SyntheticWorld, generate_synthetic

__version__ = "0.1.0"
