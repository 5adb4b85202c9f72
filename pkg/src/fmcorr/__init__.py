"""Dense shape correspondence with learned descriptors and functional maps."""

from .descriptors import DescriptorField, ShotConfig, compute_hks, compute_shot
from .errors import (ChecksumError, DegenerateColumnError, EigenSolverError, FmcorrError, FormatError,
                     MeshFormatError, NumericalError)
from .estimators import FMNet, ShotDescriptor
from .evaluation import CurveSeries, cmc_curve, match_distance_histogram, princeton_curve
from .fmap import (FunctionalMap, PointMap, SoftCorrespondence, normalize_columns, recover_point_map,
                   soft_correspondence, soft_error_loss, solve_fmap)
from .fmnet import ShapeBundle, TrainConfig, TrainPair, compute_map, train
from .geodesics import DistanceCache, DistanceRows, geodesic_distances, geodesic_error
from .mesh import Injection, TriMesh, load_mesh, nearest_neighbor_injection, read_mesh
from .spectral import LaplaceOperator, SpectralBasis, build_fem_laplacian, compute_eigenbasis, project, reconstruct
from .upscale import AdmmConfig, AdmmResult, solve_l21, upscale_map

__version__ = "0.1.0"
