"""Pseudo-label supervision for first-person cooperator heat maps."""
from .errors import (CorruptArtifact, Diverged, EgoError, IncompleteInput, InvalidInput,
                     NoCandidates, ParseError, UnsupportedVersion)
from .evaluation import EvalReport, GTAnnotation, evaluate, predict_cooperator, run_ablations
from .grid import BBox, GridDims
from .learner import LearnerParams, TrainConfig, forward, init_params, train
from .transformer import (Frame, Keypoint, LocationPriorArtifact, PersonDetection, PriorConfig,
                          build_location_prior, pseudo_gt)

__version__ = "0.1.0"
