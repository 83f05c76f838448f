"""Neural acoustic fields conditioned on radiance-field voxel grids."""

from . import dsp, encodings, errors, metrics, nacf, oracle, scenefield, store, training
from .dsp import StftConfig, Spectrogram, Waveform, griffin_lim, istft, log_stft, stft
from .encodings import EncodingConfig, PoseBounds
from .errors import (
    DegenerateInputError,
    FormatError,
    InfiniteClarityError,
    InsufficientDecayError,
    InvalidInputError,
    NaNGradientError,
    NerafError,
    ProviderError,
)
from .estimator import AcousticFieldRegressor, NearestPairRegressor
from .metrics import RirErrorReport, c50, edt, rir_error_report, t60
from .nacf import NacfConfig, NeuralAcousticField
from .oracle import Pose, RirDataset, ShoeboxRoom, generate_dataset, image_source_rir
from .scenefield import AnalyticShoeboxField, TrainableField, VoxelGrid, build_grid, populate_grid
from .training import LossWeights, TrainConfig, evaluate, train

__version__ = "0.1.0"
