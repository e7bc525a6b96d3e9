"""exprbench: a small NumPy/Cython CNN engine and facial-expression benchmark harness."""

__version__ = "0.1.0"

from .architectures import ArchitectureSpec, LayerSpec, builtin, infer_shapes, param_count, trace  # noqa: E402
from .data import CLASS_NAMES, Dataset, Landmarks, Sample, augment, load_fer_csv, load_image_dir, register  # noqa: E402
from .errors import (  # noqa: E402
    ArchitectureError, CheckpointError, DataError, ExprbenchError, PlanError, ShapeError, TrainingError,
)
from .kernels import BACKEND  # noqa: E402
from .preprocess import METHODS, PrepMethod  # noqa: E402
from .tensor import Rng, precision  # noqa: E402
from .trainer import Checkpoint, EvalResult, Model, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train  # noqa: E402
from .bench import ExperimentPlan, ReportRow, emit_report, load_plan, run_matrix  # noqa: E402
