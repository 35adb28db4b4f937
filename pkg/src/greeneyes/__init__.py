"""PM2.5 to IAQI conversion, polygonal level targets and a WaveNet / attention /
BiLSTM sequence-to-point regressor on a small numpy autodiff engine."""

from .aqi import (
    CHINA_PM10,
    CHINA_PM25,
    USA_PM10,
    USA_PM25,
    BreakpointTable,
    ClampWarning,
    aqi_from_iaqis,
    get_table,
    iaqi_from_concentration,
    level_from_iaqi,
    series_to_iaqi,
)
from .dataset import (
    NormStats,
    SampleSet,
    Series,
    SynthParams,
    WindowSpec,
    build_samples,
    chronological_split,
    count_samples,
    fit_and_apply_normalizer,
    fuse_channels,
    load_series_csv,
    synth_annotation,
    synth_generate,
)
from .errors import (
    AnnotationError,
    CheckpointError,
    DivisionByZeroError,
    GreenEyesError,
    IngestError,
    NonFiniteError,
    ShapeError,
    TapeError,
    TrainingError,
)
from .nn import GreenEyesModel, ModelConfig, init_params, model_forward, receptive_field
from .targets import Annotation, PolygonalTarget, load_annotation, polygonalize, segment_slope
from .tensor import Tape, Tensor, backward, grad_check
from .training import (
    Checkpoint,
    TrainConfig,
    TrainReport,
    evaluate_full_sequence,
    generalization_ratio,
    load_checkpoint,
    lr_at_epoch,
    mae,
    mse,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
