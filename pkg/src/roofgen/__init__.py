"""Single-image roof mesh generation: tokenizer, generative models, metrics,
synthetic data, baselines and a CLI."""

from .errors import (
    DegenerateSample,
    EmptyInput,
    EmptyMesh,
    GrammarError,
    InvalidPolygon,
    IoError,
    LimitExceeded,
    MissingGrad,
    ParseError,
    RoofgenError,
    ShapeError,
    SpecError,
)
from .geometry import (
    FaceNormalSet,
    ImageGrid,
    Mesh,
    QuantizedMesh,
    dequantize,
    face_normals,
    normalize_to_unit_cube,
    quantize,
)
from .meshio import read_obj, read_pgm, write_obj, write_pgm
from .metrics import (
    FootprintPolygon,
    MetricsReport,
    angular_dissimilarity,
    evaluate_batch,
    footprint_iou,
    footprint_polygon,
    polis_distance,
)
from .model import (
    ModelConfig,
    RoofModel,
    SamplerConfig,
    StackConfig,
    TrainSchedule,
    nucleus_probabilities,
    preset,
    sample,
    sample_batch,
)
from .synthroof import (
    DatasetManifest,
    RenderConfig,
    RoofSpec,
    build_roof,
    generate_dataset,
    load_manifest,
    render_topdown,
)
from .tokenizer import (
    SequenceLimits,
    decode_faces,
    decode_vertices,
    encode_faces,
    encode_vertices,
    valid_next_tokens,
)
from .training import train

__version__ = "0.1.0"
