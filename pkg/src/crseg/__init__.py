"""Instance segmentation of EM volumes by tracking objects through z with
a hierarchical recurrent decoder."""
from .config import InferenceConfig, ModelConfig, TrainConfig
from .decoder import Network, decode_sequence
from .rand_metrics import adapted_rand_error
from .segmenter import infer_volume
from .synth import SynthSpec, generate
from .trainer import train
from .voxel_store import LabelMap, Volume, read_volume, write_volume

__version__ = "0.1.0"

__all__ = ["InferenceConfig", "ModelConfig", "TrainConfig", "Network", "decode_sequence",
           "adapted_rand_error", "infer_volume", "SynthSpec", "generate", "train",
           "LabelMap", "Volume", "read_volume", "write_volume"]
