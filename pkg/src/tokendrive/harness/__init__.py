"""Training, evaluation, ablation and analysis harness behind the ``tokendrive`` CLI."""
from tokendrive.harness.config import RunConfig, load_config, parse_config_text
from tokendrive.harness.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from tokendrive.harness.model import DrivingModel, ModelAgent, Sample

__all__ = ["RunConfig", "load_config", "parse_config_text", "Checkpoint", "decode_checkpoint",
           "encode_checkpoint", "load_checkpoint", "save_checkpoint", "DrivingModel", "ModelAgent", "Sample"]
