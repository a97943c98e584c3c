"""All modules for hsa-lab package"""

from ._version import __version__
from .datagen import GenerateArguments
from .evaluation import CostArguments, EvalArguments, InspectArguments
from .manifest import RunManifest
from .model import HSAModel, ModelConfig
from .pipeline import pipeline, pipeline_with_client
from .runtime_arguments import RuntimeArguments
from .train import RunConfig, TrainArguments
