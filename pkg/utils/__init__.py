from .config import RunConfig, TrainConfig
from .cost import count_flops, count_macs, count_params
from .data import SynthSpec, generate_dataset, load_dataset, save_dataset
from .errors import FusionUNetError
from .fusion import FusionMode, ResampleMode, inverse_reorganize, reorganize
from .gradcheck import grad_check
from .model import FusionConfig, FusionUNet, build, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

__all__ = [
    'RunConfig', 'TrainConfig', 'count_flops', 'count_macs', 'count_params', 'SynthSpec', 'generate_dataset',
    'load_dataset', 'save_dataset', 'FusionUNetError', 'FusionMode', 'ResampleMode', 'inverse_reorganize',
    'reorganize', 'grad_check', 'FusionConfig', 'FusionUNet', 'build', 'load_checkpoint', 'save_checkpoint',
    'Tensor', 'no_grad',
]
