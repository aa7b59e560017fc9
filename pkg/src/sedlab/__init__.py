"""sedlab: a desk-scale sound event detection laboratory.

Library layout:

* ``tensor`` / ``ops``  - float32 tensors, reverse-mode autodiff, CRNN primitives
* ``freq_conv``         - vanilla / FDY / FW / FK convolution variants
* ``frontend``          - WAV loading and the 128-bin log-mel front end
* ``augment``           - FilterAugment, frequency/time masking, mixup, frame shift
* ``model``             - the CRNN (7 conv blocks + biGRU x2 + strong/weak heads)
* ``training``          - mean-teacher loop: batching, losses, EMA, Adam, ramp
* ``evaluation``        - weak masking, median filter, event decoding, CB-F1, PSDS
* ``analysis``          - time-extended Grad-CAM, LM-GC statistic, attention PCA
* ``synth``             - procedural labeled soundscape generator
* ``config`` / ``cli``  - INI run configuration and the ``sedlab`` command
"""

from .tensor import Tensor, no_grad
from .errors import ConfigError, ContractError, CheckpointError, TrainingDiverged

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "ConfigError",
    "ContractError",
    "CheckpointError",
    "TrainingDiverged",
    "__version__",
]
