"""Hand-written neural engine: layers, stage models, optimizers, training, persistence."""

from catcast.neural.model import (  # noqa: F401
    LayerSpec,
    ModelGraph,
    build_model,
    build_stage_model,
    forward,
    init_params,
    loss_and_grad,
)
from catcast.neural.optim import make_optimizer  # noqa: F401
from catcast.neural.persist import load_model, save_model  # noqa: F401
from catcast.neural.train import (  # noqa: F401
    TrainConfig,
    grad_check,
    optimizer_step,
    train,
)
