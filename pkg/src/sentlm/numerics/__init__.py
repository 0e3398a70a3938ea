from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    check_finite,
    concat,
    div,
    default_dtype,
    embedding,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    power,
    precision,
    reshape,
    softmax,
    stack,
    sub,
    tmean,
    transpose,
    tsum,
    where,
)
from .optim import (
    AdamW,
    OptimizerState,
    ScheduleConfig,
    adamw_step,
    clip_grad_l2,
    clip_param_grads,
    ema_update,
    global_grad_norm,
    lr_at,
)
from .gradcheck import check_gradients, max_rel_error, numeric_grad

__all__ = [name for name in dir() if not name.startswith("_")]
