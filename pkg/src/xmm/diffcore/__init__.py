from .optim import AdamState, adam_step
from .store import (
    Entry,
    GroupKind,
    GroupTag,
    ParameterStore,
    freeze_all,
    load_store,
    read_tensor_file,
    save_store,
    set_trainable,
    write_tensor_file,
)
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    softmax_rows,
    sub,
    take_slice,
    total,
    transpose,
)
