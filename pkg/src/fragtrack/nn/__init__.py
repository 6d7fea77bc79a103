from .gradcheck import gradient_check  # noqa: F401
from .models import (  # noqa: F401
    ARCHITECTURES,
    ModelConfig,
    RelationModel,
    Scaler,
    index_to_label,
    label_to_index,
    softmax,
)
from .search import SearchSpace, compare_models, cross_validate, search_hyperparams  # noqa: F401
from .train import (  # noqa: F401
    Adam,
    TrainConfig,
    class_weights_from_counts,
    derive_seed,
    stratified_kfold,
    stratified_split,
    train,
    weighted_cross_entropy,
)
