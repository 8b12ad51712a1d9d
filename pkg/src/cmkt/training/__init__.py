from .config import ConfigError, TrainConfig, TrialRecord
from .pipelines import (
    METHODS, EncoderClassifier, FullySupervisedMapping, FusionModel, MappingModel, PhaseOrderError,
    SemiSupervisedMapping, TrainResult, TrainingDivergedError, evaluate_model, load_predictor, save_predictor,
    train_fully_supervised_mapping, train_fusion, train_method, train_semantic_alignment,
    train_semi_supervised_mapping, train_single_modal,
)
from .search import (
    RandomStrategy, SearchSpace, TPEStrategy, hyperparameter_search, make_strategy, method_pipeline,
    networks_from_params, rank_trials, select_top_k_and_retrain,
)
