"""softdag: symbolic regression over a layered softmax selection network.

The package represents a probability distribution over compositions of
basis functions, trains it with a truncation-selection evolutionary
strategy, and extracts the most likely composition as a readable
expression.
"""

from .bases import (
    ArityError,
    BasisFunction,
    DIV_GUARD,
    builtin_registry,
    eval_basis,
    resolve_bases,
)
from .network import (
    ConfigError,
    Network,
    NetworkConfig,
    WeightsFormatError,
    build_network,
    load_network,
    parameter_count,
    save_network,
    softmax_row,
)
from .sampler import (
    SampledDAG,
    dag_from_text,
    dag_to_text,
    evaluate,
    evaluate_recurrent,
    log_probability,
    most_likely_dag,
    sample,
    sample_many,
)
from .expression import (
    Apply,
    Choices,
    Const,
    Expr,
    Input,
    Interval,
    ParseError,
    dag_to_expression,
    evaluate_tree,
    evaluate_tree_batch,
    input_indices,
    numeric_equivalent,
    parse,
    sample_domain,
    simplify,
    to_string,
)
from .trainer import (
    AdamState,
    CsvTrainLogger,
    EpochStats,
    TrainConfig,
    TrainRun,
    adam_step,
    fitness,
    loss_gradient,
    rank_reweight,
    select_top,
    train,
    train_epoch,
)
from .data import (
    Dataset,
    DatasetSource,
    IdxFormatError,
    ResamplingSource,
    TargetSpec,
    classification_accuracy,
    generate,
    load_idx,
    split,
)

__version__ = "0.1.0"
