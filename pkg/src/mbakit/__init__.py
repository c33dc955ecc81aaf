"""mbakit: a Mixed Boolean-Arithmetic deobfuscation toolkit.

Pipeline pieces, importable directly from the package root:

* expression trees: :func:`parse`, :func:`render`, :func:`evaluate`,
  :func:`variables`;
* truth-table semantics: :func:`extract`, :func:`equivalent`,
  :func:`randomized_check`, :func:`to_feature_vector`;
* data generation: :func:`rule_table`, :func:`obfuscate`, :func:`generate`,
  :func:`load_pairs`, :func:`save_pairs`, :func:`stats`;
* model and training: :class:`Seq2SeqModel`, :class:`FusionSpec`,
  :class:`ModelConfig`, :class:`TrainConfig`, :func:`train`,
  :func:`evaluate_model`, :func:`run_grid`, :func:`bleu`,
  :func:`exact_match`.
"""

from .datagen import (
    DatasetPair,
    GenConfig,
    RewriteRule,
    generate,
    load_pairs,
    obfuscate,
    rule_table,
    save_pairs,
    stats,
)
from .errors import MbaError, MbaSyntaxError
from .exprs import DEFAULT_WIDTH, evaluate, parse, render, variables
from .model import FusionSpec, ModelConfig, Seq2SeqModel, Vocab
from .progeval import BACKEND
from .semantics import (
    DEFAULT_MAX_VARS,
    TruthTable,
    counterexample,
    equivalent,
    expression_features,
    extract,
    randomized_check,
    to_feature_vector,
)
from .training import (
    EvalReport,
    TrainConfig,
    bleu,
    evaluate_model,
    exact_match,
    run_grid,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DEFAULT_MAX_VARS",
    "DEFAULT_WIDTH",
    "DatasetPair",
    "EvalReport",
    "FusionSpec",
    "GenConfig",
    "MbaError",
    "MbaSyntaxError",
    "ModelConfig",
    "RewriteRule",
    "Seq2SeqModel",
    "TrainConfig",
    "TruthTable",
    "Vocab",
    "bleu",
    "counterexample",
    "equivalent",
    "evaluate",
    "evaluate_model",
    "exact_match",
    "expression_features",
    "extract",
    "generate",
    "load_pairs",
    "obfuscate",
    "parse",
    "randomized_check",
    "render",
    "rule_table",
    "run_grid",
    "save_pairs",
    "stats",
    "to_feature_vector",
    "train",
    "variables",
    "__version__",
]
