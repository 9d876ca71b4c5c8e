"""Platform fingerprinting for ML inference endpoints.

Thin re-export of the compiled core: numerical-format emulation, the
border-input and logit-distribution attacks, and the experiment runner.
"""

from ._core import (
    Campaign,
    LogitDump,
    Model,
    Svm,
    __version__,
    bi_generate,
    bi_identify,
    collect,
    eqc_diff,
    quantize,
    quantize_all,
    reduce_sum,
    registry_ids,
    run_experiment,
    split_bits,
    svm_predict_dump,
    svm_train,
    train_textures,
)

__all__ = [
    "Campaign",
    "LogitDump",
    "Model",
    "Svm",
    "__version__",
    "bi_generate",
    "bi_identify",
    "collect",
    "eqc_diff",
    "quantize",
    "quantize_all",
    "reduce_sum",
    "registry_ids",
    "run_experiment",
    "split_bits",
    "svm_predict_dump",
    "svm_train",
    "train_textures",
]
