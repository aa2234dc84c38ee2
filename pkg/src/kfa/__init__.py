"""
kfa: kernel-based fairness audits.

RKHS mean embeddings of (y, g) cells, spectral audits of the group mean
difference, closed-form fairness bounds with empirical checks, synthetic
populations with known ground truth, and the inference layer around them.
"""

__version__ = "0.1.0"

from kfa.embedding import (  # noqa: E402
    ConditionalEmbeddings,
    EmbeddingCoeffs,
    SampleTable,
    conditional_embeddings,
    group_difference,
    is_zero_element,
    mean_embedding,
    mmd2_vstat,
    rkhs_inner,
    rkhs_norm,
    witness_eval,
)
from kfa.errors import DegenerateDataError, InputError, KfaError  # noqa: E402
from kfa.kernels import Gram, KernelSpec, cross_gram, eval_kernel, gram, median_heuristic  # noqa: E402

__all__ = [
    "ConditionalEmbeddings",
    "DegenerateDataError",
    "EmbeddingCoeffs",
    "Gram",
    "InputError",
    "KernelSpec",
    "KfaError",
    "SampleTable",
    "conditional_embeddings",
    "cross_gram",
    "eval_kernel",
    "gram",
    "group_difference",
    "is_zero_element",
    "mean_embedding",
    "median_heuristic",
    "mmd2_vstat",
    "rkhs_inner",
    "rkhs_norm",
    "witness_eval",
]
