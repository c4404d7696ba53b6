"""Additive vector quantization with dictionary annealing for ANN search."""

from .codebook import (
    Codebook,
    CrossTermTable,
    EncodedDatabase,
    build_cross_terms,
    cross_term_of,
    entropy,
    load_codebook,
    load_encoded,
    mutual_information,
    quantization_error,
    reconstruct,
    residuals,
    save_codebook,
    save_encoded,
    sort_by_norm,
)
from .encoder import beam_encode, encode, encode_dataset, exhaustive_encode, icm_encode, pq_encode
from .errors import ContractError, FormatError
from .kmeans import KMeansConfig, assign, kmeans_fit
from .search import adc_scan, adc_score, build_adc_tables, exact_scan, recall_at_r
from .trainers import (
    DAConfig,
    TrainReport,
    anneal_dictionary,
    build_intermediate,
    online_update,
    subspace_schedule,
    train_da,
    train_darvq,
    train_pq,
    train_rvq,
)
from .vecio import gen_synthetic, read_bvecs, read_fvecs, read_ivecs, split_train_query, write_fvecs

__version__ = "0.1.0"
