"""Spectral gaps, comparison certificates and KMC for lattice gases in a site field."""

__version__ = "0.1.0"

from .configspace import ConfigSpace, Configuration, apply_flip, apply_swap
from .disorder import (DisorderField, force_endpoints, generate_iid, peak_set, quantize_to_grid, read_field,
                       write_field, zero_field)
from .ensemble import (CanonicalMeasure, GrandMeasure, covariance, exact_sample, expectation, partition_dp,
                       variance)
from .forms import (QuadraticForm, SparseGenerator, build_bl, build_glauber, build_kawasaki,
                    build_single_exchange, exchange_form, variance_form, weighted_sum)
from .kmc import (KawasakiKMC, equilibrium_check, kmc_step, relaxation_time, two_block_functional,
                  two_block_statistic)
from .lattice import Boundary, LatticeGeometry, SwapPath, build_box, canonical_path, congestion
from .spectra import (GapResult, PencilResult, certify_lemma1, certify_lemma2, certify_thm1, certify_thm3,
                      compose_thm3_bound, pencil_ratio, spectral_gap)

__all__ = [
    "Boundary", "CanonicalMeasure", "ConfigSpace", "Configuration", "DisorderField", "GapResult",
    "GrandMeasure", "KawasakiKMC", "LatticeGeometry", "PencilResult", "QuadraticForm", "SparseGenerator",
    "SwapPath", "apply_flip", "apply_swap", "build_bl", "build_box", "build_glauber", "build_kawasaki",
    "build_single_exchange", "canonical_path", "certify_lemma1", "certify_lemma2", "certify_thm1",
    "certify_thm3", "compose_thm3_bound", "congestion", "covariance", "equilibrium_check", "exact_sample",
    "exchange_form", "expectation", "force_endpoints", "generate_iid", "kmc_step", "partition_dp",
    "peak_set", "pencil_ratio", "quantize_to_grid", "read_field", "relaxation_time", "spectral_gap",
    "two_block_functional", "two_block_statistic", "variance", "variance_form", "weighted_sum",
    "write_field", "zero_field",
]
