"""Synthetic benchmarks, ground-truth densities and front-quality metrics."""

from .dgp import DGP_NAMES, DgpSpec, dgp_filter_bn, dgp_sample, make_dgp, true_density
from .metrics import eaf_median, hypervolume, spearman_rho, wilcoxon_signed_rank
