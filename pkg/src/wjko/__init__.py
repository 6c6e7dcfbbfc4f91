"""Entropic Wasserstein gradient flows by diagonal-scaling Dykstra iterations."""
from .domain import DomainSpec, make_grid_domain, load_mesh_off, normalize_density
from .kernels import (DenseKernel, HeatKernelConfig, gaussian_grid_kernel, grid_laplacian,
                      cotangent_laplacian, anisotropic_laplacian, heat_kernel, AnisotropyField)
from .prox import (ProxFn, JointProx, CongestionSpec, EntropySpec, prox_congestion,
                   prox_entropy_linear, prox_gen_entropy, prox_binary, prox_shift, prox_equality,
                   prox_sum, prox_singleton, prox_identity)
from .jko import FlowParams, jko_step, run_flow, constraint_violation
from .multicoupling import (MultiCouplingProblem, generalized_scaling_solve, attraction_psi,
                            pairwise_psi, sum_coupling_psi, run_multi_flow)

__version__ = "0.1.0"
