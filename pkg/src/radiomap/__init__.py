"""Radio-map disaggregation with coupled block-term (LL1) tensor models.

A radio map over an ``I x J`` grid and ``K`` frequency bands is modelled as
``X = sum_r S_r o c_r`` where ``S_r = A_r B_r^T`` is the low-rank spatial loss
field of emitter ``r`` and ``c_r`` its power spectrum.  The package simulates
such maps, samples them (slabs, fiber groups, random fibers), fits the factors
by block coordinate descent, and evaluates the recovered spectra and fields.
"""
from .tensor_core import (
    DimensionError,
    Ll1Factors,
    fold,
    khatri_rao,
    ll1_synthesize,
    mode_product,
    partition_khatri_rao,
    slf_matrix,
    unfold,
)
from .scenario import (
    EmitterSpec,
    GroundTruth,
    PsdSpec,
    ScenarioConfig,
    ShadowSpec,
    add_noise,
    assemble_ground_truth,
    gen_psd,
    gen_shadow_field,
    gen_slf,
    lowrank_energy_ratio,
)
from .sampling import (
    CheckReport,
    FiberGroup,
    FiberGroupPlan,
    FiberMask,
    PlanError,
    SlabPlan,
    check_anchor_identifiability,
    check_group_identifiability,
    check_ll1_uniqueness,
    check_random_fiber,
    check_slab_identifiability,
    plan_to_mask,
    random_fiber_mask,
    random_location_mask,
    slab_plan_to_mask,
    slab_subtensors,
)
from .solver_slab import SolveResult, SolverConfig, bcd_solve, slab_loss
from .solver_masked import bcd_solve_masked, masked_loss
from .posteval import (
    canonical_scaling,
    disaggregate_full,
    match_permutation,
    nae_map,
    nae_psd,
    nae_slf,
    reconstruct_map,
    refine_slf,
    tps_eval,
    tps_fit,
)

__version__ = "0.1.0"
