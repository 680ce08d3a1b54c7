"""2-D hierarchy supervision: proposals, affinities and Dasgupta-guided trees."""

from .dasgupta import (
    InstanceTooLarge,
    dasgupta_cost,
    enumerate_binary_trees,
    exact_sparsest_cut_tree,
    flatten_internal,
    normalized_dasgupta_cost,
    optimal_dasgupta_cost,
    sparsest_cut,
)
from .proposals import (
    DegenerateDescriptor,
    Leaf,
    LeafPartition,
    MaskProposal,
    ProposalForest,
    assign_parents,
    build_affinity,
    containment_ratio,
    mask_to_patches,
    pool_descriptor,
    resolve_leaf_partition,
)
from .spectral import fiedler_bisection, jacobi_eigh, normalized_laplacian, recursive_spectral_tree
from .trees import HierForest, HierTree, TreeError
