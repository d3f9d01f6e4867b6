"""Metastability toolkit for finite reversible continuous-time Markov chains."""
from .chain import Chain, apply_generator, build_chain, dirichlet_form
from .errors import MetastabError, NumericalError
from .metastability import (
    ChainFamily,
    LimitChain,
    Thresholds,
    cesaro_occupation,
    check_conditions,
    limit_semigroup,
    predict_limit_chain,
    two_valley_ratio,
)
from .models import (
    DogGraphSpec,
    PolymerSpec,
    birth_death,
    dog_graph,
    fL_trial,
    polymer,
    random_reversible,
    two_state,
)
from .potential import (
    capacity,
    equilibrium_potential,
    hitting_prob_capacity_formula,
    l4_bounds,
    mean_jump_rates,
    quasi_stationary,
)
from .simulate import (
    delta_occupation,
    hitting_time_samples,
    order_fdd_estimate,
    sample_path,
    sample_trace_path,
    tightness_diagnostic,
)
from .spectral import gap_sandwich, hminus1_norm, mixing_profile, spectral_gap
from .transforms import Partition, enlarge_chain, project_order, reflect_chain, trace_chain

__version__ = "0.1.0"
