"""Exact probabilistic representation of lattice quantum dynamics on finite
Fock spaces, cavity/reservoir dilution analysis and Random Potential Model
analytics."""

from .errors import *  # noqa: F401,F403
from .fock import (
    Hamiltonian,
    LevelDensity,
    Partition,
    build_hamiltonian,
    cavity_from_level,
    invariant_measure,
    level_density,
    make_partition,
    restrict,
    star_hamiltonian,
    transition_kernel,
)
from .spectral import (
    Phase,
    SpectralResult,
    coupling_report,
    exit_rate_hamiltonian,
    finite_size_prediction,
    ground_state,
    partition_energies,
    propagator_apply,
    theorem_prediction,
)
from .epr import (
    LINK_RATE,
    SamplingMode,
    check_exit_lemma,
    estimate_ground_energy,
    estimate_propagator_sum,
    fit_exit_rate,
    sample_exit_times,
    sample_first_exit,
    sample_trajectory,
)
from .series import series_energy, series_reconstruction
from .rpm import (
    RpmSpec,
    critical_condition,
    predict_phase_dilute,
    solve_e1f,
    two_level_closed_form,
)
from .models import ModelSpec, hypercube_free, qrem, random_potential_model, two_level_rpm

__version__ = "0.1.0"
