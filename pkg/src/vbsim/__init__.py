"""Ground-state spin toolkit for a planar S=1 vacancy defect.

Evaluates zero-field splitting under strain, stress and electric-field
perturbations, simulates level statistics of random perturbation
environments, synthesizes zero-field ODMR spectra from a microscopic
point-charge model, and fits charge density and contrast to measured
spectra.
"""

from .charges import (
    ChargeConfiguration,
    ChargeEnvironment,
    HexLattice,
    field_at_origin,
    sample_charge_field,
    sample_positions,
    snap_to_lattice,
)
from .couplings import (
    CouplingConstants,
    D0_PRESETS,
    ElectricFieldVec,
    StrainTensor2D,
    StressTensor2D,
    electric_perturbation,
    extract_coupling_slope,
    load_constants,
    local_strain_from_triangle,
    strain_perturbation,
    stress_couplings,
    stress_perturbation,
    total_zfs,
)
from .odmr import (
    FitConfig,
    FitResult,
    OdmrSpectrum,
    ScatterDataset,
    fit_spectrum,
    hyperfine_detunings,
    relative_density_from_pl,
    scatter_levels,
    splitting_statistics,
    spectrum_for_fields,
    synthesize_spectrum,
)
from .spin import (
    ZfsParameters,
    build_hamiltonian,
    d_tensor_to_zfs,
    eigensolve,
    resonance_frequencies,
    spin_operators,
)

__version__ = "0.1.0"
