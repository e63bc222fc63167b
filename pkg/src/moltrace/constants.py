"""Physical constants used throughout the package (single source of truth)."""

BOLTZMANN_J_PER_K = 1.380649e-23     # SI definition (exact)
AMU_KG = 1.66053906892e-27           # CODATA 2022 atomic mass unit

# Default gas pair: a 128 amu seed molecule diffusing through helium.
DEFAULT_CROSS_SECTION_M2 = 1.2e-17   # hard-sphere cross section (1.2e-13 cm^2)
DEFAULT_MOLECULE_MASS_KG = 128.0 * AMU_KG
DEFAULT_BUFFER_MASS_KG = 4.0 * AMU_KG
