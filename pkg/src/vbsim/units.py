"""Unit conversion table shared across the package.

Internal units: MHz for energies and frequencies, dimensionless strain,
GPa for stress, V/cm for electric fields, nm for lengths.
"""

GHZ_TO_MHZ = 1.0e3
HZ_TO_MHZ = 1.0e-6
V_PER_NM_TO_V_PER_CM = 1.0e7

# e / (4 pi eps0): potential in volts of one elementary charge at 1 nm.
COULOMB_V_NM = 1.4399645
