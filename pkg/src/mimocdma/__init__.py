"""Large-system analysis of MIMO DS-CDMA with posterior-mean detection.

Modules
-------
hermlin          Hermitian matrix helpers and Gaussian divergences.
priors           Symbol laws.
single_user      Decoupled single-user channels: estimates, moments, informations.
state_evolution  Fixed points, free energy, spectral efficiencies and branch sweeps.
rmt_gaussian     Scalar fixed points for Gaussian symbols.
mc_sim           Finite-size simulation for validating the decoupled picture.
cli              Command-line front end.
"""

__version__ = "0.1.0"
