# Computational services: spectra, functionals, adiabatic connection, run execution
