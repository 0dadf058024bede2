"""
CSV Column Layouts

Column names follow the one-based labels of the output files
(sigma_1 ... sigma_N, xi_1 ... xi_M). Builders take the model size.
"""


def _indexed(prefix, count):
    return [f"{prefix}_{i + 1}" for i in range(count)]


def spectrum_header():
    return ["index", "energy", "gap_to_ground", "cutoff", "degenerate"]


def curve_header(n_spins, n_modes):
    return (["lambda"] + _indexed("sigma", n_spins) + _indexed("xi", n_modes) + ["F"]
            + _indexed("v", n_spins) + _indexed("j", n_modes) + ["gap", "cutoff", "converged"])


def functional_header(n_spins, n_modes):
    return (["method"] + _indexed("sigma", n_spins) + _indexed("xi", n_modes) + ["F"]
            + _indexed("v", n_spins) + _indexed("j", n_modes)
            + ["cutoff", "converged", "representable", "aufbau_index"])


def adiabatic_header():
    return ["target", "s", "integrand", "identity_integrand", "virial_residual"]


def hyperplane_header(n_spins):
    return _indexed("normal", n_spins) + ["offset", "equation"]


def regular_grid_header():
    return ["sigma_1", "sigma_2", "regular", "component"]


DIAGNOSE_HEADER = ["name", "lhs", "rhs", "residual", "tolerance", "passed"]


def hk_scan_header(n_spins, n_modes):
    return (["index"] + _indexed("v", n_spins) + _indexed("j", n_modes)
            + _indexed("sigma", n_spins) + _indexed("xi", n_modes) + ["skipped"])
