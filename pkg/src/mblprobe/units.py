"""Device-unit conversions and published device parameters.

Internal units: hbar = 1, energies in units of the mean nearest-neighbour
hopping J1, times in 1/J1.  The device has J1 = 2*pi x 11.5 MHz.
"""

from __future__ import annotations

import math

import numpy as np

J1_MHZ = 11.5
J2_MHZ = 1.2
J1_ANGULAR_PER_US = 2 * math.pi * J1_MHZ  # rad / us

# Per-qubit device table, Q1..Q12.
T1_US = np.array([47.6, 44.8, 68.8, 51.8, 40.7, 33.3, 62.5, 63.3, 70.5, 56.5, 43.4, 39.8])
T2STAR_US = np.array([2.6, 9.9, 2.3, 5.4, 3.4, 16.2, 4.3, 26.9, 2.3, 5.3, 2.5, 15.6])
F00 = np.array([94.4, 96.6, 96.1, 94.7, 97.6, 93.7, 97.2, 95.3, 92.0, 98.0, 95.6, 98.0]) / 100
F11 = np.array([88.6, 89.2, 89.1, 89.8, 90.8, 88.5, 89.6, 90.4, 82.7, 93.4, 87.5, 92.2]) / 100


def _scaled(x, factor):
    out = np.asarray(x, dtype=float) * factor
    return float(out) if out.ndim == 0 else out


def mhz_to_j1(f_mhz):
    """Frequency (MHz, i.e. omega / 2pi) to energy in units of J1."""
    return _scaled(f_mhz, 1.0 / J1_MHZ)


def j1_to_mhz(e_j1):
    return _scaled(e_j1, J1_MHZ)


def ns_to_j1t(t_ns):
    """Lab time in ns to dimensionless J1*t."""
    return _scaled(t_ns, J1_ANGULAR_PER_US * 1e-3)


def j1t_to_ns(j1t):
    return _scaled(j1t, 1.0 / (J1_ANGULAR_PER_US * 1e-3))


def rate_from_time_us(t_us):
    """A lifetime in us to a rate 1/T in units of J1."""
    return 1.0 / (np.asarray(t_us, dtype=float) * J1_ANGULAR_PER_US)


def device_noise_rates(n_sites: int, scale: float = 1.0):
    """(decay, dephasing) rates for the first ``n_sites`` device qubits.

    Gamma = 1/T1 and gamma = 1/T2*, optionally multiplied by ``scale``.
    """
    if not 1 <= n_sites <= len(T1_US):
        raise ValueError(f"device table covers 1..{len(T1_US)} sites")
    decay = scale * rate_from_time_us(T1_US[:n_sites])
    dephasing = scale * rate_from_time_us(T2STAR_US[:n_sites])
    return decay, dephasing


def device_readout(n_sites: int):
    """Per-site (f00, f11) readout fidelities of the first ``n_sites`` qubits."""
    if not 1 <= n_sites <= len(F00):
        raise ValueError(f"device table covers 1..{len(F00)} sites")
    return F00[:n_sites].copy(), F11[:n_sites].copy()
