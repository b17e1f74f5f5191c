"""Recover eta.gamma_hat z from boundary pairings of the nonlinear solver
alone (about a minute), and compare with the oracle value."""
import time

import numpy as np

from aclab.fields import gamma_preset
from aclab.mesh import BoxDomain, build_mesh
from aclab.pde import DtNMap, SolverOptions
from aclab.reconstruct import END_TO_END_T, EndToEndIdentity, OracleIdentity, matrix_elements_family1

mesh = build_mesh(BoxDomain.centered_unit(3), 13)
opts = SolverOptions(tol=1e-13)
gamma = gamma_preset("bump-aniso", {"amplitude": 0.05}, mesh=mesh)
xi, eta, z = np.array([np.pi, 0, 0]), (0, -1, 0), (0, 0, 1)

ref = matrix_elements_family1(OracleIdentity(gamma, mesh, 3.0, opts=opts), xi, eta, z, 3.0, END_TO_END_T)
t0 = time.perf_counter()
dtn = DtNMap(gamma, 3.0, mesh, opts)
got = matrix_elements_family1(EndToEndIdentity(dtn, 3.0), xi, eta, z, 3.0, END_TO_END_T)
print(f"oracle      eta.G z = {ref['eta.z']:.6f}")
print(f"end-to-end  eta.G z = {got['eta.z']:.6f}  ({dtn.solves} nonlinear solves, {time.perf_counter() - t0:.1f} s)")
print(f"relative error {abs(got['eta.z'] - ref['eta.z']) / abs(ref['eta.z']):.3%}")
