"""
A single J2 material point
==========================

The network's hidden layer is made of copies of the matrix material, so it
is worth looking at one point on its own first: load it in uniaxial strain,
unload it, and compare the returned tangent with finite differences.
"""

# %%
# Load, unload, reload along eps_xx. Plastic flow starts once the von Mises
# stress reaches the initial yield stress and saturates towards 64.8 MPa.
import numpy as np

from prnn.constitutive import J2Material, tangent_fd_check, von_mises

mat = J2Material()
lam = np.concatenate([np.linspace(0, 0.04, 41), np.linspace(0.04, 0.02, 11)[1:],
                      np.linspace(0.02, 0.06, 21)[1:]])
state = None
print(" step   eps_xx    sig_xx   sig_vm   eps_p_eq  plastic")
for t, e in enumerate(lam):
    r = mat.update([e, 0.0, 0.0], state)
    state = r.new_state
    if t % 5 == 0:
        print(f"{t:5d} {e:8.4f} {r.stress[0]:9.3f} {von_mises(r.stress):8.3f} "
              f"{state.eps_p_eq:9.5f}  {r.plastic}")

# %%
# Unloading is elastic: the stress drops with the elastic stiffness and the
# plastic strain stays frozen until the yield surface is reached again.
# The consistent tangent agrees with central differences of the update.
prev = mat.update([0.03, 0.01, 0.0]).new_state
for strain in ([0.035, 0.01, 0.002], [0.029, 0.01, 0.0]):
    err = tangent_fd_check(mat, np.array(strain), prev)
    print(f"tangent vs FD at {strain}: max relative entry error {err:.2e}")
