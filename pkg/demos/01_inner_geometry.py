"""How much forget gain does retain-neutrality cost?

Builds coupled quadratic pairs at several gradient couplings and compares the
unconstrained perturbation with the retain-orthogonal one: first-order forget
gain, first-order retain change, and the retain loss actually paid at the
surrogate point.

    python3 demos/01_inner_geometry.py
"""

import math

import numpy as np

from rosu import (CoupledPairSpec, PerturbationConfig, brute_force_inner_oracle, make_coupled_pair,
                  rosu_perturbation, standard_perturbation)

RHO = 0.2

print(f"{'cos':>6} {'gain std':>9} {'gain rosu':>9} {'ratio':>7} {'sin':>7} "
      f"{'dL_r std':>9} {'dL_r rosu':>9}")
for cos in (-0.9, -0.5, 0.0, 0.5, 0.9, 0.99):
    spec = CoupledPairSpec(16, cos, seed=1)
    forget, retain = make_coupled_pair(spec)
    w = spec.anchor_point()
    g_f, g_r = forget.grad(w), retain.grad(w)
    cfg = PerturbationConfig(RHO, tau=0.0)
    d_std = standard_perturbation(g_f, cfg).delta
    d_rosu = rosu_perturbation(g_f, g_r, cfg).delta
    base = retain.loss(w)
    print(f"{cos:6.2f} {g_f @ d_std:9.4f} {g_f @ d_rosu:9.4f} {(g_f @ d_rosu) / (g_f @ d_std):7.4f} "
          f"{math.sqrt(1 - cos * cos):7.4f} {retain.loss(w + d_std) - base:9.4f} "
          f"{retain.loss(w + d_rosu) - base:9.4f}")

print("\nThe gain ratio tracks sin(theta): orthogonality costs little when the gradients")
print("are nearly orthogonal and a lot when they are aligned.  For positive coupling the")
print("unconstrained step also raises the retain loss at first order, which the")
print("retain-orthogonal step avoids (it pays only the curvature term).")

rng = np.random.default_rng(0)
g_f, g_r = rng.standard_normal(6), rng.standard_normal(6)
best, _, sampled = brute_force_inner_oracle(g_f, g_r, 1.0, 100_000, 0, return_sampled=True)
closed = rosu_perturbation(g_f, g_r, PerturbationConfig(1.0, tau=0.0)).q_norm
print(f"\nsampling oracle in 6-d: best sampled {sampled:.6f} vs closed form {closed:.6f}")
