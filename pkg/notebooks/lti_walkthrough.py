"""Shaping the LQR law of a third-order linear plant.

Run with ``python notebooks/lti_walkthrough.py``.  Prints each stage; nothing
is written to disk.

The plant is xdot = A x + B u with Q = I, R = 1.  Under LQR the second state
overshoots to about 6.8 from x0 = [-5, 0, 0].  We add a tunable cost
m_bar(x, theta) over the 21 even monomials of degree 2 and 4 and push the
peak of x2 under 2.
"""
import warnings

import numpy as np

from pishape import (Box, ControlWeight, NonNegativityWarning, OvershootPenalty,
                     ShapingProblem, StateCost, TuningConfig, enumerate_even_monomials,
                     gradient_descent, iss_check, lyapunov_decrease_check, rollout,
                     shaped_controller, solve_care, solve_shaping, third_order_lti)
from pishape.verify import sinusoid_pulse

warnings.simplefilter("ignore", NonNegativityWarning)

plant = third_order_lti()
weight = ControlWeight(np.eye(1))
cost = StateCost(np.eye(3))
x0 = np.array([-5.0, 0.0, 0.0])

# 1. nominal value phi0 = x'Px
phi0 = solve_care(plant.A, plant.B, cost, weight)
print("CARE residual", phi0.info["care_residual"])
print("closed-loop eigenvalues", np.round(phi0.info["closed_loop_eigs"], 4))

# 2. one collocation solve gives c = M theta for every theta
basis = enumerate_even_monomials(3, 4)
domain = Box.symmetric([5.0, 7.0, 5.0])
sol = solve_shaping(ShapingProblem(plant, weight, phi0, basis, basis, domain, K=2000, cost=cost))
print("M shape", sol.M.shape, "relative residual rms", sol.residual_rms)

# 3. tune theta against a softplus overshoot penalty on x2
penalty = OvershootPenalty(component=1, threshold=2.0, beta=10.0, dt=0.01)
cfg = TuningConfig([x0], horizon=15.0, dt=0.01, gamma=0.25, max_iter=50, grad_tol=1e-3)
result = gradient_descent(sol, penalty, cfg)
for rec in result.history:
    print("iter {iter:2d}  L {L:9.4f}  |grad| {grad_norm:.2e}  step {step:.3f}".format(**rec))
theta = result.theta

for label, th in (("LQR", np.zeros_like(theta)), ("shaped", theta)):
    tr = rollout(plant, shaped_controller(sol, th), x0, 15.0, 0.01)
    print(f"{label:6s} peak x2 {tr.states[:, 1].max():.3f}  "
          f"|x(15)| {np.linalg.norm(tr.states[-1]):.1e}")

# 4. the tuned loop on the simulated envelope
rep = lyapunov_decrease_check(sol, theta, x0, 15.0, 0.01)
print("largest phi_p increase", rep.max_lyapunov_increase)
rep = iss_check(sol, theta, sinusoid_pulse(0.5), x0, 50.0, 0.01, t_off=25.0)
print("ISS: sup |x|", round(rep.sup_state_norm, 3), "terminal", rep.terminal_norm)
