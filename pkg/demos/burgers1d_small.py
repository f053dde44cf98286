"""MS-PINN against a plain PINN on viscous Burgers 1D, at a budget that runs in a few minutes.

Run: python3 demos/burgers1d_small.py [seed]
The acceptance budget is 3000/3000/7000 epochs; this demo uses a third of it.
"""

import sys

from moveset import mspinn, problems

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
prob = problems.get_problem("burgers1d")
cfg = mspinn.MsPinnConfig(pretrain_epochs=1000, mmpde_epochs=1000, formal_epochs=2300,
                          interior_counts=(100, 50), seed=seed)

ms = mspinn.run_mspinn(cfg, prob)
base = mspinn.run_pinn_baseline(cfg, prob)
for name, rep in (("MS-PINN", ms), ("PINN", base)):
    print(f"{name:8s} e(u(., 0.9)) = {rep.errors['e_t0.9']:.4e}")
print("mean squared residual of the final MS-PINN network:")
print(f"  on the moved points   {ms.extra['mean_sq_residual_moved']:.3e}")
print(f"  on the uniform points {ms.extra['mean_sq_residual_uniform']:.3e}")
