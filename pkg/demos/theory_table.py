"""How the bound constants scale with the number of observations."""
from slmc.theory import TheoryInputs, theory_report

print(f"{'n':>6} {'alpha_n':>10} {'C_P floor':>10} {'c_nd':>12} {'t_eps':>12}")
for n in (10, 100, 1000):
    rep = theory_report(TheoryInputs(n, 1), eps=0.1)
    print(f"{n:6d} {rep.alpha_n:10.3e} {rep.C_P_floor:10.4f} {rep.c_nd:12.4g} {rep.t_eps:12.4g}")
