"""How the exchange cap turns into a price signal.

Solves the coordinated problem for a growing peak weight rho and shows the
cap, the shadow-price mass and whether the plain tariff would overshoot it.

    python demos/price_signal.py
"""

from mgexchange.config import load_config
from mgexchange.pipeline import generate_scenarios, reduce_scenarios, run_schedules
from mgexchange.stage1 import exchange_stats


def main():
    base = load_config(None, profile="desk", seed=0)
    sset = reduce_scenarios(base, generate_scenarios(base))
    print(f"{'rho':>6} {'P_cap':>9} {'sum duals':>10} {'eps':>7} {'TOU peak':>9} {'final peak':>11}")
    for rho in (0.1, 1.0, 10.0, 50.0):
        cfg = load_config(None, profile="desk", seed=0, system={"rho": rho})
        res = run_schedules(cfg, sset, "compare")
        alg = res.algorithm1
        tou_peak = exchange_stats(res.schedules["decentralized_tou"])["peak"]
        fin_peak = exchange_stats(res.schedules["decentralized"])["peak"]
        print(f"{rho:6.1f} {alg.centralized.p_cap:9.1f} {alg.duals.total:10.4f} {alg.eps:7.4f} "
              f"{tou_peak:9.1f} {fin_peak:11.1f}")


if __name__ == "__main__":
    main()
