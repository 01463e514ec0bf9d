"""How often BIC picks the true number of row clusters on the two mixture
scenarios, by sample size."""
import numpy as np
from _common import parser, save

from bdbc.simgen import ScenarioSpec, run_replicates


def main():
    p = parser(__doc__, reps=100)
    p.add_argument("--sizes", default="100,200,300")
    p.add_argument("--scenarios", default="scenario1,scenario2")
    args = p.parse_args()
    rows = []
    for name in args.scenarios.split(","):
        for n in map(int, args.sizes.split(",")):
            res = run_replicates(ScenarioSpec(name, n_per_component=n, seed=args.seed), ["hierarchical"], args.reps)
            a = res.aggregate()["hierarchical"]
            picks = np.bincount([r.selected for r in res.records if r.selected], minlength=6)[1:].tolist()
            rows.append({"scenario": name, "n": n, "picks": picks, **a})
            print(f"{name} n={n}: correct {a['accuracy']:.2f}, picks G=1..5 {picks}")
    save(args.out_dir, "g_selection", rows)


if __name__ == "__main__":
    main()
