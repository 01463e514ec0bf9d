"""Accuracy on the nine (p, K) cells with dense noise, with K known or
chosen by silhouette."""
from _common import parser, save

from bdbc.simgen import GRID_CELLS, ScenarioSpec, run_replicates


def main():
    p = parser(__doc__, reps=100)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--method", default="hierarchical")
    p.add_argument("--unknown-k", action="store_true")
    args = p.parse_args()
    rows = []
    for dim, k in GRID_CELLS:
        spec = ScenarioSpec("grid_cell", n_per_component=args.n, seed=args.seed, p=dim, k=k, unknown_k=args.unknown_k)
        a = run_replicates(spec, [args.method], args.reps).aggregate()[args.method]
        rows.append({"p": dim, "k": k, **a})
        extra = f" K-hat={a['selected_mean']:.1f}+-{a['selected_sd']:.1f}" if args.unknown_k else ""
        print(f"p={dim:3d} K={k:2d} acc={a['accuracy']:.2f} time={1e3 * a['time_mean']:.1f}ms{extra}")
    save(args.out_dir, "complexity_grid" + ("_unknown_k" if args.unknown_k else ""), rows)


if __name__ == "__main__":
    main()
