"""Command-line surface: synth, train, eval, bench, gradcheck.

Exit codes: 0 success (gradcheck: all checks passed), 1 malformed input,
2 numerical abort or failed numerical check.
"""

import argparse
import os
import sys

import numpy as np

from .data import (
    SynthSpec,
    generate_synthetic,
    holdout_split,
    load_manifest,
    parse_keyvalue_file,
    save_dataset,
)
from .distributed import (
    TrainPlan,
    benchmark_sweeps,
    run_training,
    write_convergence_csv,
)
from .errors import DataFormatError, DivergenceError
from .factors import FactorSet, init_factors, load_factors, save_factors
from .graphs import knn_graph
from .metrics import MetricReport, attribution_accuracy, average_precision, rmse
from .objective import gradient_check
from .refiner import (
    DiffusionRefiner,
    diffuse,
    refiner_gradient_check,
    save_refiner,
    train_refiner,
)
from .sptensor import SparseTensor, reconstruct_at


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; malformed input is exit 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_plan(path):
    kv = parse_keyvalue_file(path)
    if "rank" not in kv:
        raise DataFormatError(f"{path}: plan must set rank")
    def geti(key, default):
        return int(kv[key]) if key in kv else default
    def getf(key, default):
        return float(kv[key]) if key in kv else default
    plan = TrainPlan(
        rank=int(kv["rank"]),
        lam=getf("lambda", 1.0),
        sweep=kv.get("sweep", "gauss_seidel"),
        inner_steps=geti("inner_steps", 5),
        step_size=getf("step", 0.1),
        backtracking=kv.get("backtracking", "true").lower() != "false",
        max_rounds=geti("max_rounds", 100),
        rel_tol=getf("rel_tol", 1e-6),
        seed=geti("seed", 0),
        reg_weights=tuple(float(w) for w in kv["reg_weights"].split(","))
        if "reg_weights" in kv else None,
        jacobi_damping=getf("jacobi_damping", 0.5),
        workers=kv.get("workers", "process"),
    )
    return plan


def _parse_synth_spec(path):
    kv = parse_keyvalue_file(path)
    for key in ("dims", "rank"):
        if key not in kv:
            raise DataFormatError(f"{path}: synth spec must set {key}")
    spec = SynthSpec(
        dims=tuple(int(d) for d in kv["dims"].split(",")),
        rank=int(kv["rank"]),
        noise_std=float(kv.get("noise_std", 0.0)),
        density=float(kv.get("density", 1.0)),
        graph_k=int(kv.get("graph_k", 10)),
        seed=int(kv.get("seed", 0)),
    )
    return spec, float(kv.get("split_fraction", 0.0))


def _cmd_synth(args):
    spec, split_fraction = _parse_synth_spec(args.spec)
    dataset, truth = generate_synthetic(spec)
    if split_fraction > 0:
        dataset = holdout_split(dataset, split_fraction, seed=spec.seed)
    manifest = save_dataset(dataset, args.out)
    save_factors(truth, os.path.join(args.out, "truth_factors.tsv"))
    print(f"wrote {manifest} ({dataset.tensor.nnz} train entries, "
          f"{len(dataset.test_idx)} test entries)")
    return 0


def _cmd_train(args):
    dataset = load_manifest(args.manifest)
    plan = _parse_plan(args.plan)
    x = dataset.tensor
    fs = init_factors(x.dims, plan.rank, seed=plan.seed)
    fs, logs = run_training(x, fs, dataset.graphs, plan)
    os.makedirs(args.out, exist_ok=True)
    save_factors(fs, os.path.join(args.out, "factors.tsv"))
    write_convergence_csv(logs, x.order, os.path.join(args.out, "convergence.csv"))
    print(f"trained {len(logs)} rounds, final loss {logs[-1].loss.total!r}")
    if args.refine:
        model = DiffusionRefiner.create(
            x.order, plan.rank, degree=args.refine_degree,
            channels=args.refine_channels, hidden=args.refine_hidden,
            unroll=args.refine_unroll, learning_rate=args.refine_lr,
            seed=plan.seed)
        train_refiner(x, fs, dataset.graphs, plan.lam, model, args.refine_epochs,
                      reg_weights=plan.reg_weights)
        save_refiner(model, os.path.join(args.out, "refiner.tsv"))
        refined = [diffuse(fs.factors[m], dataset.graphs[m].laplacian, model, mode=m)[0]
                   for m in range(x.order)]
        save_factors(FactorSet(refined), os.path.join(args.out, "refined_factors.tsv"))
        with open(os.path.join(args.out, "refine_loss.csv"), "w") as fh:
            fh.write("epoch,loss\n")
            for e, loss in enumerate(model.loss_history_):
                fh.write(f"{e},{loss!r}\n")
        print(f"refined {args.refine_epochs} epochs, "
              f"loss {model.loss_history_[0]!r} -> {min(model.loss_history_)!r}")
    return 0


def _load_scores_file(path):
    scores, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected score<TAB>label")
            try:
                scores.append(float(fields[0]))
                labels.append(int(fields[1]))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return np.asarray(scores), np.asarray(labels)


def _cmd_eval(args):
    dataset = load_manifest(args.manifest)
    fs = load_factors(args.factors)
    fingerprint = (f"manifest={os.path.basename(args.manifest)};"
                   f"factors={os.path.basename(args.factors)}")
    if args.metric == "rmse":
        if len(dataset.test_idx) == 0:
            raise DataFormatError("manifest has no test entries for rmse")
        pred = reconstruct_at(fs, dataset.test_idx)
        triples = list(zip(map(tuple, dataset.test_idx), pred, dataset.test_vals))
        report = MetricReport("rmse", rmse(triples), len(triples), fingerprint)
    elif args.metric == "ap":
        if not args.scores:
            raise DataFormatError("--scores FILE is required for the ap metric")
        scores, labels = _load_scores_file(args.scores)
        report = MetricReport("ap", average_precision(scores, labels),
                              len(scores), fingerprint)
    else:  # attribution
        if args.target_mode is None:
            raise DataFormatError("--target-mode is required for attribution")
        if len(dataset.test_idx) == 0:
            raise DataFormatError("manifest has no test entries for attribution")
        value = attribution_accuracy(dataset.test_idx, fs, args.target_mode)
        report = MetricReport("attribution", value, len(dataset.test_idx), fingerprint)
    print(report.csv_row())
    return 0


def _cmd_bench(args):
    dataset = load_manifest(args.manifest)
    plan = _parse_plan(args.plan)
    sweeps = args.sweeps.split(",")
    fs0 = init_factors(dataset.tensor.dims, plan.rank, seed=plan.seed)
    rows = benchmark_sweeps(dataset.tensor, fs0, dataset.graphs, plan,
                            sweeps=sweeps, repeats=args.repeats)
    k = dataset.tensor.order
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        mode_cols = ",".join(f"time_ms_mode_{m}" for m in range(k))
        out.write(f"sweep,repeat,round,total_loss,{mode_cols},time_ms_round\n")
        for sweep, rep, log in rows:
            times = ",".join(f"{t:.3f}" for t in log.mode_times_ms)
            out.write(f"{sweep},{rep},{log.round_index},{log.loss.total!r},"
                      f"{times},{log.round_time_ms:.3f}\n")
    finally:
        if args.out:
            out.close()
    return 0


def _gradcheck_objective(seed):
    """20 random instances spanning orders 2..4, both loss variants."""
    import itertools
    from .factors import init_factors as _init

    failures = []
    cases = list(itertools.product((2, 3, 4), (True, False)))
    rng = np.random.default_rng(seed)
    for i in range(20):
        order, observed = cases[i % len(cases)]
        inst_rng = np.random.default_rng(seed + 17 * i + 1)
        dims = tuple(int(d) for d in inst_rng.integers(3, 7, size=order))
        total = int(np.prod(dims))
        count = max(2, int(0.4 * total))
        flat = inst_rng.choice(total, size=count, replace=False)
        idx = np.stack(np.unravel_index(flat, dims), axis=1)
        x = SparseTensor(dims, idx, inst_rng.normal(size=count), observed_only=observed)
        fs = _init(dims, int(inst_rng.integers(1, 4)), seed=seed + i)
        graphs = [knn_graph(inst_rng.normal(size=(n, 2)), k=min(2, n - 1)) for n in dims]
        lam = float(inst_rng.uniform(0.2, 2.0))
        worst = max(gradient_check(x, fs, graphs, lam, mode) for mode in range(order))
        ok = worst <= 1e-5
        print(f"objective instance {i:2d} (K={order}, "
              f"{'observed' if observed else 'full'}): max rel err {worst:.2e} "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            failures.append(i)
    return failures


def _gradcheck_refiner(seed):
    """10 tiny unrolled instances, parameter gradients vs central differences."""
    failures = []
    for i in range(10):
        rng = np.random.default_rng(seed + 31 * i + 7)
        dims = (int(rng.integers(5, 8)), int(rng.integers(4, 7)))
        total = dims[0] * dims[1]
        flat = rng.choice(total, size=total // 2, replace=False)
        idx = np.stack(np.unravel_index(flat, dims), axis=1)
        x = SparseTensor(dims, idx, rng.normal(size=len(flat)),
                         observed_only=bool(i % 2))
        fs = init_factors(dims, 2, seed=seed + i)
        graphs = [knn_graph(rng.normal(size=(n, 2)), k=2) for n in dims]
        model = DiffusionRefiner.create(2, 2, degree=2, channels=2, hidden=4,
                                        unroll=2, seed=seed + i,
                                        shared_cell=bool(i % 3 == 0))
        for cell in model.cells:
            cell.w_out[...] = rng.uniform(-0.2, 0.2, size=cell.w_out.shape)
            cell.b_out[...] = rng.uniform(-0.1, 0.1, size=cell.b_out.shape)
        worst = refiner_gradient_check(x, fs, graphs, 0.7, model)
        ok = worst <= 1e-4
        print(f"refiner instance {i:2d}: max rel err {worst:.2e} "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            failures.append(i)
    return failures


def _cmd_gradcheck(args):
    failures = _gradcheck_objective(args.seed)
    failures += _gradcheck_refiner(args.seed)
    if failures:
        print(f"{len(failures)} gradient checks FAILED")
        return 2
    print("all gradient checks passed")
    return 0


def build_parser():
    parser = _Parser(prog="hyperfact",
                     description="Graph-regularized CP factorization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="key=value synth spec file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train factors from a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True, help="key=value training plan file")
    p.add_argument("--out", required=True)
    p.add_argument("--refine", action="store_true",
                   help="train the diffusion refiner after the solver")
    p.add_argument("--refine-epochs", type=int, default=100)
    p.add_argument("--refine-unroll", type=int, default=3)
    p.add_argument("--refine-channels", type=int, default=4)
    p.add_argument("--refine-hidden", type=int, default=16)
    p.add_argument("--refine-degree", type=int, default=3)
    p.add_argument("--refine-lr", type=float, default=1e-2)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate saved factors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--factors", required=True)
    p.add_argument("--metric", required=True, choices=("rmse", "ap", "attribution"))
    p.add_argument("--target-mode", type=int, default=None)
    p.add_argument("--scores", default=None,
                   help="score<TAB>label file for the ap metric")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="compare sweep timings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--sweeps", default="gauss_seidel,jacobi")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError,) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
