"""Command-line interface.

Subcommands: merge (plan + apply a merge to a token CSV), spectral-verify
(the concentration-sweep experiment), schedule-compare (ratio vs fixed-k
FLOPs), flops (single-schedule FLOPs), selftest (oracle and invariant
checks).  Exit codes: 0 success, 1 invalid arguments or input, 2 numerical
failure (no eigensolver convergence / unsatisfiable data assumptions).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, spectral, transformer
from .energy import EnergyParams, energy_scores, margin_for_layer
from .errors import (
    AssumptionUnsatisfiableError,
    NoConvergenceError,
    PitomeLabError,
)
from .merge import (
    apply_merge,
    brute_force_nearest,
    merge_count,
    ones_sizes,
    plan_pitome,
    plan_tome,
    proportional_attention_bias,
)
from .rng import SplitMix64, derive_seed
from .token_graph import (
    build_weighted_graph,
    load_tokens_csv,
    pairwise_cosine,
    save_tokens_csv,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pitome-lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_merge = sub.add_parser("merge", help="plan and apply one merge pass")
    p_merge.add_argument("--input", required=True)
    p_merge.add_argument("--algo", choices=["pitome", "tome"], required=True)
    group = p_merge.add_mutually_exclusive_group(required=True)
    group.add_argument("--ratio", type=float)
    group.add_argument("--k", type=int)
    p_merge.add_argument("--layer", type=int, default=0)
    p_merge.add_argument("--layers", type=int, default=12)
    p_merge.add_argument("--alpha", type=float, default=1.0)
    p_merge.add_argument("--protect-first", action="store_true")
    p_merge.add_argument("--plan-out")
    p_merge.add_argument("--out", required=True)

    p_sv = sub.add_parser("spectral-verify", help="concentration sweep")
    p_sv.add_argument("--clusters", type=int, required=True)
    p_sv.add_argument("--sizes", required=True, help="c1,c2,... descending")
    p_sv.add_argument("--dim", type=int, required=True)
    p_sv.add_argument("--kappa-sweep", required=True, help="lo:hi:count")
    p_sv.add_argument("--seeds", type=int, required=True)
    p_sv.add_argument("--out", required=True)

    p_sc = sub.add_parser("schedule-compare", help="ratio vs fixed-k FLOPs")
    p_sc.add_argument("--n0", type=int, required=True)
    p_sc.add_argument("--dim", type=int, required=True)
    p_sc.add_argument("--layers", type=int, required=True)
    p_sc.add_argument("--ratio", type=float, required=True)
    p_sc.add_argument("--k", type=int, default=None)
    p_sc.add_argument("--out", required=True)

    p_fl = sub.add_parser("flops", help="FLOPs for one ratio schedule")
    p_fl.add_argument("--n0", type=int, required=True)
    p_fl.add_argument("--dim", type=int, required=True)
    p_fl.add_argument("--layers", type=int, required=True)
    p_fl.add_argument("--ratio", type=float, required=True)
    p_fl.add_argument("--csv", action="store_true")

    sub.add_parser("selftest", help="run oracle and invariant checks")
    return parser


def _cmd_merge(args) -> int:
    tokens = load_tokens_csv(args.input)
    n = tokens.shape[0]
    margin = margin_for_layer(args.layer, args.layers)
    params = EnergyParams(margin=margin, alpha=args.alpha)
    if args.ratio is not None:
        k = merge_count(n, args.ratio)
    else:
        k = args.k
    if args.algo == "pitome":
        if args.ratio is not None:
            plan = plan_pitome(
                tokens, params, args.ratio, protect_first=args.protect_first
            )
        else:
            from .merge import plan_pitome_k

            plan = plan_pitome_k(
                tokens, params, k, protect_first=args.protect_first
            )
    else:
        plan = plan_tome(tokens, k, protect_first=args.protect_first)
    merged, sizes = apply_merge(plan, tokens, ones_sizes(n))
    save_tokens_csv(args.out, merged)
    if args.plan_out:
        with open(args.plan_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(plan.to_json() + "\n")
    print(f"merged {n} -> {merged.shape[0]} tokens ({args.algo}, k={plan.k})")
    return 0


def _cmd_spectral_verify(args) -> int:
    sizes = tuple(int(tok) for tok in args.sizes.split(","))
    if len(sizes) != args.clusters:
        raise _UsageError(
            f"--clusters says {args.clusters} but --sizes lists {len(sizes)}"
        )
    try:
        lo_s, hi_s, count_s = args.kappa_sweep.split(":")
        lo, hi, count = float(lo_s), float(hi_s), int(count_s)
    except ValueError as exc:
        raise _UsageError(f"bad --kappa-sweep {args.kappa_sweep!r}: {exc}")
    cfg = harness.ExperimentConfig(
        cluster_sizes=sizes,
        dim=args.dim,
        kappas=harness.kappa_sweep(lo, hi, count),
        seeds=args.seeds,
    )
    rows = harness.run_theorem1_experiment(cfg)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(harness.experiment_csv(rows))
    failures = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {args.out} ({failures} failed seeds)")
    return 0


def _cmd_schedule_compare(args) -> int:
    comp = harness.run_schedule_compare(
        args.n0, args.dim, args.layers, args.ratio, args.k
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(comp.to_csv())
    print(
        f"ratio r={args.ratio}: {comp.ratio_report.total} flops "
        f"(final {comp.ratio_report.final_tokens} tokens); "
        f"fixed k={comp.fixed_k}: {comp.fixed_report.total} flops "
        f"(final {comp.fixed_report.final_tokens} tokens)"
    )
    return 0


def _cmd_flops(args) -> int:
    spec = transformer.ScheduleSpec(
        transformer.MODE_RATIO, args.layers, r=args.ratio
    )
    report = transformer.flops_estimate(args.n0, args.dim, spec)
    if args.csv:
        sys.stdout.write(report.to_csv())
    else:
        print("layer  tokens_in tokens_out   attn_flops    mlp_flops  merge_flops")
        for i, row in enumerate(report.per_layer):
            tin, tout, attn, mlp, mrg = row
            print(f"{i:5d} {tin:10d} {tout:10d} {attn:12d} {mlp:12d} {mrg:12d}")
        print(f"total flops: {report.total}")
    return 0


def _selftest_checks():
    gen = SplitMix64(derive_seed(0xC0FFEE))

    def rand_tokens(n, h):
        return gen.gaussian_matrix(n, h)

    def check_graph_invariants():
        for _ in range(5):
            w = build_weighted_graph(rand_tokens(12, 6)).weights
            assert np.allclose(w, w.T)
            assert np.all(np.diag(w) == 0.0)
            assert w.min() >= -1e-9 and w.max() <= 2 + 1e-9

    def check_merge_count():
        assert merge_count(100, 0.9) == 10
        assert merge_count(7, 1.0) == 0
        assert merge_count(5, 0.5) == 2

    def check_oracle_equivalence():
        params = EnergyParams(margin=0.5)
        for _ in range(20):
            toks = rand_tokens(14, 5)
            plan = plan_pitome(toks, params, 0.7)
            if plan.k == 0:
                continue
            want = brute_force_nearest(
                toks[list(plan.set_a)], toks[list(plan.set_b)]
            )
            assert tuple(want) == plan.dest_in_b

    def check_conservation():
        params = EnergyParams(margin=0.5)
        for _ in range(10):
            toks = rand_tokens(16, 4)
            sizes = 1.0 + np.abs(gen.gaussians(16))
            plan = plan_pitome(toks, params, 0.6)
            out, out_sizes = apply_merge(plan, toks, sizes)
            before = (toks * sizes[:, None]).sum(axis=0)
            after = (out * out_sizes[:, None]).sum(axis=0)
            assert np.allclose(before, after, rtol=1e-7)
            assert abs(sizes.sum() - out_sizes.sum()) <= 1e-9 * sizes.sum()

    def check_noop_identities():
        toks = rand_tokens(9, 4)
        plan = plan_pitome(toks, EnergyParams(margin=0.5), 1.0, order="original")
        out, _ = apply_merge(plan, toks, ones_sizes(9))
        assert np.array_equal(out, toks)
        assert np.allclose(proportional_attention_bias(ones_sizes(5)), 0.0)
        g = build_weighted_graph(toks)
        part = spectral.Partition.singletons(9)
        assert spectral.spectral_distance(g, part) <= 1e-9

    def check_eigensolver():
        for _ in range(10):
            m = rand_tokens(8, 8)
            sym = (m + m.T) / 2
            lam = spectral.symmetric_eigenvalues(sym)
            assert abs(lam.sum() - np.trace(sym)) <= 1e-9 * max(1, abs(np.trace(sym)))
            assert abs((lam**2).sum() - (sym**2).sum()) <= 1e-8 * max(
                1.0, (sym**2).sum()
            )

    def check_lemma1():
        for _ in range(10):
            g = build_weighted_graph(rand_tokens(10, 5))
            labels = [int(gen.next_uint64() % 3) for _ in range(10)]
            labels[0], labels[1], labels[2] = 0, 1, 2
            part = spectral.Partition.from_labels(labels)
            res = spectral.verify_lemma1(g, part)
            assert res.ok, f"lemma1 deviation {res.max_deviation:g}"

    def check_weyl():
        for _ in range(10):
            g = build_weighted_graph(rand_tokens(9, 5))
            a = int(gen.next_uint64() % 9)
            b = (a + 1 + int(gen.next_uint64() % 8)) % 9
            lhs, rhs = spectral.weyl_step_gap(g, a, b)
            assert lhs <= rhs + 1e-6

    def check_generator_determinism():
        spec = harness.ClusterSpec((4, 3), 8, 50.0, seed=7)
        t1, p1 = harness.gen_clustered_tokens(spec)
        t2, p2 = harness.gen_clustered_tokens(spec)
        assert np.array_equal(t1, t2) and p1 == p2

    def check_energy_bounds():
        params = EnergyParams(margin=0.3)
        toks = rand_tokens(12, 6)
        scores = energy_scores(pairwise_cosine(toks), params)
        n = 12
        lo = -params.alpha * (1 - np.exp(-1 - params.margin)) * (n - 1) / n
        hi = (n - 1) / n
        assert np.all(scores >= lo - 1e-12) and np.all(scores <= hi + 1e-12)

    return [
        ("graph_invariants", check_graph_invariants),
        ("merge_count_examples", check_merge_count),
        ("nearest_neighbor_oracle", check_oracle_equivalence),
        ("weighted_mean_conservation", check_conservation),
        ("noop_identities", check_noop_identities),
        ("eigensolver_identities", check_eigensolver),
        ("lifted_spectrum_preservation", check_lemma1),
        ("weyl_step_bound", check_weyl),
        ("generator_determinism", check_generator_determinism),
        ("energy_score_bounds", check_energy_bounds),
    ]


def _cmd_selftest() -> int:
    failed = 0
    for name, check in _selftest_checks():
        try:
            check()
        except Exception as exc:  # report every check, keep going
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failed:
        print(f"{failed} check(s) failed")
        return 2
    print("all checks passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "merge":
            return _cmd_merge(args)
        if args.command == "spectral-verify":
            return _cmd_spectral_verify(args)
        if args.command == "schedule-compare":
            return _cmd_schedule_compare(args)
        if args.command == "flops":
            return _cmd_flops(args)
        if args.command == "selftest":
            return _cmd_selftest()
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NoConvergenceError, AssumptionUnsatisfiableError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (PitomeLabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
