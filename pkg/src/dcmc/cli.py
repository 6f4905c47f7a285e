"""Command-line front end.

Exit codes: 0 everything checked holds, 1 some check failed, 2 usage or
parse error, 3 a world or time budget ran out.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dc, twophase
from .bisim import bisimulation_violation, greatest_bisimulation
from .formula import Atom, FormulaSyntaxError, Iff, owner, parse_formula, xor
from .kripke import FitnessError, KripkeStructure, build_structure
from .lang import Assertion, NotEnabledError, ResourceExhausted, parse_program, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _budget_hook(budget: float | None):
    if budget is None:
        return None
    start = time.perf_counter()

    def hook(pos, M):
        if time.perf_counter() - start > budget:
            raise ResourceExhausted(f"time budget of {budget}s exceeded at step {pos}")

    return hook


def _emit(args, payload: dict, lines: list[str]):
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print("\n".join(lines))


# ---------------------------------------------------------------------------
# check


def _free_structure(names: list[str]) -> KripkeStructure:
    agents = list(dict.fromkeys(owner(v) for v in names))
    rows = list(itertools.product((0, 1), repeat=len(names)))
    own = {a: [v for v in names if owner(v) == a] for a in agents}
    return build_structure(agents, names, rows, own)


def cmd_check(args) -> int:
    try:
        text = Path(args.program).read_text()
    except OSError as exc:
        raise UsageError(str(exc))
    P = parse_program(text)
    if args.structure:
        M = KripkeStructure.from_json(Path(args.structure).read_text())
    else:
        names = [v for v in (args.free or "").split(",") if v]
        M = _free_structure(names) if names else KripkeStructure((), {}, {}, 1)
    extra = [Assertion(f"assert#{k + 1}", parse_formula(f)) for k, f in enumerate(args.assertion or [])]
    if extra:
        P = P.with_checkpoint("end", extra)
    result = run(M, P, max_worlds=args.max_worlds, jobs=args.jobs, on_step=_budget_hook(args.budget))
    if args.dump:
        Path(args.dump).write_text(result.structure.to_json())
    payload = {
        "worlds": result.world_counts,
        "results": [
            {"checkpoint": r.checkpoint, "name": r.name, "holds": r.holds, "witness": r.witness}
            for r in result.results
        ],
        "passed": result.passed,
    }
    lines = [f"worlds per step: {result.world_counts}"]
    for r in result.results:
        status = "PASS" if r.holds else f"FAIL (witness world {r.witness})"
        lines.append(f"[{r.checkpoint}] {r.name}: {status}")
    lines.append("all checkpoints hold" if result.passed else "some checkpoint fails")
    _emit(args, payload, lines)
    return EXIT_OK if result.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# dc and bisim


def _message_structure(kind: str, g: dc.KeyGraph):
    if kind == "generic":
        return dc.message_structure(list(g.agents))
    if kind == "payer":
        if list(g.agents) != [str(i) for i in range(1, len(g.agents) + 1)]:
            raise UsageError("payer structure needs agents 1..n")
        return dc.payer_structure(len(g.agents))
    raise UsageError(f"unknown message structure {kind!r}")


def cmd_dc(args) -> int:
    g = dc.parse_graph(args.graph)
    M, msgs = _message_structure(args.messages, g)
    if args.mode == "abstract":
        P = dc.build_dc_abstract(g.agents, msgs)
    else:
        P = dc.build_dc(g, msgs, unshared=args.unshared or ())
    if args.messages == "payer":
        checks = [Assertion(f"anonymity[{i}]", dc.payer_anonymity_formula(g.agents, i)) for i in g.agents]
    else:
        checks = [Assertion(f"anonymity[{i}]", dc.anonymity_formula(g.agents, i)) for i in g.agents]
    xm = xor(list(msgs.values()))
    checks += [Assertion(f"result[{i}]", Iff(Atom(dc.result_var(i, 1)), xm)) for i in g.agents]
    P = P.with_checkpoint("end", checks)
    result = run(M, P, max_worlds=args.max_worlds, on_step=_budget_hook(args.budget))
    if args.dump:
        Path(args.dump).write_text(result.structure.to_json())
    payload = {
        "graph": g.to_dict(),
        "mode": args.mode,
        "worlds": result.world_counts,
        "results": {r.name: r.holds for r in result.results},
        "passed": result.passed,
    }
    lines = [f"{args.mode} DC over {args.graph}: worlds per step {result.world_counts}"]
    lines += [f"{r.name}: {'PASS' if r.holds else 'FAIL'}" for r in result.results]
    _emit(args, payload, lines)
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_bisim(args) -> int:
    g = dc.parse_graph(args.graph)
    M, msgs = _message_structure(args.messages, g)
    t0 = time.perf_counter()
    concrete = run(M, dc.build_dc(g, msgs, unshared=args.unshared or ()), max_worlds=args.max_worlds).structure
    abstract = run(M.with_agents([dc.TRUSTED]), dc.build_dc_abstract(g.agents, msgs)).structure
    variables = list(M.variables) + [dc.result_var(a, 1) for a in g.agents]
    rel = greatest_bisimulation(concrete, abstract, variables, g.agents)
    elapsed = time.perf_counter() - t0
    payload = rel.to_dict() if args.pairs else {k: v for k, v in rel.to_dict().items() if k != "pairs"}
    payload.update({
        "graph": g.to_dict(),
        "worlds": [concrete.num_worlds, abstract.num_worlds],
        "size": len(rel),
        "bisimilar": rel.total,
        "verified": bisimulation_violation(concrete, abstract, rel.matrix, variables, g.agents) is None,
        "seconds": elapsed,
    })
    lines = [
        f"concrete worlds {concrete.num_worlds}, abstract worlds {abstract.num_worlds}",
        f"greatest bisimulation: {len(rel)} pairs after {rel.rounds} rounds, "
        f"left-total {rel.left_total}, right-total {rel.right_total}",
        f"independent closure check: {'ok' if payload['verified'] else 'VIOLATED'}",
        "bisimilar" if rel.total else "not bisimilar",
    ]
    if not rel.total:
        w = int(np.argmin(rel.matrix.any(axis=1))) if not rel.left_total else None
        u = int(np.argmin(rel.matrix.any(axis=0))) if not rel.right_total else None
        payload["unmatched"] = {"concrete": w, "abstract": u}
        if w is not None:
            lines.append(f"concrete world {w} has no partner: {concrete.valuation(w)}")
    _emit(args, payload, lines)
    return EXIT_OK if rel.total and payload["verified"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# two-phase


def _specs(arg: str) -> tuple:
    if arg == "all":
        return twophase.SPECS
    out = []
    for s in arg.split(","):
        if s == "2":
            out += ["2a", "2b"]
        elif s in twophase.SPECS + twophase.EXTRA_SPECS:
            out.append(s)
        else:
            raise UsageError(f"unknown spec {s!r}")
    return tuple(out)


def _graph_for(args, n):
    return dc.parse_graph(args.graph) if args.graph else dc.ring(n)


def _render_report(rep: twophase.SpecReport) -> list[str]:
    lines = [
        f"two-phase n={rep.n} mode={rep.mode} strength={rep.strength} candidate={rep.candidate}"
        + (f" rounds={rep.rounds}" if rep.rounds is not None else ""),
        f"final worlds: {rep.world_counts[-1]}",
    ]
    for spec, ok in rep.verdicts().items():
        lines.append(f"spec {spec}: {'PASS' if ok else 'FAIL'}")
    for e in rep.failures()[:10]:
        where = f"agent {e.agent}" + (f" slot {e.slot}" if e.slot is not None else "")
        lines.append(f"  spec {e.spec} fails for {where} at world {e.witness} ({e.checkpoint})")
        for agent, w, w2, knows in e.witness_pairs:
            lines.append(f"    K[{agent}] operand {'holds' if knows else 'refuted'}: worlds {w} ~ {w2}")
    if len(rep.failures()) > 10:
        lines.append(f"  ... {len(rep.failures()) - 10} more failures")
    return lines


def cmd_twophase(args) -> int:
    n = args.n
    if args.rounds is not None and not 0 <= args.rounds <= 2 * n:
        raise UsageError(f"--rounds must lie in 0..{2 * n}")
    cand = twophase.resolve_candidate(args.candidate, n, args.strength)
    rep = twophase.check_implementation(
        n, cand, args.strength, args.mode, args.rounds, _graph_for(args, n), _specs(args.spec),
        jobs=args.jobs, max_worlds=args.max_worlds, on_step=_budget_hook(args.budget),
    )
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2))
    else:
        print("\n".join(_render_report(rep)))
    return EXIT_OK if rep.passed else EXIT_FAIL


def bench_rows(n: int, rounds: int, graph=None, budget: float | None = None, strength: str = "strong"):
    """Spec-4 runs for ``r = 1..rounds`` in both modes; one dict per round."""
    g = graph if graph is not None else dc.ring(n)
    base = twophase.build_initial(n)[0].num_worlds
    rows = []
    dead = set()
    for r in range(1, rounds + 1):
        row = {"rounds": r}
        for mode in ("abstract", "concrete"):
            if mode in dead:
                row[mode] = None
                continue
            try:
                rep = twophase.check_implementation(
                    n, "final", strength, mode, r, g, ("4",), on_step=_budget_hook(budget)
                )
            except (ResourceExhausted, MemoryError):
                dead.add(mode)
                row[mode] = None
                continue
            expected = base if mode == "abstract" else base << (len(g.edges) * r)
            row[mode] = {
                "worlds": rep.world_counts[-1],
                "expected_worlds": expected,
                "spec4": rep.passed,
                "seconds": rep.timings["run"] + rep.timings["build"],
                "check_seconds": rep.timings["checks"],
            }
        if row["abstract"] and row["concrete"]:
            row["speedup"] = row["concrete"]["seconds"] / max(row["abstract"]["seconds"], 1e-9)
            row["check_speedup"] = row["concrete"]["check_seconds"] / max(row["abstract"]["check_seconds"], 1e-9)
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    n = args.n
    rounds = args.rounds if args.rounds is not None else 2 * n
    if not 1 <= rounds <= 2 * n:
        raise UsageError(f"--rounds must lie in 1..{2 * n}")
    rows = bench_rows(n, rounds, _graph_for(args, n), args.budget, args.strength)
    growth_ok = all(
        row[m]["worlds"] == row[m]["expected_worlds"] for row in rows for m in ("abstract", "concrete") if row[m]
    )
    agree = all(
        row["abstract"]["spec4"] == row["concrete"]["spec4"] for row in rows if row["abstract"] and row["concrete"]
    )
    lines = [
        f"Spec 4, n={n}, times in seconds (x = budget exceeded)",
        f"{'rounds':>6} | {'abs worlds':>10} {'abs time':>9} | {'con worlds':>11} {'con time':>9} | {'speedup':>8}",
    ]
    for row in rows:
        a, c = row["abstract"], row["concrete"]
        cells = [f"{row['rounds']:>6}"]
        cells.append(f"{a['worlds']:>10} {a['seconds']:>9.3f}" if a else f"{'x':>10} {'x':>9}")
        cells.append(f"{c['worlds']:>11} {c['seconds']:>9.3f}" if c else f"{'x':>11} {'x':>9}")
        cells.append(f"{row['speedup']:>7.1f}x" if "speedup" in row else f"{'-':>8}")
        lines.append(" | ".join(cells))
    lines.append(f"growth law {'holds' if growth_ok else 'VIOLATED'}; verdicts {'agree' if agree else 'DIFFER'}")
    _emit(args, {"n": n, "rows": rows, "growth_law": growth_ok, "verdicts_agree": agree}, lines)
    return EXIT_OK if growth_ok and agree else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for checkpoint evaluation")
    common.add_argument("--budget", type=float, default=None, metavar="SECONDS", help="wall-clock limit")
    common.add_argument("--max-worlds", type=int, default=None, help="abort before exceeding this many worlds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dcmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="run a program file and check its assertions")
    c.add_argument("program")
    c.add_argument("--structure", help="initial structure as a JSON dump")
    c.add_argument("--free", help="comma-separated variables taking all values initially")
    c.add_argument("--assert", dest="assertion", action="append", help="formula asserted valid at the end")
    c.add_argument("--dump", help="write the final structure as JSON")
    c.set_defaults(func=cmd_check)

    for name, func, text in (("dc", cmd_dc, "run one DC round"), ("bisim", cmd_bisim, "compare DC with its abstraction")):
        d = sub.add_parser(name, parents=[common], help=text)
        d.add_argument("--graph", default="ring:3")
        d.add_argument("--messages", choices=("generic", "payer"), default="generic")
        d.add_argument("--unshared", type=int, action="append", help="edge whose key is withheld (breaks DC)")
        if name == "dc":
            d.add_argument("--mode", choices=("concrete", "abstract"), default="concrete")
            d.add_argument("--dump", help="write the final structure as JSON")
        else:
            d.add_argument("--pairs", action="store_true", help="include all related pairs in JSON output")
        d.set_defaults(func=func)

    for name, func, text in (
        ("twophase", cmd_twophase, "check a two-phase implementation"),
        ("bench", cmd_bench, "concrete vs abstract anonymity-check sweep"),
    ):
        t = sub.add_parser(name, parents=[common], help=text)
        t.add_argument("--n", type=int, default=3)
        t.add_argument("--graph", default=None, help="ring:N, complete:N or file:PATH (default ring)")
        t.add_argument("--strength", choices=("strong", "weak"), default="strong")
        t.add_argument("--rounds", type=int, default=None)
        if name == "twophase":
            t.add_argument("--mode", choices=("concrete", "abstract"), default="abstract")
            t.add_argument("--candidate", default="final", help="initial, final or file:PATH")
            t.add_argument("--spec", default="all", help="1, 2, 2a, 2b, 3, 3s, 4, cf, all or a comma list")
        t.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ResourceExhausted, MemoryError) as exc:
        print(f"resource exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, FormulaSyntaxError, NotEnabledError, FitnessError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
