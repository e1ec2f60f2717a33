"""Command-line driver: load a policy (or raw system) and a query, verify, report.

Exit status: 0 the property holds, 1 it fails, 2 usage/parse error,
3 a capacity limit was exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from acverify.cegar import CegarError, SelectionAborted, cegar_loop
from acverify.formula import Formula, atoms, is_propositional
from acverify.kernel import DEFAULT_MAX_ACTIONS, InterpretedSystem, derive
from acverify.mc import (
    DEFAULT_MAX_STATES,
    FormulaError,
    UnsupportedFormula,
    check,
    counterexample,
    is_actlk,
    reachable,
)
from acverify.boolean import compile_formula
from acverify.policy import (
    CapacityError,
    PolicyError,
    ground,
    ground_formula,
    parse_policy,
    parse_query,
    split_query,
)
from acverify.rawsys import RawSystemError, encode_raw_system
from acverify.syntax import ParseError, format_formula

log = logging.getLogger("acverify")

EXIT_HOLDS, EXIT_FAILS, EXIT_USAGE, EXIT_CAPACITY = 0, 1, 2, 3
MODES = ("direct", "cegar-auto", "cegar-interactive")


@dataclass(frozen=True)
class RunConfig:
    policy: str
    query: str
    mode: str = "cegar-auto"
    max_states: int = DEFAULT_MAX_STATES
    max_actions: int = DEFAULT_MAX_ACTIONS
    format: str = "text"
    out: str | None = None
    select_from: str | None = None
    dump_system: str | None = None
    trace: str | None = None
    seed: int = 0
    all_witnesses: bool = False


@dataclass
class Problem:
    system: InterpretedSystem
    prop: Formula
    init: Formula
    visible: tuple
    shown: list  # propositions printed in counterexample states


@dataclass
class Report:
    policy: str
    query: str
    mode: str
    prop: str
    holds: bool
    confirmed: bool = True
    stats: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    counterexample: dict | None = None
    counterexample_text: str = ""
    note: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "query": self.query,
            "mode": self.mode,
            "property": self.prop,
            "verdict": "holds" if self.holds else "fails",
            "confirmed": self.confirmed,
            "note": self.note,
            "seed": self.seed,
            "stats": self.stats,
            "trace": self.trace,
            "counterexample": self.counterexample,
        }

    def to_text(self) -> str:
        lines = [
            f"policy:   {self.policy}",
            f"query:    {self.query}",
            f"mode:     {self.mode}",
            f"property: {self.prop}",
        ]
        for k, v in self.stats.items():
            lines.append(f"{k.replace('_', ' ')}: {v}")
        if self.trace:
            lines.append("refinement trace:")
            lines.append("  iter  visible  abstract  verdict  counterexample  kind  added")
            for t in self.trace:
                added = ", ".join(t["added"] or t["selected"])
                lines.append(
                    f"  {t['iteration']:>4}  {t['visible']:>7}  {t['abstract_states']:>8}  "
                    f"{t['verdict']:<7}  {t['counterexample'] or '-':<14}  {t['failure_kind'] or '-':<4}  {added}"
                )
                if t["failure_state"]:
                    lines.append(f"        failure state: {t['failure_state']}")
                if t["clauses"]:
                    lines.append(f"        clauses: {'; '.join(t['clauses'])}")
        verdict = "HOLDS" if self.holds else "FAILS"
        if not self.confirmed:
            verdict += " (abstract verdict, not confirmed)"
        lines.append(f"verdict: {verdict}")
        if self.note:
            lines.append(f"note: {self.note}")
        if self.counterexample_text:
            lines.append("counterexample:")
            lines.append(self.counterexample_text.rstrip())
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- loading


def load_problem(policy_path: str, query_path: str, max_actions: int = DEFAULT_MAX_ACTIONS) -> Problem:
    psrc = Path(policy_path).read_text()
    qsrc = Path(query_path).read_text()
    if policy_path.endswith(".its"):
        system = encode_raw_system(psrc, Path(policy_path).stem)
        init_t, prop_t, visible = split_query(qsrc)
        init = ground_formula(init_t, {}, ())
        prop = ground_formula(prop_t, {}, ())
        u = system.universe
        for f in (init, prop):
            for n in atoms(f):
                if n not in u:
                    raise FormulaError(f"unknown proposition {n!r}")
        for v in visible:
            if v not in u:
                raise FormulaError(f"unknown proposition {v!r}")
        if not is_propositional(init):
            raise FormulaError("the initial condition must be propositional")
        test = compile_formula(init, u.index)
        system = InterpretedSystem(u, system.actions, {s for s in system.init if test(s)}, name=system.name)
        return Problem(system, prop, init, tuple(visible), list(u.names))
    gp = ground(parse_policy(psrc))
    q = parse_query(qsrc, gp)
    system = derive(gp, q.init, max_actions=max_actions).system
    return Problem(system, q.prop, q.init, q.visible, list(gp.props))


# ---------------------------------------------------------------- selectors


def stream_selector(stream: IO[str], prompt: IO[str] | None):
    """Read selections one name per line; a blank line ends a batch, ``*`` takes all."""

    def select(agent: str, candidates: list) -> list:
        if prompt is not None:
            prompt.write(f"agent {agent}: hidden local propositions\n")
            for c in candidates:
                prompt.write(f"  {c}\n")
            prompt.write("select (one per line, blank line to finish, * for all):\n")
            prompt.flush()
        chosen: list[str] = []
        for line in stream:
            tok = line.strip()
            if not tok:
                if chosen:
                    break
                continue
            if tok.startswith("#"):
                continue
            if tok == "*":
                return list(candidates)
            if tok not in candidates:
                if prompt is not None:
                    prompt.write(f"  ignored {tok!r}: not a candidate\n")
                continue
            chosen.append(tok)
        return chosen

    return select


# ---------------------------------------------------------------- running


def run(config: RunConfig, stdin: IO[str] | None = None, stderr: IO[str] | None = None) -> tuple[int, Report]:
    if config.mode not in MODES:
        raise ValueError(f"unknown mode {config.mode!r}")
    stderr = stderr or sys.stderr
    t0 = time.perf_counter()
    prob = load_problem(config.policy, config.query, config.max_actions)
    system = prob.system
    if config.dump_system:
        idx = reachable(system, config.max_states)
        Path(config.dump_system).write_text(system.dump(idx.states))
    u = system.universe
    report = Report(config.policy, config.query, config.mode, format_formula(prob.prop), True, seed=config.seed)
    report.stats = {
        "propositions": len(u),
        "actions": len(system.actions),
        "initial_states": len(system.init),
    }
    if config.mode == "direct":
        idx = reachable(system, config.max_states)
        res = check(idx, prob.prop)
        report.holds = res.holds
        report.stats["reachable_states"] = len(idx)
        if not res.holds:
            if is_actlk(prob.prop, safety=True, allow_neg_k=True):
                ce = counterexample(idx, prob.prop)
                report.counterexample = ce.to_dict(u, prob.shown)
                report.counterexample_text = ce.to_text(u, prob.shown)
            else:
                s = res.failing_init[0]
                report.note = f"fails at initial state {u.format_state(s, prob.shown)}"
    else:
        interactive = config.mode == "cegar-interactive"
        selector = None
        if interactive:
            if config.select_from:
                selector = _batch_selector(Path(config.select_from).read_text())
            else:
                selector = stream_selector(stdin or sys.stdin, stderr)
        result = cegar_loop(
            system,
            prob.prop,
            prob.init,
            mode="interactive" if interactive else "automatic",
            prop_selector=selector,
            extra_visible=prob.visible,
            all_witnesses=config.all_witnesses,
            max_states=config.max_states,
        )
        report.holds = result.holds
        report.confirmed = result.confirmed
        report.trace = [t.to_dict() for t in result.trace]
        report.stats["iterations"] = result.iterations
        report.stats["max_abstract_states"] = result.max_abstract_states
        report.stats["visible_propositions"] = len(result.amap.visible)
        if not result.confirmed:
            report.note = "all changing local propositions are visible; the abstract model satisfies the property"
        if result.counterexample is not None:
            report.counterexample = result.counterexample.to_dict(u, prob.shown)
            report.counterexample_text = result.counterexample.to_text(u, prob.shown)
        if config.trace:
            Path(config.trace).write_text(json.dumps(report.trace, indent=2) + "\n")
    log.info("finished in %.2fs", time.perf_counter() - t0)
    return (EXIT_HOLDS if report.holds else EXIT_FAILS), report


def _batch_selector(text: str):
    batches: list[list[str]] = [[]]
    for line in text.splitlines():
        tok = line.split("#", 1)[0].strip()
        if not tok:
            if batches[-1]:
                batches.append([])
            continue
        batches[-1].append(tok)
    queue = [b for b in batches if b]

    def select(agent: str, candidates: list) -> list:
        if not queue:
            return []
        batch = queue.pop(0)
        return list(candidates) if "*" in batch else batch

    return select


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="acverify",
        description="Verify temporal-epistemic properties of access control policies.",
    )
    p.add_argument("--policy", required=True, help="policy file (.acp) or raw interpreted system (.its)")
    p.add_argument("--query", required=True, help="query file: 'init : property', optional 'visible:' lines")
    p.add_argument("--mode", choices=MODES, default="cegar-auto")
    p.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    p.add_argument("--max-actions", type=int, default=DEFAULT_MAX_ACTIONS)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="write the report here instead of standard output")
    p.add_argument("--select-from", help="file of proposition selections for interactive mode")
    p.add_argument("--dump-system", help="write the concrete system in .its syntax")
    p.add_argument("--trace", help="write the refinement trace as JSON")
    p.add_argument("--seed", type=int, default=0, help="recorded in the report; orderings are canonical")
    p.add_argument("--all-witnesses", action="store_true", help="validate epistemic edges against every path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Iterable[str] | None = None, stdin=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_HOLDS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=stderr)
    config = RunConfig(
        policy=args.policy,
        query=args.query,
        mode=args.mode,
        max_states=args.max_states,
        max_actions=args.max_actions,
        format=args.format,
        out=args.out,
        select_from=args.select_from,
        dump_system=args.dump_system,
        trace=args.trace,
        seed=args.seed,
        all_witnesses=args.all_witnesses,
    )
    try:
        status, report = run(config, stdin=stdin, stderr=stderr)
    except CapacityError as exc:
        stderr.write(f"acverify: capacity exceeded: {exc}\n")
        return EXIT_CAPACITY
    except OSError as exc:
        stderr.write(f"acverify: {exc.filename or ''}: {exc.strerror or exc}\n")
        return EXIT_USAGE
    except ParseError as exc:
        stderr.write(f"acverify: parse error: {exc}\n")
        return EXIT_USAGE
    except (PolicyError, RawSystemError, FormulaError, SelectionAborted, CegarError, ValueError) as exc:
        kind = "unsupported formula" if isinstance(exc, UnsupportedFormula) else "error"
        stderr.write(f"acverify: {kind}: {exc}\n")
        return EXIT_USAGE
    text = json.dumps(report.to_dict(), indent=2) + "\n" if config.format == "json" else report.to_text()
    if config.out:
        Path(config.out).write_text(text)
    else:
        stdout.write(text)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
