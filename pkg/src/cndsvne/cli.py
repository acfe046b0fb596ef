"""Batch command line: generation, enhancement, embedding and simulation.

Every command writes into ``--out`` and leaves a ``manifest.json`` holding
the resolved configuration, the command arguments and digests of inputs and
outputs; ``replay`` reruns a manifest and compares the digests.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .brite import BriteSyntaxError, parse_brite, write_brite
from .config import ConfigError, RunConfig, apply_updates, parse_config, render
from .enhance import enhance_vn, fip_enhance
from .multipath import embed_vn
from .netmodel import GenerationError, SubstrateNetwork, VirtualNetwork
from .simulate import (
    build_substrate,
    compare_strategies,
    generate_requests,
    run_scenario,
    write_decision_csv,
)

EXIT_OK, EXIT_CRASH, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_MISMATCH = 0, 1, 2, 3, 4

log = logging.getLogger("cndsvne")


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise CliError("not_found", f"no such file: {path}") from None


def _read_network(path: str):
    try:
        return parse_brite(_read_text(path))
    except BriteSyntaxError as exc:
        raise CliError("syntax", f"{path}: {exc}") from None


def _read_vn(path: str) -> VirtualNetwork:
    net = _read_network(path)
    if not isinstance(net, VirtualNetwork):
        raise CliError("usage", f"{path} holds a substrate, expected a virtual network")
    return net


def _read_substrate(path: str) -> SubstrateNetwork:
    net = _read_network(path)
    if not isinstance(net, SubstrateNetwork):
        raise CliError("usage", f"{path} holds a virtual network, expected a substrate")
    return net


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = parse_config(_read_text(args.config))
    updates: Dict[str, Dict] = {}
    if args.seed is not None:
        updates.setdefault("run", {})["seed"] = args.seed
    if args.verbose:
        updates.setdefault("run", {})["verbosity"] = "info" if args.verbose == 1 else "debug"
    for section, key, attr in OVERRIDES.get(args.command, ()):
        value = getattr(args, attr, None)
        if value is not None:
            updates.setdefault(section, {})[key] = value
    return apply_updates(cfg, updates)


# command -> (section, key, argparse attribute) flags that override the config file
OVERRIDES = {
    "gen-substrate": [("substrate", "nodes", "nodes"), ("substrate", "links", "links")],
    "gen-vns": [("workload", "num_requests", "count")],
    "enhance": [("embedding", "alpha", "alpha")],
    "embed": [("embedding", "alpha", "alpha"), ("embedding", "eta", "eta"), ("embedding", "strategy", "strategy")],
    "simulate": [("embedding", "strategy", "strategy"), ("workload", "num_requests", "requests")],
    "compare": [("workload", "num_requests", "requests")],
}

INPUT_ARGS = ("vn", "substrate")


def cmd_gen_substrate(cfg: RunConfig, args, out: Path) -> List[Path]:
    sub = build_substrate(cfg.scenario)
    path = out / "substrate.brite"
    path.write_text(write_brite(sub))
    print(f"nodes={sub.num_nodes} links={sub.num_links} file={path}")
    return [path]


def cmd_gen_vns(cfg: RunConfig, args, out: Path) -> List[Path]:
    requests = generate_requests(cfg.scenario)
    paths = []
    rows = []
    for vn in requests:
        p = out / f"vn_{vn.vn_id:04d}.brite"
        p.write_text(write_brite(vn))
        paths.append(p)
        rows.append([vn.vn_id, repr(vn.arrival), repr(vn.lifetime), p.name])
    wl = out / "workload.csv"
    with open(wl, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vn_id", "arrival", "lifetime", "file"])
        w.writerows(rows)
    print(f"requests={len(requests)} workload={wl}")
    return paths + [wl]


def _enhance(vn: VirtualNetwork, cfg: RunConfig, strategy: str):
    sc = cfg.scenario
    if strategy == "FIP":
        return fip_enhance(vn, sc.embedding.alpha)
    return enhance_vn(vn, sc.embedding.alpha, sc.solver, replace(sc.swarm, seed=cfg.run.seed))


def cmd_enhance(cfg: RunConfig, args, out: Path) -> List[Path]:
    vn = _read_vn(args.vn)
    enh = _enhance(vn, cfg, "CND")
    fip = fip_enhance(vn, cfg.scenario.embedding.alpha)
    doc = enh.to_document(base_ref=os.path.basename(args.vn))
    doc["fip_objective"] = fip.objective
    path = out / "enhanced.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"objective={enh.objective!r} fip_objective={fip.objective!r} file={path}")
    return [path]


def cmd_embed(cfg: RunConfig, args, out: Path) -> List[Path]:
    vn = _read_vn(args.vn)
    sub = _read_substrate(args.substrate)
    sc = cfg.scenario
    enh = _enhance(vn, cfg, sc.embedding.strategy)
    emb = embed_vn(enh, sub, sc.embedding.eta, sc.solver, replace(sc.swarm, seed=cfg.run.seed),
                   sc.embedding.candidate_cap or None)
    decision = out / "decision.csv"
    with open(decision, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vn_id", "strategy", "outcome", "objective", "enhanced_objective", "paths"])
        if emb is None:
            w.writerow([vn.vn_id, sc.embedding.strategy, "reject", "nan", repr(enh.objective), ""])
        else:
            paths = ";".join(
                f"{i}-{j}:" + "|".join("/".join(map(str, p)) for p in ps.paths)
                for (i, j), ps in sorted(emb.link_paths.items())
            )
            w.writerow([vn.vn_id, sc.embedding.strategy, "accept", repr(emb.objective), repr(enh.objective), paths])
    outputs = [decision]
    if emb is None:
        print(f"outcome=reject file={decision}")
        raise CliError("infeasible", "no feasible embedding for the request", EXIT_INFEASIBLE)
    doc = {"enhanced": enh.to_document(base_ref=os.path.basename(args.vn)), "embedding": emb.to_document()}
    path = out / "embedding.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    outputs.append(path)
    print(f"outcome=accept objective={emb.objective!r} file={path}")
    return outputs


def cmd_simulate(cfg: RunConfig, args, out: Path) -> List[Path]:
    sub = _read_substrate(args.substrate) if args.substrate else None
    result = run_scenario(cfg.scenario, sub)
    path = out / "decisions.csv"
    write_decision_csv(result.metrics.records, path)
    m = result.metrics
    print(f"strategy={cfg.scenario.embedding.strategy} accepted={m.accepted} submitted={m.submitted} "
          f"revenue={m.final_revenue!r} file={path}")
    if any(not fo.ok for fo in result.failures):
        raise CliError("recovery", "a failure could not be recovered by the stored plans", EXIT_CRASH)
    return [path]


def cmd_compare(cfg: RunConfig, args, out: Path) -> List[Path]:
    paired = out / "compare.csv"
    results = compare_strategies(cfg.scenario, paired)
    paths = [paired]
    for strategy, m in results.items():
        p = out / f"decisions_{strategy.lower()}.csv"
        write_decision_csv(m.records, p)
        paths.append(p)
        print(f"strategy={strategy} accepted={m.accepted} submitted={m.submitted} revenue={m.final_revenue!r}")
    return paths


COMMANDS = {
    "gen-substrate": cmd_gen_substrate,
    "gen-vns": cmd_gen_vns,
    "enhance": cmd_enhance,
    "embed": cmd_embed,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cndsvne", description="Survivable virtual network embedding toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--print-config", action="store_true", help="print every setting with its default and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        return sp

    g = common(sub.add_parser("gen-substrate", help="generate a Waxman substrate in BRITE form"))
    g.add_argument("--nodes", type=int)
    g.add_argument("--links", type=int)
    g = common(sub.add_parser("gen-vns", help="generate VN requests and their workload CSV"))
    g.add_argument("--count", type=int)
    g = common(sub.add_parser("enhance", help="enhance one VN and compare with FIP"))
    g.add_argument("--vn", required=True)
    g.add_argument("--alpha", type=float)
    g = common(sub.add_parser("embed", help="enhance and embed one VN on a substrate"))
    g.add_argument("--vn", required=True)
    g.add_argument("--substrate", required=True)
    g.add_argument("--alpha", type=float)
    g.add_argument("--eta", type=int)
    g.add_argument("--strategy", choices=("CND", "FIP"))
    g = common(sub.add_parser("simulate", help="run one strategy over a generated workload"))
    g.add_argument("--substrate", help="BRITE substrate instead of a generated one")
    g.add_argument("--strategy", choices=("CND", "FIP"))
    g.add_argument("--requests", type=int)
    g = common(sub.add_parser("compare", help="run CND and FIP on an identical workload"))
    g.add_argument("--requests", type=int)
    r = sub.add_parser("replay", help="rerun a manifest and compare output digests")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    return p


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper()), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def run_command(args) -> List[Path]:
    cfg = _resolve_config(args)
    _configure_logging(cfg.run.verbosity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    try:
        outputs = COMMANDS[args.command](cfg, args, out)
    finally:
        inputs = {}
        for name in INPUT_ARGS:
            value = getattr(args, name, None)
            if value and Path(value).is_file():
                inputs[name] = {"path": os.path.abspath(value), "sha256": _digest(Path(value))}
        manifest = {
            "tool": "cndsvne",
            "version": __version__,
            "command": args.command,
            "seed": cfg.run.seed,
            "config": render(cfg),
            "inputs": inputs,
            "outputs": {p.name: _digest(p) for p in outputs},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outputs


def replay(manifest_path: str, out_dir: str) -> int:
    try:
        manifest = json.loads(_read_text(manifest_path))
    except json.JSONDecodeError as exc:
        raise CliError("syntax", f"{manifest_path}: {exc}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "replay.cfg"
    cfg_path.write_text(manifest["config"])
    argv = [manifest["command"], "--config", str(cfg_path), "--out", str(out)]
    for name, info in manifest.get("inputs", {}).items():
        if _digest(Path(info["path"])) != info["sha256"]:
            raise CliError("input_changed", f"input {info['path']} differs from the manifest")
        argv += [f"--{name}", info["path"]]
    args = build_parser().parse_args(argv)
    outputs = {p.name: _digest(p) for p in run_command(args)}
    expected = manifest["outputs"]
    bad = sorted(n for n in expected if outputs.get(n) != expected[n])
    cfg_path.unlink()
    if bad:
        print(f"replay=mismatch files={','.join(bad)}")
        return EXIT_MISMATCH
    print(f"replay=identical files={len(expected)}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.print_config:
            print(render(RunConfig()), end="")
            return EXIT_OK
        if args.command is None:
            raise CliError("usage", "a command is required")
        if args.command == "replay":
            return replay(args.manifest, args.out)
        run_command(args)
        return EXIT_OK
    except CliError as exc:
        _error(exc.kind, str(exc))
        return exc.code
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_USAGE
    except GenerationError as exc:
        _error("generation", str(exc))
        return EXIT_CRASH
    except Exception as exc:  # noqa: BLE001 - the one-line contract covers crashes too
        _error("crash", f"{type(exc).__name__}: {exc}")
        return EXIT_CRASH


def _error(kind: str, message: str) -> None:
    print(f"error: kind={kind} message={message.replace(chr(10), ' ')}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
