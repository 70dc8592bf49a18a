"""Command-line orchestration.

Every run that writes files also writes a ``<out>.manifest.json`` (or
``manifest.json`` in a report directory) carrying the fully resolved
configuration, the seed, and a digest per output file.  The environment
variable ``SOPLAB_SEED`` overrides ``--seed`` everywhere.  Failures print
one machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

from . import dataset as ds
from . import evaluation as ev
from .errors import SoplabError
from .gridmap import (
    GridMap,
    MapRegistry,
    generate_map,
    load_registry,
    read_map_file,
    write_map_file,
    write_registry,
)
from .pathfind import PathQuery
from .service import DistanceCache, serve_stdio, serve_tcp
from .verifier import batch_verify, read_results, write_results

ENV_SEED = "SOPLAB_SEED"


def _resolve_seed(seed: int | None) -> int:
    env = os.environ.get(ENV_SEED)
    if env is not None:
        return int(env)
    return 0 if seed is None else seed


def _digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(target: Path, command: str, config: dict, outputs: list[Path], extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "config": config,
        "outputs": {str(p): _digest_file(p) for p in outputs},
    }
    if extra:
        payload.update(extra)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_split(path: str) -> ds.NodeSplit:
    return ds.split_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _group_arg(text: str) -> list[tuple[int, int]]:
    return ds.parse_groups(text)


# -- subcommand handlers -----------------------------------------------------


def _cmd_gen_map(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = generate_map(args.width, args.height, args.sparsity, seed, args.map_index)
    out = Path(args.out)
    write_map_file(grid, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gen-map",
        {
            "width": args.width,
            "height": args.height,
            "sparsity": args.sparsity,
            "seed": seed,
            "map_index": args.map_index,
        },
        [out],
    )
    return 0


def _cmd_registry(args) -> int:
    maps = [read_map_file(p) for p in args.maps]
    registry = MapRegistry(maps)
    out = Path(args.out)
    rel = [os.path.relpath(p, out.parent) for p in args.maps]
    write_registry(registry, out, rel)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "registry",
        {"maps": list(args.maps)},
        [out],
        {"vocab_size": registry.vocab_size, "token_digest": registry.token_table_digest()},
    )
    return 0


def _cmd_split(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = read_map_file(args.map)
    split = ds.split_nodes(grid, args.train_fraction, seed)
    out = Path(args.out)
    out.write_text(json.dumps(ds.split_to_dict(split), separators=(",", ":")) + "\n", encoding="utf-8")
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "split",
        {"map": args.map, "train_fraction": args.train_fraction, "seed": seed},
        [out],
    )
    return 0


def _cmd_gen_pretrain(args) -> int:
    seed = _resolve_seed(args.seed)
    registry = load_registry(args.map_registry)
    out = Path(args.out)
    stats = ds.write_pretrain_corpus(
        registry,
        out,
        n_walks=args.walks,
        min_len=args.min_len,
        max_len=args.max_len,
        seed=seed,
        nodes_only=args.nodes_only,
        sft_length_max=args.sft_lmax,
    )
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gen-pretrain",
        {
            "map_registry": args.map_registry,
            "walks": args.walks,
            "min_len": args.min_len,
            "max_len": args.max_len,
            "nodes_only": args.nodes_only,
            "sft_lmax": args.sft_lmax,
            "seed": seed,
        },
        [out],
        {"corpus": stats},
    )
    return 0


def _cmd_gen_sft(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = read_map_file(args.map)
    split = _load_split(args.split)
    spec = ds.DatasetSpec(
        map_id=grid.map_id,
        budget_fraction=args.budget,
        coverage=args.coverage,
        diversity=args.diversity,
        answers_per_question=args.answers,
        length_min=args.lmin,
        length_max=args.lmax,
        allocation=args.mode,
        seed=seed,
    )
    records, manifest = ds.build_sft_dataset(grid, split, spec)
    out = Path(args.out)
    ds.write_dataset(records, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gen-sft",
        {"map": args.map, "split": args.split, **spec.to_dict()},
        [out],
        {"dataset": manifest.to_dict()},
    )
    return 0


def _cmd_augment_length(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = read_map_file(args.map)
    split = _load_split(args.split)
    registry = MapRegistry([grid])
    records = [ds.decode_record(line, registry) for line in ds.read_dataset_lines(args.infile)]
    targets = [int(t) for t in args.targets.split(",") if t.strip()]
    augmented = ds.augment_with_length(records, grid, split, targets, args.fraction, seed)
    out = Path(args.out)
    ds.write_dataset(augmented, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "augment-length",
        {
            "map": args.map,
            "split": args.split,
            "in": args.infile,
            "targets": targets,
            "fraction": args.fraction,
            "seed": seed,
        },
        [out],
        {"base_records": len(records), "records": len(augmented)},
    )
    return 0


def _cmd_build_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = read_map_file(args.map)
    nodes = None
    if args.nodes == "holdout":
        if not args.split:
            raise SoplabError("--nodes holdout requires --split")
        nodes = _load_split(args.split).holdout_nodes(grid)
    exclude = None
    if args.exclude:
        pairs = ds.support_pairs(ds.read_dataset_lines(args.exclude))
        exclude = {
            (grid.node_by_token(a).uid, grid.node_by_token(b).uid) for a, b in pairs
        }
    sets = ds.build_eval_sets(
        grid,
        _group_arg(args.groups),
        args.n,
        seed,
        nodes=nodes,
        exclude=exclude,
    )
    out = Path(args.out)
    ds.write_eval_sets(sets, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "build-eval",
        {
            "map": args.map,
            "split": args.split,
            "groups": args.groups,
            "n": args.n,
            "nodes": args.nodes,
            "exclude": args.exclude,
            "seed": seed,
        },
        [out],
        {"eligible": {ev.group_label(g): n for g, n in sets.eligible.items()},
         "shortfalls": {ev.group_label(g): n for g, n in sets.shortfalls().items()}},
    )
    return 0


def _cmd_verify(args) -> int:
    registry = load_registry(args.map_registry)
    with open(args.infile, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    cache = DistanceCache(enabled=not args.no_cache)
    groups = _group_arg(args.groups) if args.groups else None
    rows, summary = batch_verify(
        registry, lines, groups=groups, fold_malformed=args.fold_malformed,
        dist_lookup=cache.lookup,
    )
    out = Path(args.out)
    write_results(rows, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "verify",
        {
            "map_registry": args.map_registry,
            "in": args.infile,
            "groups": args.groups,
            "fold_malformed": args.fold_malformed,
        },
        [out],
        {"summary": summary},
    )
    return 0


def _cmd_serve(args) -> int:
    registry = load_registry(args.map_registry)
    cache = DistanceCache(maxsize=args.cache_size, enabled=not args.no_cache)
    if args.stdio:
        serve_stdio(registry, cache)
    else:
        serve_tcp(registry, args.host, args.port, cache)
    return 0


def _cmd_eval(args) -> int:
    rows = read_results(args.results)
    groups = _group_arg(args.groups)
    sr = ev.success_rate(rows, groups)
    errors = ev.error_distribution(rows, groups, fold_malformed=args.fold_malformed)
    report = {
        "results": args.results,
        "groups": [
            {
                "group": ev.group_label(g),
                "n": sr[g]["n"],
                "sr": sr[g]["sr"],
                "counts": errors[g]["counts"],
            }
            for g in groups
        ],
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        _write_manifest(
            out.with_suffix(out.suffix + ".manifest.json"),
            "eval",
            {"results": args.results, "groups": args.groups, "fold_malformed": args.fold_malformed},
            [out],
        )
    else:
        sys.stdout.write(text)
    return 0


def _cmd_decompose(args) -> int:
    seed = _resolve_seed(args.seed)
    grid = read_map_file(args.map)
    registry = MapRegistry([grid])
    queries = []
    for query, group in ds.read_eval_sets(args.queries, registry):
        queries.append((query, group))
    triplets, skipped = ev.make_decomposition_queries(grid, queries, seed, args.lmax)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for t in triplets:
            lo, hi = t.group if t.group else ("", "")
            fh.write(
                f"{t.long.map_id}\t{t.long.start.token}\t{t.split_token}\t{t.long.end.token}\t{lo}\t{hi}\n"
            )
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "decompose",
        {"map": args.map, "queries": args.queries, "lmax": args.lmax, "seed": seed},
        [out],
        {"triplets": len(triplets), "skipped": len(skipped)},
    )
    return 0


def _cmd_select(args) -> int:
    registry = load_registry(args.map_registry) if args.map_registry else None
    out = Path(args.out)
    n = 0
    with open(args.candidates, encoding="utf-8") as fh, out.open("w", encoding="utf-8") as sink:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            query = obj["query"]
            candidates = obj["candidates"]
            valid = None
            if args.valid_only:
                if registry is None:
                    raise SoplabError("--valid-only requires --map-registry")
                grid = registry.map_by_id(query["map_id"])
                q = PathQuery(
                    query["map_id"],
                    grid.node_by_token(query["start"]),
                    grid.node_by_token(query["end"]),
                )
                from .verifier import VerificationClass, verify_completion

                valid = []
                for cand in candidates:
                    outcome = verify_completion(grid, q, cand).outcome
                    valid.append(
                        outcome in (VerificationClass.SUCCESS, VerificationClass.NON_SHORTEST)
                    )
            idx = ev.select_candidates(candidates, args.strategy, valid)
            sink.write(
                f"{query['map_id']}\t{query['start']}\t{query['end']}\t{candidates[idx]}\n"
            )
            n += 1
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "select",
        {
            "candidates": args.candidates,
            "strategy": args.strategy,
            "valid_only": args.valid_only,
            "map_registry": args.map_registry,
        },
        [out],
        {"queries": n},
    )
    return 0


def _read_outcomes(path: str) -> list[ev.OutcomeRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                ev.OutcomeRow(
                    long_ok=row["long_ok"] in ("1", "True", "true"),
                    sub1_ok=row["sub1_ok"] in ("1", "True", "true"),
                    sub2_ok=row["sub2_ok"] in ("1", "True", "true"),
                    group=(int(row["group_lo"]), int(row["group_hi"])),
                )
            )
    return rows


def _cmd_report(args) -> int:
    from . import figures

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = read_results(args.results)
    groups = _group_arg(args.groups)
    sr = ev.success_rate(rows, groups)
    errors = ev.error_distribution(rows, groups, fold_malformed=args.fold_malformed)

    outputs = []

    sr_csv = outdir / "sr_by_group.csv"
    with sr_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length_group", "method", "n", "sr"])
        for g in groups:
            writer.writerow(
                [ev.group_label(g), args.label, sr[g]["n"],
                 "no-data" if sr[g]["sr"] is None else f"{sr[g]['sr']:.6f}"]
            )
    outputs.append(sr_csv)

    err_csv = outdir / "error_distribution.csv"
    error_classes = list(next(iter(errors.values()))["error_share"]) if errors else []
    with err_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length_group", "method"] + error_classes)
        for g in groups:
            shares = errors[g]["error_share"]
            writer.writerow(
                [ev.group_label(g), args.label]
                + [
                    "no-data" if shares[c] is None else f"{100 * shares[c]:.1f}%"
                    for c in error_classes
                ]
            )
    outputs.append(err_csv)

    figures.plot_success_rates(sr, outdir / "sr_by_group.png")
    figures.plot_error_distribution(errors, outdir / "error_distribution.png")
    outputs += [outdir / "sr_by_group.png", outdir / "error_distribution.png"]

    report = {
        "label": args.label,
        "results": args.results,
        "sr": {ev.group_label(g): sr[g] for g in groups},
        "errors": {ev.group_label(g): errors[g] for g in groups},
    }

    if args.outcomes:
        outcome_rows = _read_outcomes(args.outcomes)
        stats = ev.decomposition_stats(outcome_rows)
        decomp_csv = outdir / "decomposition.csv"
        metrics = ["p_long", "p_sub", "p_both", "p_long_given_both", "p_long_not_both"]
        with decomp_csv.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric"] + [ev.group_label(g) for g in sorted(stats)])
            for metric in metrics:
                writer.writerow(
                    [metric]
                    + [
                        "no-data" if stats[g][metric] is None else f"{stats[g][metric]:.3f}"
                        for g in sorted(stats)
                    ]
                )
        outputs.append(decomp_csv)
        figures.plot_decomposition(stats, outdir / "decomposition.png")
        outputs.append(outdir / "decomposition.png")
        report["decomposition"] = {
            ev.group_label(g): stats[g] for g in sorted(stats)
        }

    report_json = outdir / "report.json"
    report_json.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(report_json)

    _write_manifest(
        outdir / "manifest.json",
        "report",
        {
            "results": args.results,
            "groups": args.groups,
            "outcomes": args.outcomes,
            "label": args.label,
            "fold_malformed": args.fold_malformed,
        },
        outputs,
    )
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soplab",
        description="Grid-map planning testbed: maps, datasets, oracle verification, reward service, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="generate a seeded sparse grid map")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--map-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_map)

    p = sub.add_parser("registry", help="assemble a registry file from map files")
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_registry)

    p = sub.add_parser("split", help="split a map's nodes into train/holdout")
    p.add_argument("--map", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("gen-pretrain", help="write a random-walk pretraining corpus")
    p.add_argument("--map-registry", required=True)
    p.add_argument("--walks", type=int, required=True)
    p.add_argument("--min-len", type=int, default=64)
    p.add_argument("--max-len", type=int, default=96)
    p.add_argument("--nodes-only", action="store_true")
    p.add_argument("--sft-lmax", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_pretrain)

    p = sub.add_parser("gen-sft", help="build an SFT dataset under budget/coverage/diversity controls")
    p.add_argument("--map", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--coverage", type=float, required=True)
    p.add_argument("--diversity", type=int, required=True)
    p.add_argument("--answers", type=int, default=1)
    p.add_argument("--lmin", type=int, default=1)
    p.add_argument("--lmax", type=int, default=20)
    p.add_argument("--mode", choices=ds.ALLOCATION_MODES, default="questions-first")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_sft)

    p = sub.add_parser("augment-length", help="append exact-length records to a dataset")
    p.add_argument("--map", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--targets", required=True, help="comma-separated exact lengths, e.g. 32,34")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_augment_length)

    p = sub.add_parser("build-eval", help="sample grouped evaluation query sets")
    p.add_argument("--map", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--groups", required=True, help='half-open intervals, e.g. "20-30,30-40"')
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--nodes", choices=("holdout", "all"), default="all")
    p.add_argument("--exclude", default=None, help="dataset file whose support is excluded")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_eval)

    p = sub.add_parser("verify", help="classify completions against the oracle")
    p.add_argument("--map-registry", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--groups", default=None)
    p.add_argument("--fold-malformed", action="store_true")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("serve", help="run the reward service")
    p.add_argument("--map-registry", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7707)
    p.add_argument("--stdio", action="store_true")
    p.add_argument("--cache-size", type=int, default=4096)
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("eval", help="success rates per length group from results")
    p.add_argument("--results", required=True)
    p.add_argument("--groups", required=True)
    p.add_argument("--fold-malformed", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("decompose", help="derive sub-queries by splitting long queries")
    p.add_argument("--map", required=True)
    p.add_argument("--queries", required=True, help="eval-set TSV of long queries")
    p.add_argument("--lmax", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("select", help="pick one completion per query from candidate files")
    p.add_argument("--candidates", required=True)
    p.add_argument("--strategy", choices=ev.SELECTION_STRATEGIES, required=True)
    p.add_argument("--valid-only", action="store_true")
    p.add_argument("--map-registry", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("report", help="render report JSON, CSV tables, and figures")
    p.add_argument("--results", required=True)
    p.add_argument("--groups", required=True)
    p.add_argument("--outcomes", default=None, help="decomposition outcome CSV")
    p.add_argument("--label", default="model")
    p.add_argument("--fold-malformed", action="store_true")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SoplabError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "OSError", "message": str(exc)}) + "\n")
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
