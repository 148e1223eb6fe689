"""Command-line front end: ``compress``, ``verify``, ``analyze`` and ``report``.

Exit codes: 0 success, 1 verification failed, 2 domain error (infeasible
configuration, unknown layer, mismatched layer sets), 3 input or parse error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import DomainError, InputError, PreconditionError
from .layermodel import CONV, LayerMatrix, LayerTensor, chunk_layer, flatten_layer, group_layers
from .metrics import apply_compressed, build_report, find_correspondences, output_error, reconstruction_error, render_table
from .solver import MODES, SIGNS, COMMON_UPDATES, Decomposition, SolverConfig, decompose
from .storage import (
    decomposition_entries,
    decompositions_from_entries,
    layers_from_entries,
    load_container,
    load_report,
    save_container,
    save_report,
)

log = logging.getLogger("xlcompress")

EXIT_OK, EXIT_FAIL, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2, 3

# option name -> (type, default); defaults shared by flags and config files
COMPRESS_OPTIONS = {
    "mode": (str, "micik"),
    "data_term": (str, "auto"),
    "eta": (float, 0.0),
    "lambda2": (float, 0.13),
    "lambda_theta": (float, 1e-3),
    "similarity_sign": (str, "attract"),
    "rank": (int, 1),
    "common_ratio": (float, 0.5),
    "card": (int, 0),
    "epochs": (int, 20),
    "delta_m": (int, 1),
    "enforce_cardinality": (bool, True),
    "seed": (int, 0),
    "max_group": (int, 4),
    "common_update": (str, "carry"),
}

VERIFY_TOL = 1e-12
PROBE_TOL = 1e-10


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys are allowed."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in COMPRESS_OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        kind = COMPRESS_OPTIONS[key][0]
        try:
            out[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xlcompress", description="Cross-layer low-rank + sparse weight compression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", help="decompose every layer of a model container")
    c.add_argument("--in", dest="input", required=True, help="model container (.mcwb)")
    c.add_argument("--out", required=True, help="output stem; writes <out>.mcwb and <out>.report.json")
    c.add_argument("--config", help="key = value file; flags override it")
    c.add_argument("--mode", choices=MODES, help="default micik")
    c.add_argument("--data-term", choices=("auto", "calibration", "weight_only"),
                   help="auto uses calibration pairs when the container has them")
    c.add_argument("--eta", type=float, help="lambda = 10^eta * E_max(X X^T / s); default 0")
    c.add_argument("--lambda2", type=float, help="sparsity weight; default 0.13")
    c.add_argument("--lambda-theta", type=float, help="similarity weight; default 1e-3")
    c.add_argument("--similarity-sign", choices=SIGNS, help="default attract")
    c.add_argument("--rank", type=int, help="total rank m per layer; default 1")
    c.add_argument("--common-ratio", type=float, help="share of the rank held in common; default 0.5")
    c.add_argument("--card", type=int, help="nonzeros allowed in S per layer; default 0")
    c.add_argument("--epochs", type=int, help="default 20")
    c.add_argument("--delta-m", type=int, help="rank growth per epoch; default 1")
    c.add_argument("--no-enforce-cardinality", dest="enforce_cardinality", action="store_const",
                   const=False, help="keep every soft-thresholded entry of S")
    c.add_argument("--seed", type=int, help="default 0")
    c.add_argument("--max-group", type=int, help="largest layer group; default 4")
    c.add_argument("--common-update", choices=COMMON_UPDATES, help="default carry")

    v = sub.add_parser("verify", help="check a decomposition against its model")
    v.add_argument("decomposition", help="decomposition container written by compress")
    v.add_argument("model", help="original model container")
    v.add_argument("--report", help="report to check against (default <stem>.report.json)")
    v.add_argument("--probes", type=int, default=16, help="random inputs per layer for the inference check")
    v.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("analyze", help="mutual nearest filters between two layers")
    a.add_argument("model", help="model container")
    a.add_argument("layer_a")
    a.add_argument("layer_b")
    a.add_argument("--top", type=int, default=100, help="rows to emit (default 100)")
    a.add_argument("--out", help="CSV file (default standard output)")

    r = sub.add_parser("report", help="render a report as a table")
    r.add_argument("path")
    return p


def resolve_options(args) -> dict:
    opts = {k: default for k, (_, default) in COMPRESS_OPTIONS.items()}
    if args.config:
        opts.update(read_config_file(args.config))
    for key in COMPRESS_OPTIONS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _load_model(path):
    try:
        entries = load_container(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    try:
        return layers_from_entries(entries)
    except (DomainError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _stem(path: str) -> str:
    return path[:-5] if path.endswith(".mcwb") else path


def cmd_compress(args) -> int:
    opts = resolve_options(args)
    layers, calibration = _load_model(args.input)
    if not layers:
        raise UsageError(f"{args.input}: no '<layer>.W' entries")
    data_term = opts["data_term"]
    if data_term == "auto":
        data_term = "calibration" if calibration else "weight_only"
    if opts["max_group"] < 1:
        raise PreconditionError("max_group must be at least 1")
    config = SolverConfig(
        mode=opts["mode"], data_term=data_term, eta=opts["eta"], lambda2=opts["lambda2"],
        lambda_theta=opts["lambda_theta"], similarity_sign=opts["similarity_sign"], rank=opts["rank"],
        common_ratio=opts["common_ratio"], card=opts["card"], epochs=opts["epochs"],
        delta_m=opts["delta_m"], enforce_cardinality=opts["enforce_cardinality"], seed=opts["seed"],
        common_update=opts["common_update"],
    )
    max_group = 1 if config.mode == "single" else opts["max_group"]
    groups = group_layers(layers, max_group, calibration if data_term == "calibration" else None)
    results = []
    for gi, group in enumerate(groups):
        log.info("group %d/%d: %s (p=%d)", gi + 1, len(groups), ", ".join(group.names), group.p)
        results.append(decompose(group, config))
    echo = config.to_dict()
    echo["max_group"] = opts["max_group"]
    report = build_report(groups, results, echo)
    stem = _stem(args.out)
    save_container(stem + ".mcwb", decomposition_entries(results))
    save_report(stem + ".report.json", report)
    log.info("wrote %s.mcwb and %s.report.json (total rate %.3fX)", stem, stem, report.totals.rate)
    return EXIT_OK


def layer_matrix(t: LayerTensor, p: int) -> LayerMatrix:
    """Matrix view of ``t`` with ``p`` columns, chunking conv filters as needed."""
    m = flatten_layer(t)
    if m.W.shape[1] == p:
        return m
    if t.kind != CONV or p % (t.receptive_field**2):
        raise PreconditionError(f"{t.name}: no matrix view with {p} columns for shape {t.shape}")
    return chunk_layer(m, p // t.receptive_field**2)


def _close(a: Optional[float], b: Optional[float]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= VERIFY_TOL * max(1.0, abs(b))


def _check_layer(t: LayerTensor, d: Decomposition, calib, row, budgets, rng, probes) -> list[str]:
    problems = []
    n, p = d.shape
    if d.U.shape[1] != d.V.shape[0]:
        return [f"U has {d.U.shape[1]} columns but V has {d.V.shape[0]} rows"]
    try:
        m = layer_matrix(t, p)
    except PreconditionError as exc:
        return [str(exc)]
    if m.W.shape != d.shape:
        return [f"factor shape {d.shape} does not match layer matrix {m.W.shape}"]
    rank_budget, card_budget = budgets
    if rank_budget is not None and d.rank > rank_budget:
        problems.append(f"rank {d.rank} exceeds budget {rank_budget}")
    if card_budget is not None and d.card > card_budget:
        problems.append(f"card {d.card} exceeds budget {card_budget}")
    recon = reconstruction_error(m.W, d)
    out_err = None
    if calib is not None and m.chunk_factor == 1:
        out_err = output_error(calib[0], calib[1], d)
    if row is not None:
        if not _close(recon, row.recon_error):
            problems.append(f"recon_error {recon:.17g} differs from report {row.recon_error!r}")
        if row.output_error is not None and not _close(out_err, row.output_error):
            problems.append(f"output_error {out_err!r} differs from report {row.output_error!r}")
    dense = d.dense()
    for _ in range(probes):
        x = rng.standard_normal(p)
        ref = dense @ x
        got = apply_compressed(d, x)
        scale = max(float(np.linalg.norm(ref)), np.finfo(float).tiny)
        if float(np.linalg.norm(got - ref)) > PROBE_TOL * scale:
            problems.append("apply_compressed disagrees with the dense product")
            break
    log.info("%s: recon_error %.6g%s", t.name, recon, "" if out_err is None else f", output_error {out_err:.6g}")
    return problems


def _budget(value, enforced=True) -> Optional[int]:
    return int(value) if isinstance(value, int) and not isinstance(value, bool) and enforced else None


def cmd_verify(args) -> int:
    try:
        entries = load_container(args.decomposition)
    except OSError as exc:
        raise UsageError(f"cannot read {args.decomposition}: {exc}") from None
    decomps = decompositions_from_entries(entries)
    layers, calibration = _load_model(args.model)
    names_model = {t.name for t in layers}
    if set(decomps) != names_model:
        only_d = sorted(set(decomps) - names_model)
        only_m = sorted(names_model - set(decomps))
        raise PreconditionError(
            f"layer sets differ: only in decomposition {only_d}, only in model {only_m}"
        )

    report_path = args.report or _stem(args.decomposition) + ".report.json"
    report = None
    if args.report or Path(report_path).exists():
        report = load_report(report_path)
    rows = {r.name: r for r in report.per_layer} if report else {}
    cfg = report.config if report else {}
    budgets = (_budget(cfg.get("rank")), _budget(cfg.get("card"), cfg.get("enforce_cardinality", True)))
    if report and set(rows) != names_model:
        raise PreconditionError("report rows do not match the model's layers")

    rng = np.random.default_rng(args.seed)
    failed = 0
    for t in layers:
        problems = _check_layer(t, decomps[t.name], calibration.get(t.name), rows.get(t.name), budgets, rng, args.probes)
        if problems:
            failed += 1
            for msg in problems:
                print(f"FAIL {t.name}: {msg}")
        else:
            print(f"PASS {t.name}")
    print(f"{len(layers) - failed}/{len(layers)} layers passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_analyze(args) -> int:
    if args.top < 0:
        raise PreconditionError("--top must be nonnegative")
    layers, _ = _load_model(args.model)
    by_name = {t.name: t for t in layers}
    for name in (args.layer_a, args.layer_b):
        if name not in by_name:
            raise PreconditionError(f"unknown layer {name!r}; known: {sorted(by_name)}")
    pairs = find_correspondences(by_name[args.layer_a], by_name[args.layer_b])
    shown = pairs[: args.top]
    handle = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index_a", "index_b", "distance"])
        for i, j, dist in shown:
            writer.writerow([i, j, format(dist, ".17g")])
    finally:
        if args.out:
            handle.close()
    dists = np.array([d for _, _, d in shown])
    if len(dists):
        print(
            f"{len(pairs)} mutual pairs, {len(shown)} shown; distance min {dists.min():.6g} "
            f"mean {dists.mean():.6g} max {dists.max():.6g}",
            file=sys.stderr,
        )
    else:
        print(f"{len(pairs)} mutual pairs", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    print(render_table(load_report(args.path)))
    return EXIT_OK


COMMANDS = {"compress": cmd_compress, "verify": cmd_verify, "analyze": cmd_analyze, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
