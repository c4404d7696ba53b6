"""Command-line front end: ``dictanneal {gen,train,encode,eval,stats,update}``.

Exit codes: 0 ok, 1 usage/config error, 2 I/O or file-format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import codebook as cbm
from .encoder import METHODS, encode, encode_dataset, pq_slices
from .errors import FormatError
from .search import adc_search, ground_truth, recall_at_r, write_results_csv
from .trainers import DAConfig, TrainReport, online_update, train_da, train_darvq, train_pq, train_rvq
from .vecio import (
    check_ground_truth,
    gen_synthetic,
    read_ivecs,
    read_vectors,
    split_train_query,
    write_fvecs,
    write_ivecs,
)

log = logging.getLogger("dictanneal")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
RECALL_GRID = tuple(2**i for i in range(10))  # 1 .. 512


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def resolve_input(path: str) -> Path:
    """Find an input file, falling back to ``$ANN_DATA_DIR`` for relative paths."""
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("ANN_DATA_DIR")
    if root and not p.is_absolute() and (Path(root) / p).exists():
        return Path(root) / p
    raise FileNotFoundError(f"input file not found: {path}")


def _prepare_out(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _da_config(args) -> DAConfig:
    try:
        return DAConfig(iters=args.iters, beam_width=args.beam, subspace_steps=args.subspace_steps,
                        seed=args.seed, quit_tol=args.quit_tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_mk(args, n=None, d=None):
    if args.m < 1:
        raise UsageError("--m must be >= 1")
    if not 1 <= args.k <= 256:
        raise UsageError("--k must be in [1, 256] (codes are stored as single bytes)")
    if n is not None and args.k > n:
        raise UsageError(f"--k {args.k} exceeds the number of training vectors ({n})")


# --------------------------------------------------------------------------
# commands


def cmd_gen(args):
    if args.n_train + args.n_query > args.n:
        raise UsageError("--n-train + --n-query exceeds --n")
    data = gen_synthetic(args.n, args.d, args.components, args.seed)
    out = Path(args.out_dir)
    if args.query_mode == "heldout":
        train, base, query, _ = split_train_query(data, args.n_train, args.n_query, args.seed)
    else:
        train, base, _, _ = split_train_query(data, args.n_train, 0, args.seed)
        pick = np.random.default_rng([args.seed, 7]).choice(base.shape[0], args.n_query, replace=False)
        query = base[np.sort(pick)]
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(train, out / "train.fvecs")
    write_fvecs(base, out / "base.fvecs")
    write_fvecs(query, out / "query.fvecs")
    print(f"wrote {train.shape[0]} train, {base.shape[0]} base, {query.shape[0]} query vectors (d={args.d}) to {out}")


def cmd_train(args):
    train = read_vectors(resolve_input(args.train))
    _check_mk(args, n=train.shape[0])
    if train.shape[0] == 0:
        raise UsageError("training set is empty")
    init = cbm.load_codebook(resolve_input(args.init)) if args.init else None
    if init is not None and (args.method != "da" or init.d != train.shape[1]):
        raise UsageError("--init needs --method da and a codebook matching the training dimension")
    if args.method == "pq" and train.shape[1] % args.m:
        raise UsageError(f"pq needs d ({train.shape[1]}) divisible by --m ({args.m})")
    config = _da_config(args)
    out = _prepare_out(args.out)
    report_path = _prepare_out(args.report or str(out) + ".report.jsonl")

    report = TrainReport()
    if args.method == "pq":
        cb = train_pq(train, args.m, args.k, seed=args.seed)
        codes = encode(train, cb, "pq")
    elif args.method == "rvq":
        cb, codes = train_rvq(train, args.m, args.k, seed=args.seed)
    elif args.method == "darvq":
        cb, codes = train_darvq(train, args.m, args.k, config)
    else:
        if init is None:
            log.info("no --init codebook; initializing with DARVQ")
            init, _ = train_darvq(train, args.m, args.k, config)
        cb, codes, report = train_da(train, init, config)
    if report.initial_error is None:
        err = cbm.quantization_error(train, cb, codes)
        report.initial_error = err
        report.entries.append({"iteration": 0, "error": err,
                               "entropies": [cbm.entropy(codes, m, cb.k) for m in range(cb.m)]})
    cbm.save_codebook(cb, out)
    report.write_jsonl(report_path)
    print(f"{args.method}: M={cb.m} K={cb.k} d={cb.d} train error {report.final_error:.6g} -> {out}")


def _auto_method(cb: cbm.Codebook) -> str:
    try:
        pq_slices(cb)
        return "pq"
    except ValueError:
        return "beam" if cb.is_norm_sorted else "greedy"


def cmd_encode(args):
    cb = cbm.load_codebook(resolve_input(args.codebook))
    base = read_vectors(resolve_input(args.base))
    if base.shape[0] and base.shape[1] != cb.d:
        raise UsageError(f"base dimension {base.shape[1]} does not match codebook d={cb.d}")
    if cb.k > 256:
        raise UsageError("encoded databases need K <= 256")
    method = _auto_method(cb) if args.encoder == "auto" else args.encoder
    out = _prepare_out(args.out)
    db = encode_dataset(base, cb, method, L=args.beam, n_jobs=args.threads)
    cbm.save_encoded(db, out)
    print(f"encoded {db.n} vectors with {method} -> {out}")


def _load_or_compute_gt(args, queries, base_path):
    if args.gt:
        return read_ivecs(resolve_input(args.gt))
    if base_path is None:
        raise UsageError("--gt or --base is required to evaluate recall")
    cache = Path(str(resolve_input(args.query)) + ".gt.ivecs")
    if cache.exists() and cache.stat().st_mtime >= max(base_path.stat().st_mtime, resolve_input(args.query).stat().st_mtime):
        return read_ivecs(cache)
    base = read_vectors(base_path)
    gt = ground_truth(queries, base, n_neighbors=min(100, base.shape[0]))
    write_ivecs(gt, cache)
    return gt


def cmd_eval(args):
    cb = cbm.load_codebook(resolve_input(args.codebook))
    db = cbm.load_encoded(resolve_input(args.encoded))
    queries = read_vectors(resolve_input(args.query))
    base_path = resolve_input(args.base) if args.base else None
    if db.m != cb.m or db.k != cb.k:
        raise UsageError("encoded database does not match the codebook (M or K differ)")
    if queries.shape[0] == 0 or queries.shape[1] != cb.d:
        raise UsageError("query file is empty or has the wrong dimension")
    gt = check_ground_truth(_load_or_compute_gt(args, queries, base_path), db.n)
    if gt.shape[0] != queries.shape[0]:
        raise UsageError(f"ground truth has {gt.shape[0]} rows for {queries.shape[0]} queries")
    out = _prepare_out(args.out)

    res = adc_search(queries, db, cb, max(RECALL_GRID))
    rows = [(R, recall_at_r(res, gt, R)) for R in RECALL_GRID]
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["R", "recall"])
        for R, r in rows:
            w.writerow([R, f"{r:.6f}"])
    summary = {"n_queries": int(queries.shape[0]), "n_database": db.n,
               "recall": {str(R): r for R, r in rows}}
    if base_path is not None:
        base = read_vectors(base_path)
        if base.shape[0] == db.n:
            summary["quantization_error"] = cbm.quantization_error(base, cb, db.codes)
    summary_path = _prepare_out(args.summary or str(out) + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.results:
        write_results_csv(res, _prepare_out(args.results))
    msg = " ".join(f"R@{R}={r:.3f}" for R, r in rows[:4])
    if "quantization_error" in summary:
        msg += f" error={summary['quantization_error']:.6g}"
    print(msg)


def cmd_stats(args):
    cb = cbm.load_codebook(resolve_input(args.codebook))
    sources = []
    for path in args.encoded or []:
        db = cbm.load_encoded(resolve_input(path))
        if db.m != cb.m or db.k != cb.k:
            raise UsageError(f"{path} does not match the codebook")
        sources.append((Path(path).stem, db.codes))
    method = None
    for path in args.data or []:
        data = read_vectors(resolve_input(path))
        if data.shape[0] == 0 or data.shape[1] != cb.d:
            raise UsageError(f"{path} is empty or has the wrong dimension")
        method = method or (_auto_method(cb) if args.encoder == "auto" else args.encoder)
        sources.append((Path(path).stem, encode(data, cb, method, L=args.beam, n_jobs=args.threads)))
    if not sources:
        raise UsageError("stats needs at least one --data or --encoded input")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "entropy.csv", "w", newline="") as fe, open(out / "mutual_information.csv", "w", newline="") as fm:
        we, wm = csv.writer(fe), csv.writer(fm)
        we.writerow(["source", "dictionary", "entropy_bits"])
        wm.writerow(["source", "i", "j", "mi_bits"])
        for name, codes in sources:
            mat = cbm.mi_matrix(codes)
            for m in range(cb.m):
                we.writerow([name, m, f"{cbm.entropy(codes, m, cb.k):.6f}"])
                for j in range(cb.m):
                    wm.writerow([name, m, j, f"{mat[m, j]:.6f}"])
            ents = ", ".join(f"{cbm.entropy(codes, m, cb.k):.3f}" for m in range(cb.m))
            print(f"{name}: entropy [{ents}] max MI {np.max(mat - np.diag(np.diag(mat))):.4f}")


def cmd_update(args):
    cb = cbm.load_codebook(resolve_input(args.codebook))
    data = read_vectors(resolve_input(args.data))
    if data.shape[0] == 0 or data.shape[1] != cb.d:
        raise UsageError("update data is empty or has the wrong dimension")
    if args.batch_size < cb.k:
        raise UsageError(f"--batch-size must be at least K={cb.k}")
    config = _da_config(args)
    out = _prepare_out(args.out)
    report_path = _prepare_out(args.report or str(out) + ".report.jsonl")
    starts = list(range(0, data.shape[0], args.batch_size))
    if len(starts) > 1 and data.shape[0] - starts[-1] < cb.k:
        starts.pop()  # fold a tiny tail into the previous batch
    bounds = list(zip(starts, starts[1:] + [data.shape[0]]))
    with open(report_path, "a") as f:
        for b, (lo, hi) in enumerate(bounds):
            cb, rep = online_update(cb, data[lo:hi], config)
            whole = cbm.quantization_error(data, cb, encode(data, cb, "beam", L=args.beam, n_jobs=args.threads))
            f.write(json.dumps({"batch": b, "rows": [lo, hi], "error_batch": rep.final_error,
                                "error_whole": whole, "iterations": len(rep.entries)}, sort_keys=True) + "\n")
            print(f"batch {b}: batch error {rep.final_error:.6g}, whole-data error {whole:.6g}")
    cbm.save_codebook(cb, out)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    da = argparse.ArgumentParser(add_help=False)
    da.add_argument("--beam", type=int, default=10, metavar="L", help="beam width")
    da.add_argument("--iters", type=int, default=None, help="annealing iterations (default: M)")
    da.add_argument("--subspace-steps", type=int, default=5)
    da.add_argument("--quit-tol", type=float, default=1e-4)

    p = _Parser(prog="dictanneal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic train/base/query split")
    g.add_argument("--n", type=int, default=61000)
    g.add_argument("--d", type=int, default=32)
    g.add_argument("--components", type=int, default=16)
    g.add_argument("--n-train", type=int, default=10000)
    g.add_argument("--n-query", type=int, default=1000)
    g.add_argument("--query-mode", choices=("heldout", "database"), default="heldout",
                   help="heldout: queries disjoint from the database; database: queries sampled from it")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common, da], help="learn a codebook")
    t.add_argument("--train", required=True)
    t.add_argument("--method", choices=("pq", "rvq", "da", "darvq"), default="da")
    t.add_argument("--m", type=int, default=8)
    t.add_argument("--k", type=int, default=256)
    t.add_argument("--init", help="initial codebook for --method da")
    t.add_argument("--out", required=True)
    t.add_argument("--report", help="TrainReport JSONL path (default: <out>.report.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", parents=[common, da], help="encode a database")
    e.add_argument("--codebook", required=True)
    e.add_argument("--base", required=True)
    e.add_argument("--encoder", choices=("auto",) + METHODS, default="auto")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", parents=[common], help="recall@R and quantization error")
    v.add_argument("--codebook", required=True)
    v.add_argument("--encoded", required=True)
    v.add_argument("--query", required=True)
    v.add_argument("--base", help="raw database vectors (ground truth and quantization error)")
    v.add_argument("--gt", help="ground-truth .ivecs; computed by exact scan when omitted")
    v.add_argument("--out", required=True, help="recall CSV")
    v.add_argument("--summary", help="summary JSON (default: <out>.summary.json)")
    v.add_argument("--results", help="optional per-query result CSV")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", parents=[common, da], help="dictionary entropy and mutual information")
    s.add_argument("--codebook", required=True)
    s.add_argument("--data", action="append", help="vectors to encode and analyze (repeatable)")
    s.add_argument("--encoded", action="append", help="encoded database to analyze (repeatable)")
    s.add_argument("--encoder", choices=("auto",) + METHODS, default="auto")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_stats)

    u = sub.add_parser("update", parents=[common, da], help="online annealing over batches")
    u.add_argument("--codebook", required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--batch-size", type=int, default=100000)
    u.add_argument("--out", required=True)
    u.add_argument("--report", help="JSONL to append batch records to (default: <out>.report.jsonl)")
    u.set_defaults(func=cmd_update)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        if hasattr(args, "beam") and args.beam < 1:
            raise UsageError("--beam must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(f"dictanneal {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"dictanneal {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"dictanneal {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
