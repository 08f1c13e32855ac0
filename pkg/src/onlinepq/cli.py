"""Command-line entry point: ``onlinepq <command> [flags]``.

Data goes to stdout (or ``--out`` files); diagnostics, including the
effective-config line that replays a run, go to stderr. Usage and
configuration errors exit with status 1; I/O and file-format errors with 2.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .core import InvariantError, OnlinePQError, PQConfig
from .io import (AS_IS, DISJOINT, HALF_OVERLAP, FormatError, STORE_HEADER, load_codebook, load_store,
                 read_csv, read_fvecs, save_codebook, save_store, stream_groups)
from .online import UpdateBudget, update_minibatch
from .search import CodeStore, encode_batch, query, recall_at_R
from .trainer import TrainConfig, train_codebook


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_vectors(path, fmt, limit=None, label=False):
    if fmt == "fvecs":
        return read_fvecs(path, limit), None
    return read_csv(path, limit, label=label)


def config_line(args) -> str:
    """Render every resolved option (defaults included) as a replayable command."""
    parts = ["onlinepq", args.command]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func") or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        parts.append(flag if value is True else f"{flag} {shlex.quote(str(value))}")
    return " ".join(parts)


def _train_cfg(args):
    return TrainConfig(max_iterations=args.max_iters, rel_tol=args.tol, seed=args.seed)


@contextlib.contextmanager
def _locked(path):
    with open(f"{path}.lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def cmd_train(args):
    X, _ = _load_vectors(args.input, args.format)
    if X.shape[0] == 0:
        raise UsageError("input contains no vectors")
    cfg = PQConfig(X.shape[1], args.m, args.k)
    codebook = train_codebook(X, cfg, _train_cfg(args))
    codes = encode_batch(codebook, X)
    store = CodeStore(cfg)
    store.append(np.arange(X.shape[0]), codes)
    recon = codebook.codewords[np.arange(cfg.M)[None, :], codes].reshape(X.shape)
    err = float(np.square(X - recon).sum(axis=1).mean())
    save_codebook(codebook, args.out_codebook)
    save_store(store, args.out_store)
    print(f"D={cfg.D}")
    print(f"M={cfg.M}")
    print(f"K={cfg.K}")
    print(f"bits_per_code={cfg.bits_per_code}")
    print(f"train_error={err!r}")


def cmd_update(args):
    budget = UpdateBudget.parse(args.budget)
    with _locked(args.store):
        codebook = load_codebook(args.codebook)
        store = load_store(args.store)
        if store.config != codebook.config:
            raise UsageError(f"store config {store.config} does not match codebook {codebook.config}")
        X, _ = _load_vectors(args.input, args.format)
        if X.shape[0] and X.shape[1] != codebook.config.D:
            raise UsageError(f"input has D={X.shape[1]}, codebook expects D={codebook.config.D}")
        next_id = int(store.ids[-1]) + 1 if len(store) else 0
        batch = args.batch or max(1, X.shape[0])
        print("batch,size,update_seconds" + (",updated_subspaces,updated_cells" if args.verbose else ""))
        for b, s in enumerate(range(0, X.shape[0], batch)):
            chunk = X[s:s + batch]
            start = time.perf_counter()
            report = update_minibatch(codebook, chunk, budget)
            store.append(np.arange(next_id, next_id + chunk.shape[0]), report.codes)
            elapsed = time.perf_counter() - start
            next_id += chunk.shape[0]
            line = f"{b},{chunk.shape[0]},{elapsed!r}"
            if args.verbose:
                line += f",{len(report.updated_subspaces)},{int(report.updated.sum())}"
            print(line)
        save_codebook(codebook, args.codebook)
        save_store(store, args.store)


def _read_ground_truth(path):
    ids = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            ids.append(int(line.split(",")[0]))
    return ids


def cmd_query(args):
    codebook = load_codebook(args.codebook)
    store = load_store(args.store)
    Q, _ = _load_vectors(args.queries, args.format)
    if Q.shape[0] and Q.shape[1] != codebook.config.D:
        raise UsageError(f"queries have D={Q.shape[1]}, codebook expects D={codebook.config.D}")
    truth = _read_ground_truth(args.ground_truth) if args.ground_truth else None
    if truth is not None and len(truth) != Q.shape[0]:
        raise UsageError(f"{len(truth)} ground-truth ids for {Q.shape[0]} queries")
    results = []
    if len(store):
        print("query,rank,id,distance")
    for qi, q in enumerate(Q):
        hits = query(store, codebook, q, args.r)
        results.append([i for i, _ in hits])
        for rank, (id_, dist) in enumerate(hits):
            print(f"{qi},{rank},{id_},{dist!r}")
    if truth is not None and Q.shape[0]:
        print(f"recall@{args.r}={recall_at_R(results, truth, args.r)!r}")


def _stream_data(args):
    if args.input:
        X, labels = _load_vectors(args.input, args.format, args.limit,
                                  label=args.format == "csv" and args.order != AS_IS and not args.labels)
        if args.labels:
            labels = np.loadtxt(args.labels, dtype=np.int64, ndmin=1)[: X.shape[0]]
    else:
        n, D, clusters = (int(v) for v in args.synthetic.split(","))
        X, labels = harness.gen_gaussian_mixture(n, D, clusters, args.seed, args.separation)
    return X, labels


def _protocol_cfg(args, D):
    return harness.ProtocolConfig(
        pq=PQConfig(D, args.m, args.k),
        train_cfg=_train_cfg(args),
        budget=UpdateBudget.parse(args.budget),
        groups=args.groups,
        query_policy=args.query_policy,
        R=args.r,
        seed=args.seed,
        update_batch=args.batch,
        window=getattr(args, "window", None),
        deletion=not getattr(args, "no_deletion", False),
    )


def _emit_records(records, out):
    if out:
        harness.write_records_csv(records, out)
    else:
        harness.write_records_csv(records, sys.stdout)
    recalls = [r.recall for r in records]
    mean = float(np.mean(recalls)) if recalls else float("nan")
    print(f"# iterations={len(records)} mean_recall={mean!r} "
          f"total_update_seconds={sum(r.update_seconds for r in records)!r}")


def _simulate(args, windowed):
    X, labels = _stream_data(args)
    cfg = _protocol_cfg(args, X.shape[1])
    groups = [X[g] for g in stream_groups(X.shape[0], args.groups, args.order, labels, args.seed)]
    run = harness.run_window_protocol if windowed else harness.run_dynamic_protocol
    _emit_records(run(groups, cfg).records, args.out)


def cmd_simulate(args):
    _simulate(args, windowed=False)


def cmd_window_simulate(args):
    _simulate(args, windowed=True)


def cmd_convergence(args):
    X, _ = _stream_data(args)
    cfg = _protocol_cfg(args, X.shape[1])
    result = harness.run_convergence(X, args.passes, cfg, args.init_size)
    lines = ["pass,mean_qe"] + [f"{i},{e!r}" for i, e in enumerate(result.pass_errors, start=1)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"# initial_error={result.initial_error!r} final_error={result.pass_errors[-1]!r} "
          f"batch_error={result.batch_error!r}")


def cmd_stats(args):
    if not args.codebook and not args.store:
        raise UsageError("stats needs --codebook and/or --store")
    if args.codebook:
        cfg = load_codebook(args.codebook).config
        print(f"D={cfg.D}")
        print(f"M={cfg.M}")
        print(f"K={cfg.K}")
        print(f"bits_per_code={cfg.bits_per_code}")
    if args.store:
        store = load_store(args.store)
        for key, value in store.stats().items():
            if not args.codebook or key not in ("D", "M", "K", "bits_per_code"):
                print(f"{key}={value}")
        print(f"header_bytes={STORE_HEADER.size}")
        print(f"file_bytes={Path(args.store).stat().st_size}")


def _add_train_flags(p):
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)


def _add_stream_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="vector file")
    src.add_argument("--synthetic", metavar="N,D,CLUSTERS", help="Gaussian mixture instead of a file")
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
    p.add_argument("--limit", type=int)
    p.add_argument("--labels", help="file with one integer class label per line")
    p.add_argument("--order", choices=(AS_IS, HALF_OVERLAP, DISJOINT), default=AS_IS)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--groups", type=int, default=12)
    p.add_argument("--budget", default="full")
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--query-policy", choices=(harness.DYNAMIC, harness.FIXED), default=harness.DYNAMIC)
    p.add_argument("--batch", type=int, help="mini-batch size within a group (1 = streaming)")
    p.add_argument("--out", help="write the per-iteration csv here instead of stdout")
    _add_train_flags(p)


def build_parser():
    parser = _Parser(prog="onlinepq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a codebook and encode the input")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-codebook", required=True)
    p.add_argument("--out-store", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("update", help="fold new vectors into an existing index")
    p.add_argument("--codebook", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
    p.add_argument("--batch", type=int)
    p.add_argument("--budget", default="full")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("query", help="top-R search by asymmetric distance")
    p.add_argument("--codebook", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--ground-truth", help="one true nearest-neighbour id per line")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("simulate", help="dynamic-database protocol")
    _add_stream_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("window-simulate", help="sliding-window protocol")
    _add_stream_flags(p)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--no-deletion", action="store_true", help="keep expired contributions in the codebook")
    p.set_defaults(func=cmd_window_simulate)

    p = sub.add_parser("convergence", help="repeated online passes vs batch training")
    _add_stream_flags(p)
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--init-size", type=int)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("stats", help="describe a codebook and/or store")
    p.add_argument("--codebook")
    p.add_argument("--store")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    print(f"# config: {config_line(args)}", file=sys.stderr)
    try:
        args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, FormatError) as exc:
        print(f"onlinepq: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"onlinepq: error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, InvariantError, OnlinePQError, ValueError) as exc:
        print(f"onlinepq: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
