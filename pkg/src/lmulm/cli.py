"""Command-line entry point: ``lmulm <command> ...``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from typing import Sequence

import numpy as np

from lmulm import costmodel, data, powerlaw
from lmulm.errors import ConfigError, LmuError
from lmulm.lmu import LmuConfig, build_lmu, impulse_response, run_fft_conv, run_rk, run_state_space
from lmulm.model import LanguageModel, ModelConfig
from lmulm.numerics.tensor import precision
from lmulm.training import TrainConfig, evaluate, load_training, train_loop, write_per_position

IO_KEYS = {"corpus", "out"}


# ---------------------------------------------------------------------------
# config files


def _convert(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if default is None:
        for cast in (int, float):
            try:
                return cast(value)
            except ValueError:
                pass
    return value


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig, dict[str, str]]:
    """Parse ``key=value`` lines into model, training and io settings.

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    """
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    mkw, tkw, io = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in model_fields:
                mkw[key] = _convert(value, model_fields[key].default)
            elif key in train_fields:
                tkw[key] = _convert(value, train_fields[key].default)
            elif key in IO_KEYS:
                io[key] = value
            else:
                known = sorted(set(model_fields) | set(train_fields) | IO_KEYS)
                raise ConfigError(f"line {lineno}: unknown key {key!r}; known keys: {', '.join(known)}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return ModelConfig(**mkw), TrainConfig(**tkw), io


def load_corpus(spec: str, n: int) -> data.PackedCorpus:
    """A file path, or ``pattern:LEN``, ``random:LEN``, ``lag:LEN[:LAG]`` for synthetic text."""
    kind, _, rest = spec.partition(":")
    if kind in ("pattern", "random", "lag") and rest:
        args = [int(v) for v in rest.split(":")]
        doc = {"pattern": data.pattern_corpus, "random": data.random_corpus, "lag": data.lag_corpus}[kind](*args)
        return data.pack_corpus([doc], n)
    if not os.path.exists(spec):
        raise ConfigError(f"corpus {spec!r} is neither a file nor a synthetic spec")
    return data.pack_corpus(data.read_documents(spec), n)


# ---------------------------------------------------------------------------
# commands


def _write_matrix(w, name: str, M: np.ndarray) -> None:
    for i, row in enumerate(np.atleast_2d(M)):
        w.writerow([name, i] + [repr(float(v)) for v in row])


def cmd_discretize(args) -> int:
    cont, disc = build_lmu(LmuConfig(args.theta, args.q))
    w = csv.writer(sys.stdout)
    w.writerow(["matrix", "row", "values..."])
    _write_matrix(w, "A_bar", disc.A_bar)
    _write_matrix(w, "B_bar", disc.B_bar.T)
    if args.n:
        _write_matrix(w, "H", impulse_response(disc, args.n).H)
    return 0


def cmd_run(args) -> int:
    X = np.loadtxt(args.input, delimiter=",", ndmin=2)
    if args.checkpoint:
        model, _, _ = load_training(args.checkpoint)
        theta, q = model.cfg.theta, model.cfg.q
    else:
        if args.theta is None or args.q is None:
            raise ConfigError("run needs --checkpoint or both --theta and --q")
        theta, q = args.theta, args.q
    with precision("f64"):
        cont, disc = build_lmu(LmuConfig(theta, q))
        if args.backend == "ss":
            M = run_state_space(disc, X)
        elif args.backend == "rk":
            M = run_rk(cont, X, r=args.r)
        else:
            M = run_fft_conv(impulse_response(disc, X.shape[0]), X)
    w = csv.writer(sys.stdout)
    n, q, d = M.shape
    w.writerow(["t"] + [f"m{i}_{c}" for i in range(q) for c in range(d)])
    for t in range(n):
        w.writerow([t] + [repr(float(v)) for v in M[t].reshape(-1)])
    return 0


def cmd_train(args) -> int:
    with open(args.config) as fh:
        mcfg, tcfg, io = parse_config(fh.read())
    if os.environ.get("LMU_PRECISION"):
        tcfg = dataclasses.replace(tcfg, precision=os.environ["LMU_PRECISION"])
    if "corpus" not in io:
        raise ConfigError("config must set corpus=")
    corpus = load_corpus(io["corpus"], mcfg.n)
    out = io.get("out", "run")
    with precision(tcfg.precision):
        model = LanguageModel(mcfg, seed=tcfg.seed)
    train_loop(model, corpus, tcfg, out_dir=out, log=print)
    print(f"wrote {out}/history.csv and {out}/checkpoint.lmuc")
    return 0


def cmd_eval(args) -> int:
    model, tcfg, _ = load_training(args.checkpoint)
    corpus = load_corpus(args.corpus, model.cfg.n)
    with precision(tcfg.precision if tcfg else "f64"):
        model.cast()
        mean, per = evaluate(model, corpus, args.max_seqs)
    print(f"mean_nats,{mean:.6f}")
    if args.out:
        write_per_position(args.out, per)
    else:
        print("position,nats")
        for i, v in enumerate(per, start=1):
            print(f"{i},{float(v):.6f}")
    return 0


def cmd_flops(args) -> int:
    cfg = costmodel.CostConfig(n=args.n, d=args.d, q=args.q, q_prime=args.qprime, d_prime=args.dprime, r=args.r)
    report = costmodel.cost_report(cfg)
    print(report.to_table())
    print()
    print(report.to_csv())
    return 0


def cmd_bench(args) -> int:
    ns, n = [], args.nmin
    while n <= args.nmax:
        ns.append(n)
        n *= 2
    backends = [b.strip() for b in args.backends.split(",")]
    report = costmodel.scaling_sweep(backends, ns, d=args.d, q=args.q, theta=args.theta)
    print(report.to_csv())
    return 0


def cmd_fit_powerlaw(args) -> int:
    pts = []
    with open(args.points, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if pts:
                    raise ConfigError(f"bad points row {row!r}")  # only a leading header may be non-numeric
    fit = powerlaw.fit_power_law(pts)
    print("N_c,alpha,residual")
    print(f"{fit.N_c:.9g},{fit.alpha:.9g},{fit.residual:.3g}")
    return 0


def cmd_reference(args) -> int:
    print(f"{powerlaw.reference_loss(args.curve, args.N, args.s_ratio):.9g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmulm", description="LMU language model toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("discretize", help="print ZOH matrices (and optionally the impulse response)")
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--n", type=int, default=0)
    s.set_defaults(func=cmd_discretize)

    s = sub.add_parser("run", help="run the LMU memory over a numeric CSV input (n rows, d columns)")
    s.add_argument("--backend", choices=("ss", "rk", "fft"), default="fft")
    s.add_argument("--checkpoint")
    s.add_argument("--input", required=True)
    s.add_argument("--theta", type=float)
    s.add_argument("--q", type=int)
    s.add_argument("--r", type=int, default=4)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("train", help="train from a key=value config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="mean and per-position loss of a checkpoint on a corpus")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s.add_argument("--max-seqs", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("flops", help="analytic vs measured per-token FLOPs for one layer")
    s.add_argument("--n", type=int, default=1024)
    s.add_argument("--d", type=int, default=64)
    s.add_argument("--q", type=int, default=250)
    s.add_argument("--qprime", type=int, default=None)
    s.add_argument("--dprime", type=int, default=None)
    s.add_argument("--r", type=int, default=4)
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("bench", help="FLOP and live-memory scaling with sequence length")
    s.add_argument("--backends", default=",".join(costmodel.BACKENDS))
    s.add_argument("--nmin", type=int, default=256)
    s.add_argument("--nmax", type=int, default=8192)
    s.add_argument("--d", type=int, default=4)
    s.add_argument("--q", type=int, default=16)
    s.add_argument("--theta", type=float, default=64.0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("fit-powerlaw", help="fit L = (N/N_c)^-alpha to a CSV of N,loss rows")
    s.add_argument("--points", required=True)
    s.set_defaults(func=cmd_fit_powerlaw)

    s = sub.add_parser("reference", help="evaluate a published reference curve")
    s.add_argument("--curve", required=True, choices=sorted(powerlaw.REFERENCE_CURVES))
    s.add_argument("--N", type=float, required=True)
    s.add_argument("--s-ratio", type=float, default=None)
    s.set_defaults(func=cmd_reference)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LmuError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
