"""Command-line entry point: ``tokendrive <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from tokendrive.errors import CheckpointError, ConfigError, EmptyInputError, NumericError
from tokendrive.harness.config import load_config
from tokendrive.sim.scenario import TIERS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser, out_default: str = "out") -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tokendrive", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model; writes train_curve.csv, val_pairs.csv, model.ckpt")
    _common(p)
    p.add_argument("--ckpt", type=Path, help="checkpoint output path (default OUT/model.ckpt)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="closed-loop evaluation over held-out seeds")
    _common(p)
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--tier", choices=tuple(TIERS))
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--oracle", action="store_true", help="drive with the route oracle instead of a model")

    p = sub.add_parser("ablate", help="train and evaluate each arm of an ablation suite")
    _common(p)
    p.add_argument("--suite", required=True, help="ratio, capacity, reduction or ddia")
    p.add_argument("--tier", choices=tuple(TIERS))
    p.add_argument("--n-seeds", type=int)

    p = sub.add_parser("correlate", help="Pearson r between l_rec and l_way validation pairs")
    p.add_argument("--input", type=Path, required=True, help="CSV with l_rec and l_way columns")
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("attn", help="export LM attention maps for one episode")
    _common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--episode", type=int, help="scenario seed (default: first evaluation seed)")
    p.add_argument("--tier", choices=tuple(TIERS))
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--pipelines", type=int, default=3)
    return parser


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = v
    if getattr(args, "tier", None):
        overrides["tier"] = args.tier
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, **overrides)


def cmd_train(args) -> int:
    from tokendrive.harness.train import train, write_outputs

    cfg = _config(args)

    def progress(row):
        print(f"step {row['step']:5d} total {row['total']:.4f} l_way {row['l_way']:.4f} "
              f"kept {row['kept_ratio']:.3f}", file=sys.stderr)

    log_every = max(1, cfg.steps // 20)
    result = train(cfg, progress=None if args.quiet else
                   (lambda r: progress(r) if r["step"] % log_every == 0 else None))
    paths = write_outputs(result, args.out, args.ckpt)
    for p in paths.values():
        print(p)
    if result.aborted:
        print(f"training aborted ({result.aborted}); last good checkpoint saved", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args) -> int:
    from tokendrive.harness.evaluate import evaluate, write_eval

    cfg = _config(args)
    result = evaluate(cfg, args.ckpt, tier=cfg.tier, n_seeds=args.n_seeds, oracle=args.oracle)
    for p in write_eval(result, args.out).values():
        print(p)
    s = result.summary
    print(f"{s['tier']}: DS {s['ds_mean']:.3f}±{s['ds_std']:.3f} RC {s['rc_mean']:.3f}±{s['rc_std']:.3f} "
          f"IS {s['is_mean']:.3f}±{s['is_std']:.3f}")
    aborted = [r for r in result.rows if r["status"] == "aborted"]
    return EXIT_NUMERIC if aborted else EXIT_OK


def cmd_ablate(args) -> int:
    from tokendrive.harness.ablate import ablate, suite_arms, write_ablation

    cfg = _config(args)
    suite_arms(args.suite)
    result = ablate(cfg, args.suite, tier=cfg.tier, n_seeds=args.n_seeds,
                    progress=lambda r: print(f"{r['key']}={r['value']}: DS {r['ds_mean']:.3f} "
                                             f"RC {r['rc_mean']:.3f}", file=sys.stderr))
    print(write_ablation(result, args.out))
    return EXIT_OK


def cmd_correlate(args) -> int:
    from tokendrive.harness.correlate import correlate_file

    try:
        res = correlate_file(args.input)
    except FileNotFoundError:
        raise ConfigError(f"no such file: {args.input}") from None
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "correlation.csv"
    path.write_text(res.scatter_csv(), encoding="utf-8")
    print(path)
    print(f"pearson_r {res.r!r} n {res.n}")
    return EXIT_OK


def cmd_attn(args) -> int:
    from tokendrive.harness.attention import dump_attention, write_attention
    from tokendrive.harness.checkpoint import load_checkpoint
    from tokendrive.harness.evaluate import eval_seeds, model_from_checkpoint

    cfg = _config(args)
    model = model_from_checkpoint(cfg, load_checkpoint(args.ckpt))
    seed = args.episode if args.episode is not None else eval_seeds(1)[0]
    dump = dump_attention(model, seed, args.layer, args.head, tier=cfg.tier, max_steps=args.max_steps)
    for p in write_attention(dump, args.out).values():
        print(p)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from tokendrive.harness.gradsuite import run_suite
    from tokendrive.harness.train import rows_to_csv

    results = run_suite(seed=args.seed, n_pipelines=args.pipelines,
                        progress=lambda r: print(f"{'ok  ' if r.passed else 'FAIL'} {r.name} "
                                                 f"{r.max_error:.2e}", file=sys.stderr))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "gradcheck.csv"
    path.write_text(rows_to_csv(("case", "max_rel_error", "passed"),
                                [{"case": r.name, "max_rel_error": r.max_error, "passed": str(r.passed).lower()}
                                 for r in results]), encoding="utf-8")
    print(path)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "correlate": cmd_correlate,
            "attn": cmd_attn, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, EmptyInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
