"""Command-line entry point.

Every command ends with one ``result=<command> key=value ...`` line; errors
go to stderr as ``error: ...`` with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as runconfig
from . import gradsuite
from .checkpoint import CheckpointError
from .model import ConfigError, ForkNet, ForkNetConfig, load_model, param_breakdown, save_model
from .training import Trainer, draw_mixture, evaluate
from .wavio import WavError, wav_read, wav_write

EXIT_FAIL = 1
EXIT_USAGE = 2


def kv(**items) -> str:
    parts = []
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        parts.append(f"{k}={v}")
    return " ".join(parts)


def _out(line: str) -> None:
    print(line, flush=True)


def _run_config(args) -> runconfig.RunConfig:
    return runconfig.load(getattr(args, "config", None), getattr(args, "set", None))


def cmd_train(args) -> int:
    rc = _run_config(args)
    ckpt_dir = Path(rc.paths.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log = Path(rc.paths.log)
    log.parent.mkdir(parents=True, exist_ok=True)
    echo = rc.to_text()
    (ckpt_dir / "effective.cfg").write_text(echo)
    with open(log, "a") as f:
        f.write("".join(f"# {line}\n" for line in echo.splitlines()))
    for line in echo.splitlines():
        _out(f"# {line}")
    if args.resume:
        trainer = Trainer.resume(args.resume, ckpt_dir=ckpt_dir, log_path=log, echo=_out)
    else:
        model = ForkNet(rc.model, seed=rc.train.seed)
        trainer = Trainer(model, rc.train, rc.loss, ckpt_dir=ckpt_dir, log_path=log, echo=_out)
    trainer.run(args.epochs)
    _out("result=train " + kv(epochs=trainer.epoch, steps=trainer.step, best_val_si_sdr=trainer.best_val,
                               checkpoint=ckpt_dir / "best.ckpt"))
    return 0


def cmd_enhance(args) -> int:
    model, _, _, _ = load_model(args.checkpoint)
    audio = wav_read(args.inp, model.cfg.stft.sample_rate)
    out = model.enhance(audio)
    wav_write(args.out, out)
    _out("result=enhance " + kv(inp=args.inp, out=args.out, samples=len(out), duration_s=out.duration))
    return 0


def _parse_seeds(text: str) -> list[int]:
    """``"8"`` means seeds 0..7; ``"3:6"`` a half-open range; ``"1,4,9"`` a list."""
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return list(range(int(lo), int(hi)))
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        return list(range(int(text)))
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from None


def cmd_eval(args) -> int:
    model, _, _, _ = load_model(args.checkpoint)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise ConfigError("--seeds: empty seed set")
    snr = (args.snr_low, args.snr_high)
    sr = model.cfg.stft.sample_rate
    # stream id 2 keeps evaluation mixtures disjoint from training (0) and validation (1)
    mixes = [draw_mixture([s, 2], args.dur_s, snr, sample_rate=sr) for s in seeds]
    noisy, enhanced = evaluate(model, mixes)
    _out("result=eval " + kv(n=len(seeds), noisy_si_sdr=noisy, enhanced_si_sdr=enhanced,
                              improvement=enhanced - noisy))
    return 0


def cmd_gradcheck(args) -> int:
    failed = 0
    start = time.time()
    count = 0
    for r in gradsuite.run_suite(args.seed, include_model=not args.ops_only):
        ok = r.passed(args.tol)
        failed += not ok
        count += 1
        _out(kv(check=r.name, max_rel_err=r.error, status="pass" if ok else "FAIL"))
    _out("result=gradcheck " + kv(checks=count, failed=failed, tol=args.tol, seconds=time.time() - start))
    return EXIT_FAIL if failed else 0


def cmd_params(args) -> int:
    rc = _run_config(args)
    model = ForkNet(rc.model)
    for name, n in param_breakdown(model.params).items():
        _out(kv(module=name, params=n))
    _out("result=params " + kv(total=model.params.count()))
    return 0


def cmd_ablate(args) -> int:
    rows = [("Ref1", ForkNetConfig.ref1()), ("Ref2", ForkNetConfig.ref2()), ("ForkNet", ForkNetConfig.base())]
    totals = []
    for name, cfg in rows:
        n = ForkNet(cfg).params.count()
        totals.append(n)
        _out(kv(model=name, mag=cfg.mag_channels, ri=cfg.ri_channels, time=cfg.time_channels, params=n,
                params_m=round(n / 1e6, 2)))
    ordered = totals[0] > totals[1] > totals[2]
    _out("result=ablate " + kv(ordering="Ref1>Ref2>ForkNet", holds=ordered))
    return 0 if ordered else EXIT_FAIL


def cmd_init(args) -> int:
    rc = _run_config(args)
    model = ForkNet(rc.model, seed=args.seed)
    if args.identity:
        model.set_identity_mask()
    save_model(args.out, model, meta={"identity_mask": bool(args.identity), "seed": args.seed})
    _out("result=init " + kv(out=args.out, params=model.params.count(), identity=bool(args.identity)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forknet", description="ForkNet speech enhancement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value run config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("train", help="train on synthetic dynamic mixtures")
    with_config(sp)
    sp.add_argument("--resume", help="continue from a training checkpoint")
    sp.add_argument("--epochs", type=int, help="stop after this many total epochs")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("enhance", help="enhance one WAV file")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("eval", help="mean SI-SDR of noisy vs enhanced on held-out synthetic mixtures")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--seeds", default="8", help="N, LO:HI or a comma list")
    sp.add_argument("--dur-s", type=float, default=1.0)
    sp.add_argument("--snr-low", type=float, default=0.0)
    sp.add_argument("--snr-high", type=float, default=10.0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and the tiny model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=gradsuite.TOLERANCE)
    sp.add_argument("--ops-only", action="store_true", help="skip the full-model check")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("params", help="parameter counts per submodule")
    with_config(sp)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("ablate", help="parameter counts of Ref1, Ref2 and ForkNet")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("init", help="write a freshly initialised model checkpoint")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--identity", action="store_true", help="force the mask to 1+0j (debug round trip)")
    sp.set_defaults(func=cmd_init)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, WavError, OSError, ValueError, FloatingPointError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
