"""Command-line entry point: ``agro <subcommand> ...``.

Every subcommand writes JSON (or CSV) and exits 0; on failure a JSON error
object goes to stderr and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ccg import run_ccg
from .genmetrics import compute_metrics
from .harness import evaluate_solution, run_experiment
from .lin_solve import Instance
from .neuralgen import VAE, LatentBall, calibrate_latent
from .pga import PgaConfig, run_agro
from .probgen import DemandDataset, generate, substream
from .uncertainty import ClassicalSet

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _load_data(directory):
    directory = Path(directory)
    return Instance.from_json(directory / "instance.json"), DemandDataset.load(directory)


def _load_set(path):
    d = _read_json(path)
    if d.get("kind") == "latent":
        return LatentBall.from_dict(d)
    return ClassicalSet.from_dict(d)


# -- subcommands ---------------------------------------------------------------


def cmd_gen(args):
    inst, ds = generate(args.I, args.J, args.n, args.seed)
    ds.save(args.out, inst)
    return {"out": str(args.out), "rows": int(ds.data.shape[0]), "splits": ds.splits}


def cmd_train(args):
    _, ds = _load_data(args.data)
    conf = _read_json(args.config) if args.config else {}
    conf["latent_dim"] = args.latent
    if args.seed is not None:
        conf["random_state"] = args.seed
    model = VAE(**conf).fit(ds.train, X_val=ds.val)
    model.save(args.out)
    return {"out": str(args.out), "best_val_loss": model.best_val_loss_, "epochs": len(model.history_) - 1}


def cmd_calibrate(args):
    _, ds = _load_data(args.data)
    if args.set:
        uset = ClassicalSet(args.set).fit(np.vstack([ds.train, ds.val]))
        if args.set != "box":
            uset.calibrate(ds.calibration, args.alpha, args.delta)
        out = uset.to_dict()
    elif args.model:
        out = calibrate_latent(VAE.load(args.model), ds.calibration, args.alpha, args.delta).to_dict()
    else:
        raise ValueError("calibrate needs --model (latent ball) or --set")
    _write_json(out, args.out)
    return None


def cmd_solve(args):
    inst, ds = _load_data(args.data)
    if args.method == "agro":
        if not args.model:
            raise ValueError("--method agro needs --model")
        model = VAE.load(args.model)
        ball = _load_set(args.uset) if args.uset else calibrate_latent(model, ds.calibration, args.alpha, args.delta)
        if not isinstance(ball, LatentBall):
            raise ValueError("--set file for agro must hold a latent ball")
        pga = _read_json(args.pga_config) if args.pga_config else {}
        pga.update(eps=args.eps, time_limit=args.time_limit, max_iter=args.max_iter, seed=args.seed)
        res = run_agro(inst, model, ball, PgaConfig(**pga))
    else:
        kind = args.method.split("-", 1)[1]
        if args.uset:
            uset = _load_set(args.uset)
            if getattr(uset, "kind", None) != kind:
                raise ValueError(f"set file holds a {getattr(uset, 'kind', 'latent')} set, method wants {kind}")
        else:
            uset = ClassicalSet(kind).fit(np.vstack([ds.train, ds.val]))
            if kind != "box":
                uset.calibrate(ds.calibration, args.alpha, args.delta)
        res = run_ccg(inst, uset, eps=args.eps, max_iter=args.max_iter, time_limit=args.time_limit, seed=args.seed)
    _write_json(res.to_dict(), args.out)
    return None


def cmd_eval(args):
    inst, ds = _load_data(args.data)
    res = _read_json(args.result)
    rep = evaluate_solution(inst, res["x"], ds.test, args.alpha, res.get("method", ""), res.get("gamma"))
    _write_json(rep.to_dict(), args.out)
    return None


def cmd_metrics(args):
    _, ds = _load_data(args.data)
    model = VAE.load(args.model)
    gen = model.sample(args.n_generated, random_state=substream(args.seed, "metrics"))
    rep = compute_metrics(ds.test, gen, args.k)
    _write_json(rep.to_dict(), args.out)
    return None


def cmd_experiment(args):
    cfg = _read_json(args.config) if args.config else {}
    if args.n_jobs is not None:
        cfg["n_jobs"] = args.n_jobs
    report = run_experiment(cfg)
    report.write(args.out)
    return {"out": str(args.out), "failures": report.summary["failures"]}


def build_parser():
    p = argparse.ArgumentParser(prog="agro", description="Two-stage robust facility planning with learned uncertainty sets.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample an instance and a demand dataset")
    g.add_argument("--I", type=int, required=True)
    g.add_argument("--J", type=int, required=True)
    g.add_argument("--n", type=int, default=2500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a VAE on the training split")
    t.add_argument("--data", required=True)
    t.add_argument("--latent", type=int, required=True)
    t.add_argument("--config", help="JSON of VAE keyword arguments")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="calibrate a latent ball or a classical set")
    c.add_argument("--data", required=True)
    c.add_argument("--model")
    c.add_argument("--set", choices=["budget", "ellipsoid", "box"])
    c.add_argument("--alpha", type=float, default=0.95)
    c.add_argument("--delta", type=float, default=0.05)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("solve", help="run AGRO or CCG")
    s.add_argument("--method", required=True, choices=["agro", "ccg-budget", "ccg-ellipsoid", "ccg-box"])
    s.add_argument("--data", required=True)
    s.add_argument("--model")
    s.add_argument("--set", dest="uset", help="calibrated set JSON from 'calibrate'")
    s.add_argument("--pga-config", help="JSON of PGA settings")
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--time-limit", type=float, default=900.0)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="out-of-sample cost of a solution on the test split")
    e.add_argument("--result", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--alpha", type=float, default=0.95)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("metrics", help="precision/density/recall/coverage of VAE samples")
    m.add_argument("--model", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--k", type=int, default=5)
    m.add_argument("--n-generated", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    x = sub.add_parser("experiment", help="multi-trial comparison; writes report, runtimes and box-plot CSV")
    x.add_argument("--config")
    x.add_argument("--n-jobs", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            sys.stderr.write(json.dumps({"error": "UsageError", "message": "invalid arguments"}) + "\n")
        return exc.code or 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}) + "\n")
        return EXIT_FAILURE
    if summary is not None:
        sys.stdout.write(json.dumps(summary, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
