"""Command-line surface: transforms, gradient checks, benchmarks, training.

Five subcommands:

  transform  evaluate one normalizing transform on a logit vector
  gradcheck  finite-difference audit of the analytic transform gradients
  bench      per-row timing of a transform at a given shape
  train      run the toy trainer from a JSON config, write run artifacts
  attmap     dump encoder attention matrices of a finished run

Exit codes: 0 success, 1 check or convergence failure, 2 usage error.
All artifact files are written atomically (temp file, then rename) so a
crashed run never leaves a plausible-looking partial file.  `--seed` and
`--out` are accepted both before and after the subcommand name; `--out`
falls back to the RUN_OUT_DIR environment variable, then to the config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import fields as dataclass_fields

import numpy as np

from entmono import grads, transforms
from entmono.attention import mha_forward, sinusoidal_pe
from entmono.toytrain import (
    SyntheticTask,
    ToyModel,
    TrainerConfig,
    alpha_bearing_heads,
    decode_greedy,
    eval_split,
    gen_task,
    train,
)

TRANSFORM_KINDS = ("softmax", "sparsemax", "entmax15", "entmax")

# gradcheck tolerances per transform, matching the gradient module's tests
GRADCHECK_TOL = {
    "softmax": 1e-5,
    "sparsemax": 1e-5,
    "entmax15": 1e-4,
    "entmax": 1e-4,
    "entmax_alpha": 1e-4,
}
MARGIN = 1e-3


def _fmt_row(values) -> str:
    return ",".join(f"{float(v):.6f}" for v in np.asarray(values).ravel())


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_npz(path: str, arrays: dict) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


# ---------------------------------------------------------------- transform


def cmd_transform(args) -> int:
    logits = np.array([float(tok) for tok in args.logits.split(",")])
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if args.kind == "softmax":
        dist = transforms.softmax(logits, transforms.Temperature(args.temp))
    elif args.kind == "sparsemax":
        dist = transforms.sparsemax(logits)
    elif args.kind == "entmax15":
        dist = transforms.entmax15_exact(logits)
    else:
        dist = transforms.entmax(logits, args.alpha)
    print(_fmt_row(dist.probs))
    return 0


# ---------------------------------------------------------------- gradcheck


def _jacobian_analytic(kind: str, z: np.ndarray, alpha: float) -> np.ndarray:
    """Row i is the gradient of p_i, assembled from the transform's VJP."""
    if kind == "softmax":
        dist = transforms.softmax(z)
        vjp = grads.softmax_vjp
    elif kind == "sparsemax":
        dist = transforms.sparsemax(z)
        vjp = grads.sparsemax_vjp
    elif kind == "entmax15":
        dist = transforms.entmax15_exact(z)
        vjp = grads.entmax_vjp
    else:
        dist = transforms.entmax_bisect(z, alpha)
        vjp = grads.entmax_vjp
    ctx = grads.BackwardContext.from_distribution(dist, z=z)
    eye = np.eye(z.size)
    return np.stack([vjp(ctx, eye[i]) for i in range(z.size)])


def _gradcheck_point(rng: np.random.Generator, dim: int, kind: str,
                     alpha: float) -> np.ndarray:
    """Draw a logit vector whose support sits clear of a membership change."""
    for _ in range(200):
        z = rng.uniform(-4.0, 4.0, size=dim)
        if kind == "softmax":
            return z
        if kind == "sparsemax":
            dist = transforms.sparsemax(z)
        elif kind == "entmax15":
            dist = transforms.entmax15_exact(z)
        else:
            dist = transforms.entmax_bisect(z, alpha)
        if grads.support_margin(dist, z) > MARGIN:
            return z
    raise RuntimeError("could not sample a margin-clean point")


def run_gradcheck(trials: int, dim: int, seed: int) -> dict:
    """FD audit of every transform's Jacobian plus the alpha sensitivity."""
    if trials < 1 or dim < 1:
        raise ValueError("trials and dim must be positive")
    rng = np.random.default_rng(seed)
    alpha = 1.7  # generic interior alpha for the bisection path
    results = {}
    for kind in TRANSFORM_KINDS:
        worst = 0.0
        for _ in range(trials):
            z = _gradcheck_point(rng, dim, kind, alpha)
            analytic = _jacobian_analytic(kind, z, alpha)
            fd = grads.finite_difference_jacobian(
                kind if kind != "entmax" else
                grads.transform_fn("entmax", alpha=alpha), z)
            denom = max(float(np.linalg.norm(fd)), 1e-12)
            worst = max(worst, float(np.linalg.norm(analytic - fd)) / denom)
        results[kind] = {
            "max_rel_err": worst,
            "tolerance": GRADCHECK_TOL[kind],
            "pass": bool(worst <= GRADCHECK_TOL[kind]),
        }
    # alpha sensitivity on the same sampler, entmax path
    worst = 0.0
    for _ in range(trials):
        z = _gradcheck_point(rng, dim, "entmax", alpha)
        dist = transforms.entmax_bisect(z, alpha)
        ctx = grads.BackwardContext.from_distribution(dist, z=z)
        an = grads.entmax_alpha_grad(ctx)
        fd = grads.finite_difference_alpha(z, alpha)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        worst = max(worst, float(np.linalg.norm(an - fd)) / denom)
    results["entmax_alpha"] = {
        "max_rel_err": worst,
        "tolerance": GRADCHECK_TOL["entmax_alpha"],
        "pass": bool(worst <= GRADCHECK_TOL["entmax_alpha"]),
    }
    return {
        "trials": trials,
        "dim": dim,
        "seed": seed,
        "results": results,
        "pass": all(r["pass"] for r in results.values()),
    }


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.trials, args.dim, args.seed if args.seed is not None else 0)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        _atomic_write(args.report, text)
    print(text, end="")
    return 0 if report["pass"] else 1


# -------------------------------------------------------------------- bench


def run_bench(kind: str, dim: int, batch: int, iters: int, seed: int = 0):
    """(mean, std) nanoseconds per row for one transform at one shape."""
    if dim < 1 or batch < 1 or iters < 1:
        raise ValueError("dim, batch, iters must be positive")
    rng = np.random.default_rng(seed)
    zs = rng.uniform(-4.0, 4.0, size=(batch, dim))
    if kind == "softmax":
        fn = lambda: transforms.softmax_rows(zs)
    elif kind == "sparsemax":
        fn = lambda: transforms.sparsemax_rows(zs)
    elif kind == "entmax15":
        fn = lambda: transforms.entmax15_rows(zs)
    elif kind == "entmax":
        fn = lambda: transforms.entmax_rows(zs, 1.5)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    for _ in range(3):  # warm caches and any deferred compilation
        fn()
    samples = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = (time.perf_counter_ns() - t0) / batch
    mean = float(samples.mean())
    std = float(samples.std()) if iters > 1 else 0.0
    return mean, std


def cmd_bench(args) -> int:
    mean, std = run_bench(args.kind, args.dim, args.batch, args.iters,
                          seed=args.seed if args.seed is not None else 0)
    print(f"{args.kind},{args.dim},{args.batch},{mean:.1f},{std:.1f}")
    return 0


# -------------------------------------------------------------------- train


_TASK_KEYS = {f.name for f in dataclass_fields(SyntheticTask)} - {"seed"}
_TRAINER_KEYS = {f.name for f in dataclass_fields(TrainerConfig)} - {"seed"}


def load_run_config(path: str, seed_override=None, out_override=None):
    """Strict RunConfig: unknown keys anywhere are an error; seed mandatory.

    Returns (TrainerConfig, SyntheticTask, out_dir).  The single top-level
    seed feeds both the task and the trainer; --seed beats the file and
    --out beats RUN_OUT_DIR beats the file's out_dir.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("run config must be a JSON object")
    unknown = set(raw) - {"task", "trainer", "out_dir", "seed"}
    if unknown:
        raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
    if "seed" not in raw and seed_override is None:
        raise ValueError("run config needs a seed")
    seed = int(seed_override if seed_override is not None else raw["seed"])

    task_raw = dict(raw.get("task", {}))
    unknown = set(task_raw) - _TASK_KEYS
    if unknown:
        raise ValueError(f"unknown task keys: {sorted(unknown)}")
    task = SyntheticTask(seed=seed, **task_raw)

    trainer_raw = dict(raw.get("trainer", {}))
    unknown = set(trainer_raw) - _TRAINER_KEYS
    if unknown:
        raise ValueError(f"unknown trainer keys: {sorted(unknown)}")
    for key in ("head_kinds", "l1_layers"):
        if isinstance(trainer_raw.get(key), list):
            trainer_raw[key] = tuple(trainer_raw[key])
    cfg = TrainerConfig(seed=seed, **trainer_raw)

    out_dir = out_override or os.environ.get("RUN_OUT_DIR") or raw.get("out_dir")
    if not out_dir:
        raise ValueError("no output directory: give out_dir, RUN_OUT_DIR, or --out")
    return cfg, task, str(out_dir)


def _write_trace_csv(path: str, trace, head_ids) -> None:
    lines = ["step,loss," + ",".join(f"alpha_h{i}" for i in head_ids)]
    for step, loss, alphas in zip(trace.steps, trace.loss, trace.alphas):
        lines.append(f"{step},{loss:.6f}," + ",".join(f"{a:.6f}" for a in alphas))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_heads_json(path: str, trace, cfg: TrainerConfig) -> None:
    """One row per attention head: encoder heads first, then decoder heads.

    Encoder heads have no selection probability (0.0 sentinel); decoder
    monotonic heads have no alpha (0.0 sentinel).
    """
    heads = []
    model: ToyModel = trace.model
    enc_cfgs = model.head_cfgs() if model is not None else []
    for i, hc in enumerate(enc_cfgs):
        heads.append({
            "id": i,
            "mean_selection_prob": 0.0,
            "alpha": float(hc.effective_alpha),
        })
    n_enc = len(enc_cfgs)
    for k in range(cfg.dec_heads):
        msp = trace.head_mean_selection[k] if k < len(trace.head_mean_selection) else 0.0
        heads.append({"id": n_enc + k, "mean_selection_prob": float(msp), "alpha": 0.0})
    doc = {
        "heads": heads,
        "token_accuracy": float(trace.token_accuracy),
        "alignment_accuracy": float(trace.alignment_accuracy),
    }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_alignment_csv(path: str, model: ToyModel, task: SyntheticTask,
                         cfg: TrainerConfig) -> None:
    data = gen_task(task)
    n_train, n_eval = eval_split(cfg, task)
    frames = data.frames[n_train : n_train + n_eval]
    gold = data.gold[n_train : n_train + n_eval]
    _, paths = decode_greedy(model, frames)
    lines = ["sample,head,step,predicted,gold"]
    for k in range(cfg.dec_heads):
        for b in range(n_eval):
            for i in range(task.out_len):
                lines.append(f"{b},{k},{i},{paths[k][b, i]},{gold[b, i]}")
    _atomic_write(path, "\n".join(lines) + "\n")


def cmd_train(args) -> int:
    cfg, task, out_dir = load_run_config(args.config, args.seed, args.out)
    os.makedirs(out_dir, exist_ok=True)
    trace = train(cfg, task)

    head_ids = alpha_bearing_heads(cfg.head_kinds)
    _write_trace_csv(os.path.join(out_dir, "trace.csv"), trace, head_ids)
    _write_heads_json(os.path.join(out_dir, "heads.json"), trace, cfg)
    if trace.model is not None:
        _atomic_write_npz(os.path.join(out_dir, "model.npz"), trace.model.params)
        if not trace.diverged:
            _write_alignment_csv(os.path.join(out_dir, "alignment.csv"),
                                 trace.model, task, cfg)
    run_doc = {
        "seed": cfg.seed,
        "task": {f.name: getattr(task, f.name) for f in dataclass_fields(task)},
        "trainer": {f.name: getattr(cfg, f.name) for f in dataclass_fields(cfg)},
        "diverged": trace.diverged,
        "token_accuracy": trace.token_accuracy,
        "alignment_accuracy": trace.alignment_accuracy,
    }
    _atomic_write(os.path.join(out_dir, "run.json"),
                  json.dumps(run_doc, indent=2, sort_keys=True) + "\n")
    if trace.diverged:
        print("training diverged; partial trace written", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------- attmap


def cmd_attmap(args) -> int:
    cfg, task, out_dir = load_run_config(args.config, args.seed, args.out)
    model_path = os.path.join(out_dir, "model.npz")
    if not os.path.exists(model_path):
        raise FileNotFoundError(f"no trained run at {out_dir} (missing model.npz)")
    with np.load(model_path) as archive:
        params = {name: archive[name] for name in archive.files}
    model = ToyModel(cfg=cfg, task=task, params=params)

    data = gen_task(task)
    n_train, n_eval = eval_split(cfg, task)
    if not 0 <= args.sample < n_eval:
        raise ValueError(f"sample must lie in [0, {n_eval}), got {args.sample}")
    frames = data.frames[n_train + args.sample : n_train + args.sample + 1]
    h0 = frames @ params["win"] + sinusoidal_pe(task.in_len, cfg.d_model)
    _, cache = mha_forward(h0, model.enc_weights(), model.head_cfgs())

    summary = {"sample": int(args.sample), "heads": []}
    for i, hcfg in enumerate(model.head_cfgs()):
        probs = cache["heads"][i][4][0]  # (T, T) attention matrix
        rows = [_fmt_row(row) for row in probs]
        _atomic_write(os.path.join(out_dir, f"head{i}_attmap.csv"),
                      "\n".join(rows) + "\n")
        summary["heads"].append({
            "id": i,
            "kind": hcfg.kind,
            "zero_fraction": float((probs == 0.0).mean()),
        })
    _atomic_write(os.path.join(out_dir, "attmap_summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


# --------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global seed; beats any seed in a config file")
    common.add_argument("--out", default=None,
                        help="output directory; beats RUN_OUT_DIR and the config")

    root = argparse.ArgumentParser(prog="entmono", parents=[common],
                                   description=__doc__.split("\n")[0])
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common],
                       help="evaluate one transform on a logit vector")
    p.add_argument("--kind", choices=TRANSFORM_KINDS, required=True)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--temp", type=float, default=1.0)
    p.add_argument("--logits", required=True, help="comma-separated reals")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference audit of transform gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--report", default=None, help="also write the JSON here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common],
                       help="per-row timing of one transform")
    p.add_argument("--kind", choices=TRANSFORM_KINDS, required=True)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--iters", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", parents=[common],
                       help="run the toy trainer from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attmap", parents=[common],
                       help="dump encoder attention maps of a finished run")
    p.add_argument("--config", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.set_defaults(func=cmd_attmap)
    return root


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"entmono: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
