"""Command-line entry point: ``fourier-circuits {construct,train,analyze,verify,grok}``.

Exit codes: 0 success, 1 a verification check failed (or training diverged),
2 usage, config or budget error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import attention_spectra, frequency_report, write_neuron_spectra, write_neuron_summary
from .construction import (
    construct_max_margin,
    construct_neuron_specs,
    cos_sum_expansion,
    expected_width,
    gamma_star,
    normalize_network,
    per_frequency_counts,
    sum_to_product_terms,
    unit_cosine_neuron,
    verify_indicator,
)
from .dataset import BudgetExceeded, check_arity, check_modulus, generate_full
from .fourier import dft1, network_dft
from .io import CheckpointError, ConfigError, RunConfig, dump_config, load_checkpoint, load_config, save_checkpoint
from .mlp import MlpParams, class_weighted_margin_gprime, dataset_margin_h, forward_batch, neuron_weighted_objective
from .training import TrainingDiverged, grokking_metrics, train
from .transformer import AttnParams, write_matrix_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _validate_pk(p: int, k: int) -> None:
    try:
        check_modulus(p)
        check_arity(k)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if k > 6:
        raise UsageError(f"k must be at most 6, got {k}")


# ----------------------------------------------------------------------------
# construct


def cmd_construct(args) -> int:
    _validate_pk(args.p, args.k)
    net = construct_max_margin(args.p, args.k)
    report = verify_indicator(net)
    unit = normalize_network(net)
    margin = dataset_margin_h(unit, generate_full(args.p, args.k), keep_points=False).normalized_margin
    gamma = gamma_star(args.k, args.p)
    rel = abs(margin - gamma) / gamma
    lo_w, hi_w = report.wrong_values
    print(f"p={args.p} k={args.k} m={net.m}")
    print(f"gamma_star={gamma!r}")
    print(f"normalized_margin={margin!r} rel_err={rel:.3e}")
    print(f"correct_class_output={report.correct_values[0]!r}")
    print(f"other_class_output={lo_w!r}..{hi_w!r}")
    print(f"deviation_from_fourier_sum={report.fourier_deviation:.3e}")
    print(f"deviation_from_zero_offclass={report.max_deviation:.3e}")
    if args.out:
        out_net = unit if args.normalize else net
        save_checkpoint(args.out, out_net, {"p": args.p, "k": args.k, "normalized": bool(args.normalize)})
        print(f"wrote {args.out}")
    ok = report.matches_fourier_sum(1e-9) and rel < 1e-9
    return EXIT_OK if ok else EXIT_FAIL


# ----------------------------------------------------------------------------
# train / grok


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            cfg = RunConfig(replace(cfg.train, **overrides), cfg.grok)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _progress(enabled: bool):
    if not enabled:
        return None

    def show(rec):
        val = "" if rec.val_acc is None else f" val_acc={rec.val_acc:.4f}"
        print(f"step={rec.step} loss={rec.train_loss:.5f} train_acc={rec.train_acc:.4f}{val}", file=sys.stderr)

    return show


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    try:
        model, trace = train(cfg.train, progress=_progress(args.verbose))
    except TrainingDiverged as exc:
        exc.trace.to_csv(out / "trace.csv")
        save_checkpoint(out / "final.ckpt", exc.model, cfg.train.to_dict())
        print(f"diverged at step {exc.step}; kept last finite parameters", file=sys.stderr)
        return EXIT_FAIL
    trace.to_csv(out / "trace.csv")
    save_checkpoint(out / "final.ckpt", model, cfg.train.to_dict())
    last = trace.records[-1]
    print(f"steps={last.step} train_loss={last.train_loss:.6g} train_acc={last.train_acc:.4f}"
          + ("" if last.val_acc is None else f" val_acc={last.val_acc:.4f}"))
    return EXIT_OK


def _fmt_opt(v) -> str:
    return "" if v is None else str(v)


def cmd_grok(args) -> int:
    cfg = _load_run_config(args)
    seeds = cfg.grok.seeds if args.seeds is None else tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if not seeds:
        raise UsageError("no seeds given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(RunConfig(cfg.train, replace(cfg.grok, seeds=seeds))))
    rows = []
    for s in seeds:
        run = replace(cfg.train, seed=s)
        try:
            _, trace = train(run, progress=_progress(args.verbose))
        except TrainingDiverged as exc:
            trace = exc.trace
        trace.to_csv(out / f"trace_seed{s}.csv")
        gm = grokking_metrics(trace, cfg.grok.threshold)
        rows.append((s, run.k, run.p, gm.step_train, gm.step_val, gm.delay))
        print(f"seed={s} step_train={_fmt_opt(gm.step_train) or 'not-reached'} "
              f"step_val={_fmt_opt(gm.step_val) or 'not-reached'} delay={_fmt_opt(gm.delay) or 'n/a'}")
    with open(out / "grok_metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "k", "p", "step_train", "step_val", "delay"])
        for row in rows:
            writer.writerow([_fmt_opt(v) for v in row])
    return EXIT_OK


# ----------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    try:
        model, header = load_checkpoint(args.ckpt)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(model, MlpParams):
        rep = frequency_report(model)
        write_neuron_spectra(out / "spectrum.csv", model)
        write_neuron_summary(out / "neurons.csv", rep)
        with open(out / "coverage.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["freq", "neurons"])
            for z, n in rep.histogram.items():
                writer.writerow([z, n])
        missing = rep.missing_frequencies
        print(f"kind=mlp p={model.p} k={model.k} m={model.m} active={int(rep.active.sum())}")
        print("histogram=" + ",".join(f"{z}:{n}" for z, n in rep.histogram.items()))
        print(f"fraction_power_ge_0.9={rep.fraction_single_frequency(0.9):.4f}")
        print(f"median_max_power={float(np.median(rep.max_power[rep.active])) if rep.active.any() else 0.0:.4f}")
        print("missing_frequencies=" + (",".join(map(str, missing)) if missing else "none"))
        return EXIT_OK
    if isinstance(model, AttnParams):
        with open(out / "head_spectra.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["layer", "head", "top8_power_share"])
            for hs in attention_spectra(model):
                write_matrix_csv(out / f"attention_L{hs.layer}_H{hs.head}.csv", hs.matrix)
                write_matrix_csv(out / f"attention_power_L{hs.layer}_H{hs.head}.csv", hs.power)
                writer.writerow([hs.layer, hs.head, repr(hs.top_share())])
                print(f"layer={hs.layer} head={hs.head} top8_power_share={hs.top_share():.4f}")
        return EXIT_OK
    raise UsageError(f"unknown checkpoint kind {header.get('kind')!r}")


# ----------------------------------------------------------------------------
# verify


def verification_checks(p: int, k: int, gamma_fn=None, draws: int = 1000, seed: int = 0):
    """Analytic checks for one ``(p, k)``; yields ``(name, passed, metric)``."""
    gamma_fn = gamma_fn or gamma_star
    rng = np.random.default_rng(seed)
    gamma = gamma_fn(k, p)

    # sum-to-product: sum coeff (c.a)^k = 2^k k! prod a
    terms = sum_to_product_terms(k)
    signs = np.array([t.signs for t in terms], dtype=float)
    coeffs = np.array([t.coefficient for t in terms], dtype=float)
    worst = 0.0
    for _ in range(draws):
        a = rng.uniform(-2, 2, k)
        rhs = 2**k * float(np.prod(np.arange(1, k + 1))) * float(np.prod(a))
        lhs = float(coeffs @ (signs @ a) ** k)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    yield "sum_to_product", worst <= 1e-9, worst

    trig = cos_sum_expansion(k)
    worst = 0.0
    for _ in range(draws):
        x = rng.uniform(-np.pi, np.pi, k + 1)
        worst = max(worst, abs(sum(t.evaluate(x) for t in trig) - np.cos(x.sum())))
    yield "cos_sum_expansion", worst <= 1e-12, worst

    specs = construct_neuron_specs(p, k)
    gap = max(abs(s.phase_gap()) for s in specs)
    yield "phase_constraint", gap < 1e-12, gap

    counts = per_frequency_counts(p, k)
    ok = len(specs) == expected_width(p, k) and all(n == 2 ** (2 * k - 1) for n in counts.values())
    yield "width_per_frequency", ok, float(2 ** (2 * k - 1))

    neuron = unit_cosine_neuron(p, k)
    obj = neuron_weighted_objective(neuron)
    rel = abs(obj - gamma) / abs(gamma)
    yield "unit_neuron_objective_vs_gamma", rel < 1e-9, rel

    if k == 3:
        closed = 3.0 / (16 * p * (p - 1))
        rel = abs(gamma - closed) / closed
        yield "gamma_k3_closed_form", rel < 1e-12, rel

    net = construct_max_margin(p, k)
    ind = verify_indicator(net)
    yield "fourier_sum_output", ind.matches_fourier_sum(1e-9), ind.fourier_deviation

    ds = generate_full(p, k)
    unit = normalize_network(net)
    rep = dataset_margin_h(unit, ds)
    rel = abs(rep.normalized_margin - gamma) / abs(gamma)
    yield "normalized_margin_vs_gamma", rel < 1e-9, rel

    spread = float(rep.per_point_margins.max() - rep.per_point_margins.min())
    yield "all_points_on_margin", spread < 1e-9 * max(1.0, abs(rep.min_margin)), spread

    gp = max(
        abs(class_weighted_margin_gprime(unit, a, int(y)) - g)
        for a, y, g in zip(ds.inputs[:200], ds.labels[:200], rep.per_point_margins[:200])
    )
    # wrong-class outputs are all equal, so the averaged and worst-case margins agree
    yield "gprime_equals_g", gp < 1e-9, gp

    f_eval = lambda *idx: _gather_class(net, idx, k, p)  # noqa: E731
    reals = [network_dft(f_eval, p, k, (z,) * k + (-z,)).real for z in range(1, (p - 1) // 2 + 1)]
    yield "network_dft_positive", min(reals) > 0, float(min(reals))

    u = rng.normal(size=p)
    plan = abs(np.sum(np.abs(dft1(u).coeffs) ** 2) - p * np.sum(u**2)) / (p * np.sum(u**2))
    yield "plancherel", plan < 1e-12, plan


def _gather_class(net: MlpParams, idx, k: int, p: int) -> np.ndarray:
    """Network output ``f(a)[c]`` on broadcast index grids ``(a_1..a_k, c)``."""
    grids = np.broadcast_arrays(*idx)
    a = np.stack(grids[:k], -1).reshape(-1, k)
    logits = forward_batch(net, a)
    return logits[np.arange(len(a)), grids[k].reshape(-1)].reshape(grids[0].shape)


def cmd_verify(args) -> int:
    _validate_pk(args.p, args.k)
    failed = []
    for name, ok, metric in verification_checks(args.p, args.k, gamma_fn=gamma_star):
        status = "PASS" if ok else "FAIL"
        print(f"{name} {status} {metric:.3e}")
        if not ok:
            failed.append(name)
    net = construct_max_margin(args.p, args.k)
    rep = verify_indicator(net)
    print(f"offclass_output INFO {rep.wrong_values[1]!r}")
    if failed:
        print("failed: " + ",".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourier-circuits", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="build the analytic max-margin network")
    c.add_argument("--p", type=int, required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--normalize", action="store_true", help="save the unit-norm version")
    c.add_argument("--out", help="checkpoint path")
    c.set_defaults(func=cmd_construct)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="frequency analysis of a checkpoint")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="run the analytic check battery for one (p, k)")
    v.add_argument("--p", type=int, required=True)
    v.add_argument("--k", type=int, required=True)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("grok", help="train one run per seed and report grokking delays")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seeds", help="comma-separated seeds (default: from config)")
    g.add_argument("--steps", type=int)
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(func=cmd_grok)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, BudgetExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
