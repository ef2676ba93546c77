"""Experiment driver.

Subcommands: generate | train | baseline | runthrough | report | selftest.
Global flags: --config <path>, --seed <int> (overrides every stage seed
offset), --threads <n>, --out <dir>, --keep-paths.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import baselines, checkpoint, csvio, dspp, inference, nn, queueing, sde
from .config import ConfigError, ExperimentConfig, config_summary, load_config


def _out_dir(cfg: ExperimentConfig, args) -> str:
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _seed_shift(cfg: ExperimentConfig, args) -> int:
    return int(args.seed) if args.seed is not None else 0


# --- dataset persistence -------------------------------------------------------


def save_dataset(out: str, data: dspp.Dataset, keep_paths: bool) -> str:
    path = os.path.join(out, "dataset.csv")
    rows = [
        (i, e, s.cumulative[j])
        for i, s in enumerate(data.samples)
        for j, e in enumerate(data.scheme.epochs)
    ]
    csvio.write_csv(path, "dataset-v1", ["sample_id", "epoch", "cumulative_count"], rows)
    csvio.write_json(os.path.join(out, "dataset.meta.json"), data.provenance)
    if keep_paths and data.paths is not None:
        prows = [
            (i, t, v)
            for i, p in enumerate(data.paths)
            for t, v in zip(p.grid.times(), p.values)
        ]
        csvio.write_csv(os.path.join(out, "paths.csv"), "path-v1", ["sample_id", "t", "value"], prows)
    return path


def load_dataset(path: str) -> dspp.Dataset:
    _schema, _header, rows = csvio.read_csv(path)
    by_sample: dict[int, dict[float, int]] = {}
    epochs: set[float] = set()
    for sid, epoch, count in rows:
        by_sample.setdefault(int(sid), {})[float(epoch)] = int(count)
        epochs.add(float(epoch))
    scheme = dspp.ObservationScheme(tuple(sorted(epochs)))
    meta_path = os.path.splitext(path)[0] + ".meta.json"
    provenance = csvio.read_json(meta_path) if os.path.exists(meta_path) else {}
    samples = tuple(
        dspp.CountSample(tuple(by_sample[i][e] for e in scheme.epochs))
        for i in sorted(by_sample)
    )
    return dspp.Dataset(scheme, samples, provenance)


def save_baseline(path: str, fit: baselines.PiecewiseIntensity) -> None:
    rows = [(k, v, fit.kind) for k, v in zip(fit.knots, fit.values)]
    csvio.write_csv(path, "baseline-v1", ["knot_time", "value", "kind"], rows)


def load_baseline(path: str) -> baselines.PiecewiseIntensity:
    _schema, _header, rows = csvio.read_csv(path)
    knots = tuple(float(r[0]) for r in rows)
    values = tuple(float(r[1]) for r in rows)
    return baselines.PiecewiseIntensity(knots, values, rows[0][2])


# --- subcommands ---------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    grid, scheme = cfg.grid.grid(), cfg.scheme.scheme()
    data = dspp.generate_dataset(
        cfg.truth.drift_spec(),
        cfg.truth.z0,
        grid,
        scheme,
        cfg.dataset.n,
        cfg.dataset.seed + _seed_shift(cfg, args),
        keep_paths=args.keep_paths,
    )
    path = save_dataset(out, data, args.keep_paths)
    counts = data.count_matrix()[:, -1].astype(float)
    dispersion = counts.var(ddof=1) / counts.mean() if counts.mean() > 0 else float("nan")
    print(f"wrote {path} ({len(data)} samples); terminal-count dispersion {dispersion:.3f}")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    data = load_dataset(args.dataset or os.path.join(out, "dataset.csv"))
    grid = cfg.grid.grid()
    tcfg = cfg.train.train_config(grid)
    model = adam = None
    if args.resume:
        model, ckpt_grid, adam, _meta = checkpoint.load_model(args.resume)
        if ckpt_grid != grid:
            raise ConfigError(
                f"checkpoint grid {ckpt_grid} does not match configured grid {grid}"
            )
    model, report = inference.train(
        data,
        tcfg,
        init_seed=cfg.train.init_seed + _seed_shift(cfg, args),
        model_config=cfg.model.model_config(),
        model=model,
        adam=adam,
    )
    ckpt_path = os.path.join(out, "model.ckpt")
    checkpoint.save_model(
        ckpt_path, model, grid, report.adam,
        meta={"trained": True, "config": config_summary(cfg)},
    )
    trace_path = os.path.join(out, "trace.csv")
    csvio.write_csv(
        trace_path,
        "trace-v1",
        ["update", "elbo", "grad_norm", "wallclock_ms"],
        zip(report.updates, report.elbo, report.grad_norm, report.wallclock_ms),
    )
    print(f"wrote {ckpt_path} and {trace_path} ({report.n_updates()} updates)")
    return 0


def cmd_baseline(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    data = load_dataset(args.dataset or os.path.join(out, "dataset.csv"))
    pc = baselines.pc_mle(data)
    save_baseline(os.path.join(out, "baseline_pc.csv"), pc)
    pieces = args.pieces or [cfg.baseline.pieces]
    for d in pieces:
        fit = baselines.pl_mle(data, d)
        save_baseline(os.path.join(out, f"baseline_pl_d{d}.csv"), fit)
    print(f"wrote baseline_pc.csv and {len(pieces)} piecewise-linear fit(s) to {out}")
    return 0


def _sources(cfg: ExperimentConfig, out: str, args):
    grid, scheme = cfg.grid.grid(), cfg.scheme.scheme()
    model, _g, _a, _m = checkpoint.load_model(
        args.checkpoint or os.path.join(out, "model.ckpt")
    )
    pl_path = args.baseline_fit or os.path.join(out, f"baseline_pl_d{cfg.baseline.pieces}.csv")
    pl = load_baseline(pl_path)
    return {
        "test": queueing.TrueModelSource(cfg.truth.drift_spec(), cfg.truth.z0, grid),
        "dlm": queueing.DlmSource(model, grid, scheme, mode=cfg.runthrough.dlm_mode),
        "pl": queueing.PlSource(pl, grid),
    }


def cmd_runthrough(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    grid = cfg.grid.grid()
    rt = cfg.runthrough
    probes = rt.probes or (grid.horizon / 2, grid.horizon)
    service = rt.service_dist()
    threads = args.threads or 1
    rows = []
    for name, src in _sources(cfg, out, args).items():
        stats = queueing.run_through(
            src, service, rt.replications, rt.seed + _seed_shift(cfg, args),
            probes=probes, grid=grid, threads=threads,
        )
        for p, s in zip(stats.probes, stats.stats):
            rows.append((name, p, s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.n))
    path = os.path.join(out, f"runthrough_{rt.service}.csv")
    csvio.write_csv(
        path,
        "runthrough-v1",
        ["source", "probe", "mean", "ci_half", "variance", "var_lo", "var_hi", "replications"],
        rows,
    )
    print(f"wrote {path}")
    return 0


def _fig2_curves(cfg: ExperimentConfig, out: str, args, model, trained: bool):
    grid, scheme = cfg.grid.grid(), cfg.scheme.scheme()
    rep = cfg.report
    test = dspp.generate_dataset(
        cfg.truth.drift_spec(), cfg.truth.z0, grid, scheme,
        rep.test_n, rep.test_seed + _seed_shift(cfg, args), keep_paths=True,
    )
    test_mean = np.mean([p.values for p in test.paths], axis=0)
    dlm_mean = inference.posterior_mean_curve(
        model, test.samples, grid, rep.posterior_paths, rep.seed
    )
    data = load_dataset(args.dataset or os.path.join(out, "dataset.csv"))
    pl = baselines.pl_mle(data, cfg.baseline.pieces)
    pl_curve = np.asarray(baselines.evaluate(pl, grid.times()), dtype=np.float64)
    tt = grid.times()
    csvio.write_csv(
        os.path.join(out, "intensity_curves.csv"),
        "intensity-curves-v1",
        ["t", "test_mean", "dlm_mean", "pl_fit"],
        zip(tt, test_mean, dlm_mean, pl_curve),
    )

    def integrate(v):
        c = np.zeros(len(v))
        c[1:] = np.cumsum(v[:-1]) * grid.dt
        return c

    csvio.write_csv(
        os.path.join(out, "integrated_intensity_curves.csv"),
        "integrated-intensity-curves-v1",
        ["t", "test_mean", "dlm_mean", "pl_fit"],
        zip(tt, integrate(test_mean), integrate(dlm_mean), integrate(pl_curve)),
    )


def _count_stats_rows(tag_value, sources, scheme, grid, replications, seed):
    rows = []
    for name, src in sources.items():
        counts = queueing.simulate_count_samples(src, scheme, replications, seed)
        for j, epoch in enumerate(scheme.epochs):
            s = queueing.summarize(counts[:, j].astype(float))
            rows.append((tag_value, name, epoch, s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.n))
    return rows


def cmd_report(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    grid, scheme = cfg.grid.grid(), cfg.scheme.scheme()
    rep = cfg.report
    suite = args.suite
    model, _g, adam, meta = checkpoint.load_model(
        args.checkpoint or os.path.join(out, "model.ckpt")
    )
    trained = bool(meta.get("trained", False))
    csvio.write_json(os.path.join(out, "report.meta.json"), {"trained": trained, "suite": suite})

    if suite in ("core", "all"):
        _fig2_curves(cfg, out, args, model, trained)
        for service_name in ("exponential", "erlang"):
            rt = cfg.runthrough
            service = (
                queueing.Exponential(rt.mu)
                if service_name == "exponential"
                else queueing.Erlang(rt.erlang_shape, rt.erlang_rate)
            )
            rows = []
            probes = rt.probes or (grid.horizon / 2, grid.horizon)
            for name, src in _sources(cfg, out, args).items():
                stats = queueing.run_through(
                    src, service, rt.replications, rt.seed + _seed_shift(cfg, args),
                    probes=probes, grid=grid, threads=args.threads or 1,
                )
                for p, s in zip(stats.probes, stats.stats):
                    rows.append((name, p, s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.n))
            csvio.write_csv(
                os.path.join(out, f"runthrough_{service_name}.csv"),
                "runthrough-v1",
                ["source", "probe", "mean", "ci_half", "variance", "var_lo", "var_hi", "replications"],
                rows,
            )

    if suite in ("eta", "all"):
        rows = []
        data_for_pl = load_dataset(args.dataset or os.path.join(out, "dataset.csv"))
        for i, eta in enumerate(rep.eta_sweep):
            truth = (
                sde.cir_model(cfg.truth.kappa, cfg.truth.beta, eta)
                if eta > 0
                else sde.ode_model(cfg.truth.kappa, cfg.truth.beta)
            )
            data = dspp.generate_dataset(
                truth, cfg.truth.z0, grid, scheme, cfg.dataset.n, cfg.dataset.seed + i
            )
            mcfg = cfg.model.model_config()
            mcfg = inference.ModelConfig(**{**mcfg.__dict__, "eta": eta})
            m_i, _ = inference.train(
                data, cfg.train.train_config(grid),
                init_seed=cfg.train.init_seed + i, model_config=mcfg,
            )
            pl = baselines.pl_mle(data, cfg.baseline.pieces)
            srcs = {
                "test": queueing.TrueModelSource(truth, cfg.truth.z0, grid),
                "dlm": queueing.DlmSource(m_i, grid, scheme, mode=cfg.runthrough.dlm_mode),
                "pl": queueing.PlSource(pl, grid),
            }
            service = cfg.runthrough.service_dist()
            probes = cfg.runthrough.probes or (grid.horizon / 2, grid.horizon)
            for name, src in srcs.items():
                stats = queueing.run_through(
                    src, service, rep.eta_replications, cfg.runthrough.seed + 1000 * (i + 1),
                    probes=probes, grid=grid, threads=args.threads or 1,
                )
                for p, s in zip(stats.probes, stats.stats):
                    rows.append((eta, name, p, s.mean, s.variance, s.var_lo, s.var_hi))
            del data_for_pl
        csvio.write_csv(
            os.path.join(out, "eta_sweep.csv"),
            "eta-sweep-v1",
            ["eta", "source", "probe", "mean", "variance", "var_lo", "var_hi"],
            rows,
        )

    if suite in ("nhpp", "all"):
        truth = sde.ode_model(cfg.truth.kappa, cfg.truth.beta)
        rows = []
        for i, d in enumerate(rep.d_sweep):
            data = dspp.generate_dataset(
                truth, cfg.truth.z0, grid, scheme, cfg.dataset.n, cfg.dataset.seed + 100 + i
            )
            mcfg = cfg.model.model_config()
            mcfg = inference.ModelConfig(**{**mcfg.__dict__, "eta": float(d) ** -0.5})
            m_i, _ = inference.train(
                data, cfg.train.train_config(grid),
                init_seed=cfg.train.init_seed + 100 + i, model_config=mcfg,
            )
            pl = baselines.pl_mle(data, d)
            srcs = {
                "test": queueing.TrueModelSource(truth, cfg.truth.z0, grid),
                "dlm": queueing.DlmSource(m_i, grid, scheme, mode=cfg.runthrough.dlm_mode),
                "pl": queueing.PlSource(pl, grid),
            }
            counts_rows = _count_stats_rows(
                d, srcs, scheme, grid, rep.count_replications, cfg.runthrough.seed + 5000 + i
            )
            rows += [r for r in counts_rows if r[2] == scheme.epochs[-1]]
        csvio.write_csv(
            os.path.join(out, "nhpp_sweep.csv"),
            "nhpp-sweep-v1",
            ["d", "source", "epoch", "mean", "ci_half", "variance", "var_lo", "var_hi", "replications"],
            rows,
        )

    if suite in ("diffusion", "all"):
        truth = cfg.truth.drift_spec()
        data = dspp.generate_dataset(
            truth, cfg.truth.z0, grid, scheme, cfg.dataset.n, cfg.dataset.seed + 200
        )
        mcfg = cfg.model.model_config()
        mcfg = inference.ModelConfig(**{**mcfg.__dict__, "diffusion": "learned"})
        m_i, _ = inference.train(
            data, cfg.train.train_config(grid),
            init_seed=cfg.train.init_seed + 200, model_config=mcfg,
        )
        pl = baselines.pl_mle(data, cfg.baseline.pieces)
        srcs = {
            "test": queueing.TrueModelSource(truth, cfg.truth.z0, grid),
            "dlm": queueing.DlmSource(m_i, grid, scheme, mode=cfg.runthrough.dlm_mode),
            "pl": queueing.PlSource(pl, grid),
        }
        rows = _count_stats_rows(
            "learned", srcs, scheme, grid, rep.count_replications, cfg.runthrough.seed + 7000
        )
        csvio.write_csv(
            os.path.join(out, "learned_diffusion.csv"),
            "learned-diffusion-v1",
            ["tag", "source", "epoch", "mean", "ci_half", "variance", "var_lo", "var_hi", "replications"],
            rows,
        )

    print(f"report ({suite}) written to {out}")
    return 0


def cmd_selftest(cfg: ExperimentConfig, args) -> int:
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
        failures += 0 if ok else 1

    spec = nn.MLPSpec(2, 3, 8)
    model = nn.init_params(spec, 7)
    x = np.array([1.0, 2.0])
    g = nn.grad_params(model, x)
    h = 1e-5
    i = spec.n_params // 2
    p = model.params.copy()
    p[i] += h
    up = nn.forward(model.with_params(p), x)
    p[i] -= 2 * h
    dn = nn.forward(model.with_params(p), x)
    fd = (up - dn) / (2 * h)
    check("nn gradient vs finite difference", abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd)))

    grid = sde.TimeGrid(4.0, 600)
    path = sde.euler_maruyama(
        sde.ode_model(0.3, 80.0), 5.0, grid, sde.NoisePath(grid, np.zeros(600))
    )
    err = abs(path.values[-1] - (80 - 75 * np.exp(-1.2)))
    check("deterministic mean-reversion oracle", err <= 0.1, f"err={err:.4f}")

    grid = sde.TimeGrid(2.0, 30)
    cpath = sde.IntensityPath(grid, np.full(31, 0.5))
    scheme = dspp.ObservationScheme((1.0, 2.0))
    total = 0.0
    for k1 in range(21):
        for k2 in range(k1, 21):
            total += np.exp(dspp.log_likelihood(dspp.CountSample((k1, k2)), cpath, scheme))
    check("likelihood normalization", abs(total - 1.0) <= 1e-6, f"sum={total:.8f}")

    grid = sde.TimeGrid(4.0, 60)
    flat = sde.IntensityPath(grid, np.full(61, 80.0))
    occ = []
    for r in range(2000):
        stream = queueing.arrivals_from_path(flat, 10_000 + r)
        occ.append(queueing.simulate_infinite_server(stream, queueing.Exponential(2.0), [4.0], 20_000 + r)[0])
    occ = np.array(occ, dtype=float)
    target = 40.0 * (1 - np.exp(-8.0))
    se = occ.std(ddof=1) / np.sqrt(len(occ))
    check(
        "infinite-server transient oracle",
        abs(occ.mean() - target) <= 4 * se,
        f"mean={occ.mean():.2f} target={target:.2f}",
    )

    scheme = dspp.ObservationScheme((0.4, 1.0))
    grid = sde.TimeGrid(1.0, 15)
    m = inference.initial_model(inference.ModelConfig(2, 6), scheme, 3)
    batch = [dspp.CountSample((3, 7))]
    e1 = inference.elbo_saa(m, batch, scheme, grid, 3, 42)
    e2 = inference.elbo_saa(m, batch, scheme, grid, 3, 42)
    check("elbo determinism", e1 == e2)
    g = inference.elbo_gradient(m, batch, scheme, grid, 3, 42)
    vec = inference.param_vector(m)
    i = len(vec) // 3
    vp = vec.copy(); vp[i] += h
    vm = vec.copy(); vm[i] -= h
    fd = (
        inference.elbo_saa(inference.with_param_vector(m, vp), batch, scheme, grid, 3, 42)
        - inference.elbo_saa(inference.with_param_vector(m, vm), batch, scheme, grid, 3, 42)
    ) / (2 * h)
    check("elbo gradient vs finite difference", abs(g[i] - fd) <= 1e-3 * max(1.0, abs(fd)))

    print(f"{'OK' if failures == 0 else 'FAILED'}: {failures} failure(s)")
    return 0 if failures == 0 else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dspp-dlm", description=__doc__)
    p.add_argument("--config", help="experiment config (TOML)")
    p.add_argument("--seed", type=int, help="additive shift applied to all stage seeds")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: serial)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--keep-paths", action="store_true", help="retain latent paths for diagnostics")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="simulate a training dataset")
    tp = sub.add_parser("train", help="fit the deep latent model")
    tp.add_argument("--dataset", help="dataset CSV (default <out>/dataset.csv)")
    tp.add_argument("--resume", help="checkpoint to continue training from")
    bp = sub.add_parser("baseline", help="fit NHPP baselines")
    bp.add_argument("--dataset")
    bp.add_argument("--pieces", type=int, nargs="*", help="piece counts (default from config)")
    rp = sub.add_parser("runthrough", help="queueing run-through experiment")
    rp.add_argument("--checkpoint")
    rp.add_argument("--baseline-fit")
    pp = sub.add_parser("report", help="emit experiment tables and plot data")
    pp.add_argument("--checkpoint")
    pp.add_argument("--dataset")
    pp.add_argument("--baseline-fit")
    pp.add_argument(
        "--suite",
        choices=["core", "eta", "nhpp", "diffusion", "all"],
        default="core",
    )
    sub.add_parser("selftest", help="run built-in numerical checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
        handler = {
            "generate": cmd_generate,
            "train": cmd_train,
            "baseline": cmd_baseline,
            "runthrough": cmd_runthrough,
            "report": cmd_report,
            "selftest": cmd_selftest,
        }[args.command]
        return handler(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except checkpoint.CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 2
    except (
        sde.IntegrationError,
        inference.TrainingDivergedError,
        baselines.ConvergenceError,
    ) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
