"""Command-line interface: ``vmlv simulate | forward | price-option | calibrate | deseasonalize``.

Exit codes: 0 success, 2 configuration error, 3 numerical or measure
condition failure, 4 I/O error.  Every command writes ``manifest.json`` next
to its outputs with the config hash, seed and library versions.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import platform
import sys

import click
import numpy as np
import scipy

from . import __version__
from .calibration import PriceSeries, business_days, deseasonalize, empirical_acf, run_pipeline
from .forward import (ForwardSurface, MeasureMode, PricingMeasure, forward_vol_term_structure,
                      simulate_history)
from .kernels import kernel_from_dict
from .levy import EsscherParams, levy_from_dict
from .lss import LssProcess, SimConfig, simulate, write_paths_binary, write_paths_csv
from .options import FourierGrid, OptionSpec, price_option
from .spot import Seasonality, SpotKind, SpotModel, spot_path
from .volatility import vol_from_dict

EXIT_CONFIG, EXIT_MATH, EXIT_IO = 2, 3, 4

_TOP_KEYS = {"kernel", "levy", "vol", "seasonality", "spot_kind", "mu", "drift", "start_date"}


class ConfigError(ValueError):
    pass


def load_config(path) -> tuple[dict, str]:
    """Read a JSON model config; returns the dict and its SHA-256."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg, hashlib.sha256(raw).hexdigest()


def build_model(cfg: dict) -> SpotModel:
    """Validate ``cfg`` and build the spot model; raises :class:`ConfigError`."""
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("kernel", "levy"):
        if not isinstance(cfg.get(key), dict):
            raise ConfigError(f"config needs an object '{key}'")
    try:
        g = kernel_from_dict(cfg["kernel"])
        driver = levy_from_dict(cfg["levy"])
        vol = vol_from_dict(cfg.get("vol", {"family": "constant", "level": 1.0}))
        drift = cfg.get("drift")
        q, weight = None, 0.0
        if drift is not None:
            q = kernel_from_dict(drift["kernel"])
            weight = float(drift["weight"])
        core = LssProcess(g, driver, vol, float(cfg.get("mu", 0.0)), q, weight)
        seas = Seasonality.from_dict(cfg.get("seasonality", {}))
        return SpotModel(SpotKind(cfg.get("spot_kind", "geometric")), seas, core)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"invalid model config: {e}") from None


def _threads(n):
    """Cap BLAS threads when threadpoolctl is available."""
    n = n or os.environ.get("LSS_THREADS")
    if not n:
        return contextlib.nullcontext(), None
    n = int(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext(), n
    return threadpool_limits(n), n


def _manifest(out_dir, command, config_hash, seed, extra=None):
    info = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "versions": {"vmlv": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    info.update(extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)


def _run(fn):
    """Map exceptions to exit codes."""
    try:
        fn()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except OSError as e:
        click.echo(f"I/O error: {e}", err=True)
        sys.exit(EXIT_IO)
    except (ValueError, ArithmeticError) as e:
        click.echo(f"numerical error: {e}", err=True)
        sys.exit(EXIT_MATH)


def _model_from_path(config):
    cfg, h = load_config(config)
    return cfg, h, build_model(cfg)


def _measure(theta, eta, mode):
    try:
        return PricingMeasure(EsscherParams(theta, eta), MeasureMode(mode))
    except ValueError as e:
        raise ConfigError(str(e)) from None


@click.group()
@click.version_option(__version__)
def main():
    """Volatility-modulated Levy-driven spot price models."""


@main.command("simulate")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--paths", "n_paths", default=100, show_default=True)
@click.option("--dt", default=0.01, show_default=True)
@click.option("--horizon", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--binary", is_flag=True, help="Write paths.bin instead of paths.csv.")
@click.option("--threads", default=None, type=int)
def cmd_simulate(config, n_paths, dt, horizon, seed, out_dir, binary, threads):
    """Simulate the stochastic core and spot prices."""
    def body():
        cfg, h, model = _model_from_path(config)
        try:
            sc = SimConfig(dt, horizon, n_paths, seed)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        limit, n_thr = _threads(threads)
        with limit:
            try:
                sim = simulate(model.core, sc)
            except ValueError as e:
                click.echo(f"integrability failure: {e}", err=True)
                sys.exit(EXIT_MATH)
        os.makedirs(out_dir, exist_ok=True)
        if binary:
            write_paths_binary(os.path.join(out_dir, "paths.bin"), sim.paths, dt)
        else:
            write_paths_csv(os.path.join(out_dir, "paths.csv"), sim.times, sim.paths)
        prices = spot_path(model, sim.times, sim.paths[0])
        PriceSeries(business_days(cfg.get("start_date", "2002-01-01"), prices.size),
                    prices).to_csv(os.path.join(out_dir, "prices.csv"))
        y = sim.paths
        n_lag = min(10, (y.shape[1] - 1) // 2)
        acf = np.mean([empirical_acf(p, n_lag) for p in y], axis=0) if n_lag >= 1 else []
        summary = {"mean": float(y.mean()), "var": float(y.var()),
                   "acf": [float(a) for a in acf], "n_paths": n_paths, "n_steps": y.shape[1] - 1}
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        _manifest(out_dir, "simulate", h, seed, {"dt": dt, "horizon": horizon, "paths": n_paths,
                                                 "threads": n_thr})
    _run(body)


def _surface(model, measure, t, dt, seed, window=None):
    hist = simulate_history(model, measure, max(t, dt), dt, 1, seed, window=window, under="P")
    k = int(round(t / dt))
    return ForwardSurface(model, measure, hist.state(k))


@main.command("forward")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--t", "t_now", default=0.0, show_default=True)
@click.option("--maturities", required=True, help="Comma-separated maturities.")
@click.option("--theta", default=0.0, show_default=True)
@click.option("--eta", default=0.0, show_default=True)
@click.option("--mode", type=click.Choice(["girsanov", "esscher"]), default="girsanov",
              show_default=True)
@click.option("--dt", default=0.01, show_default=True)
@click.option("--n-mc", default=10_000, show_default=True)
@click.option("--window", default=None, type=float,
              help="History window behind t; defaults to the kernel's L2 tail point.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_forward(config, t_now, maturities, theta, eta, mode, dt, n_mc, window, seed, out_dir):
    """Forward curve ``T, F_t(T), sigma_F(t, T)`` from a simulated state at ``t``."""
    def body():
        _, h, model = _model_from_path(config)
        try:
            mats = [float(x) for x in maturities.split(",") if x.strip()]
        except ValueError:
            raise ConfigError("maturities must be numbers") from None
        if any(T < t_now for T in mats):
            raise ConfigError("maturities must not precede --t")
        meas = _measure(theta, eta, mode)
        fs = _surface(model, meas, t_now, dt, seed, window)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        rows = []
        for T in mats:
            F = float(fs.forward(T, n_mc=n_mc, rng=rng)[0])
            sig = float(forward_vol_term_structure(fs, T)[0])
            rows.append((T, F, sig))
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "forward.csv"), "w") as fh:
            fh.write("T,F,sigma_F\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        _manifest(out_dir, "forward", h, seed, {"t": t_now, "theta": theta, "eta": eta,
                                                "mode": mode, "spot": float(fs.spot()[0])})
    _run(body)


@main.command("price-option")
@click.argument("config", type=click.Path(dir_okay=False))
@click.argument("option", type=click.Path(dir_okay=False))
@click.option("--t", "t_now", default=0.0, show_default=True)
@click.option("--theta", default=0.0, show_default=True)
@click.option("--eta", default=0.0, show_default=True)
@click.option("--dt", default=0.01, show_default=True)
@click.option("--window", default=None, type=float,
              help="History window behind t; defaults to the kernel's L2 tail point.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_price_option(config, option, t_now, theta, eta, dt, window, seed, out_dir):
    """Price a European option given as JSON; writes ``price.json``."""
    def body():
        _, h, model = _model_from_path(config)
        with open(option) as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"option spec is not valid JSON: {e}") from None
        try:
            grid = FourierGrid(**spec.pop("grid", {}))
            o = OptionSpec(**spec)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid option spec: {e}") from None
        meas = _measure(theta, eta, "girsanov")
        fs = _surface(model, meas, t_now, dt, seed, window)
        res = price_option(o, fs, grid)
        res["forward"] = float(fs.forward_geometric_gaussian(o.maturity)[0])
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "price.json"), "w") as fh:
            json.dump(res, fh, indent=2)
        click.echo(json.dumps(res))
        _manifest(out_dir, "price-option", h, seed, {"t": t_now, "theta": theta, "eta": eta})
    _run(body)


@main.command("calibrate")
@click.argument("prices", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--max-lag", default=None, type=int)
@click.option("--robust-iters", default=20, show_default=True)
def cmd_calibrate(prices, out_dir, max_lag, robust_iters):
    """Run the calibration pipeline on a ``date,price`` CSV."""
    def body():
        s = PriceSeries.from_csv(prices)
        cfg = {"out_dir": out_dir, "robust_iters": robust_iters}
        if max_lag is not None:
            cfg["max_lag"] = max_lag
        report = run_pipeline(s, cfg)
        with open(prices, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        _manifest(out_dir, "calibrate", digest, None, {"top_family": report["top_family"]})
    _run(body)


@main.command("deseasonalize")
@click.argument("prices", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--robust-iters", default=20, show_default=True)
def cmd_deseasonalize(prices, out_dir, robust_iters):
    """Write ``residuals.csv`` and ``seasonality.json``."""
    def body():
        s = PriceSeries.from_csv(prices)
        res = deseasonalize(s, robust_iters)
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "residuals.csv"), "w") as fh:
            fh.write("date,residual\n")
            for d, r in zip(s.timestamps, res.residuals):
                fh.write(f"{d},{float(r)!r}\n")
        out = {"seasonality": res.seasonality.to_dict(), "iterations": res.iterations,
               "residual_mean": float(res.residuals.mean()),
               "residual_sd": float(res.residuals.std(ddof=1))}
        with open(os.path.join(out_dir, "seasonality.json"), "w") as fh:
            json.dump(out, fh, indent=2)
        with open(prices, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        _manifest(out_dir, "deseasonalize", digest, None)
    _run(body)


if __name__ == "__main__":
    main()
