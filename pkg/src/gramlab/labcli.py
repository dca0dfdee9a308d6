"""Command-line experiment harness.

One declarative spec file (``key = value`` lines, comma lists) drives one
invocation; results land in an output directory as CSV files plus a JSON
manifest carrying the SHA-256 of the canonicalized spec, the seeds, and
the produced file list.  Every experiment is a pure function of
``(spec, master seed)``: reruns produce byte-identical CSV bodies.

Subcommands::

    labcli gen-data        --spec f --out dir   dataset generation
    labcli gradcheck       --spec f --out dir   finite-difference audit
    labcli kernel          --spec f --out dir   population kernel entries
    labcli train           --spec f --out dir   convergence experiment
    labcli concentration   --spec f --out dir   width-concentration sweep
    labcli depth-scan      --spec f --out dir   depth-dependence experiment
    labcli gram-stability  --spec f --out dir   training-drift sweep

All take ``--seed`` (master seed override) and ``--threads``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .activations import identity, relu, softplus
from .gram_kernel import gram_drift, gram_layer_H, kernel_general
from .nets import Dataset, NetworkConfig, forward_all, grad_check, init_params
from .numlin import Rng, frobenius_norm, sym_eig_min
from .trainer import MetricsLog, TrainConfig, train

__all__ = ["main", "parse_spec", "gen_data", "run_experiment"]

_ACTIVATIONS = {"softplus": softplus, "relu": relu, "identity": identity}

# Columns shared by every CSV row, in fixed order.
_KEY_COLUMNS = ("experiment", "arch", "H", "m", "n", "seed", "iteration", "kind")


class SpecError(ValueError):
    """A spec file problem, carrying the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"spec field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------


def _parse_scalar(token: str):
    token = token.strip()
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            pass
    return token


def parse_spec(path: str | Path) -> dict:
    """Parse a ``key = value`` spec file; comma-separated values are lists."""
    spec: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise SpecError(f"line {lineno}", "empty key")
        if "," in value:
            spec[key] = [_parse_scalar(tok) for tok in value.split(",")]
        else:
            spec[key] = _parse_scalar(value)
    return spec


def canonical_spec_hash(spec: dict) -> str:
    lines = []
    for key in sorted(spec):
        value = spec[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def _get(spec: dict, field: str, default=None, required: bool = False):
    if field in spec:
        return spec[field]
    if required:
        raise SpecError(field, "missing required field")
    return default


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def _network_config(spec: dict, arch: str, depth: int, width: int) -> NetworkConfig:
    act_name = _get(spec, "activation", "softplus")
    if act_name not in _ACTIVATIONS:
        raise SpecError("activation", f"unknown activation {act_name!r}")
    common = dict(
        arch=arch,
        depth=depth,
        width=width,
        c_res=float(_get(spec, "c_res", 0.5)),
        activation=_ACTIVATIONS[act_name](),
    )
    if arch == "convresnet":
        return NetworkConfig(
            channels=int(_get(spec, "channels", required=True)),
            pixels=int(_get(spec, "pixels", required=True)),
            filter_size=int(_get(spec, "filter", required=True)),
            **common,
        )
    return NetworkConfig(input_dim=int(_get(spec, "d", required=True)), **common)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def gen_data(n: int, dims, rng: Rng, allow_parallel: bool = False) -> Dataset:
    """Unit-sphere inputs (Frobenius sphere for feature maps), labels in
    [-1, 1]; inputs are resampled until every pair satisfies the
    non-parallelism margin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = tuple(dims) if isinstance(dims, (tuple, list)) else (int(dims),)
    accepted: list[np.ndarray] = []
    failures = 0
    while len(accepted) < n:
        x = rng.normal(shape)
        x = x / np.linalg.norm(x)
        flat = x.ravel()
        if not allow_parallel and any(
            abs(flat @ other.ravel()) > 1.0 - 1e-6 for other in accepted
        ):
            failures += 1
            if failures >= 100:
                raise ValueError(
                    "100 consecutive resampling failures; dimension too small "
                    "for the requested sample count"
                )
            continue
        failures = 0
        accepted.append(x)
    labels = rng.uniform(-1.0, 1.0, n)
    return Dataset(np.stack(accepted), labels, allow_parallel=allow_parallel)


def _dataset_from_spec(spec: dict, rng: Rng) -> tuple[Dataset, dict]:
    n = int(_get(spec, "n", required=True))
    arch = _get(spec, "arch", "fc")
    duplicate = bool(_get(spec, "duplicate_inputs", 0))
    if arch == "convresnet":
        dims = (int(_get(spec, "channels", required=True)),
                int(_get(spec, "pixels", required=True)))
    else:
        dims = int(_get(spec, "d", required=True))
    data = gen_data(n, dims, rng, allow_parallel=duplicate)
    if duplicate:
        # Degenerate control: overwrite the last input with a copy of the first.
        inputs = data.inputs.copy()
        inputs[-1] = inputs[0]
        data = Dataset(inputs, data.labels, allow_parallel=True)
    return data, {"n": n, "arch": arch}


# ---------------------------------------------------------------------------
# CSV / manifest emission
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit(rows: list[dict], columns: list[str], path: Path) -> None:
    """Write rows in a fixed column order (missing cells are empty)."""
    for row in rows:
        unknown = set(row) - set(columns)
        if unknown:
            raise ValueError(f"row has columns outside the schema: {sorted(unknown)}")
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(col)) for col in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_manifest(
    out_dir: Path, spec: dict, seeds: list[int], files: list[str], elapsed: float
) -> None:
    manifest = {
        "spec_hash": canonical_spec_hash(spec),
        "version": __version__,
        "seeds": seeds,
        "files": sorted(files),
        "wall_clock_seconds": round(elapsed, 3),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _keyed(experiment, arch, H, m, n, seed, iteration, kind, **extra) -> dict:
    row = dict(
        experiment=experiment, arch=arch, H=H, m=m, n=n,
        seed=seed, iteration=iteration, kind=kind,
    )
    row.update(extra)
    return row


def _seed_list(spec: dict, master_seed: int) -> list[int]:
    if "seed_list" in spec:
        seeds = [int(s) for s in _as_list(spec["seed_list"])]
    else:
        count = int(_get(spec, "seeds", 1))
        seeds = [master_seed + i for i in range(count)]
    if len(set(seeds)) != len(seeds):
        raise SpecError("seed_list", "seeds must be distinct")
    return seeds


def _parallel(tasks, threads: int):
    """Run thunks, preserving order; thread pool only when asked."""
    if threads <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _exp_gen_data(spec: dict, master_seed: int, threads: int):
    data, meta = _dataset_from_spec(spec, Rng(master_seed, 0))
    n = meta["n"]
    width = data.inputs.reshape(n, -1).shape[1]
    columns = list(_KEY_COLUMNS) + [f"x{i}" for i in range(width)] + ["y"]
    rows = []
    for i in range(n):
        extra = {f"x{j}": v for j, v in enumerate(data.inputs[i].ravel())}
        extra["y"] = data.labels[i]
        rows.append(_keyed("gen-data", meta["arch"], 0, 0, n, master_seed, i,
                           "sample", **extra))
    return {"gen_data.csv": (rows, columns)}, [master_seed]


def _exp_gradcheck(spec: dict, master_seed: int, threads: int):
    arch = _get(spec, "arch", "fc")
    depth = int(_get(spec, "H", required=True))
    width = int(_get(spec, "m", required=True))
    if width > 64:
        raise SpecError("m", "gradcheck is finite-difference based; use m <= 64")
    seeds = _seed_list(spec, master_seed)
    config = _network_config(spec, arch, depth, width)
    eps = float(_get(spec, "eps", 1e-5))
    n = int(_get(spec, "n", required=True))

    def trial(seed):
        data, _ = _dataset_from_spec(spec, Rng(seed, 1))
        params = init_params(config, Rng(seed, 2))
        report = grad_check(params, config, data, eps)
        return _keyed("gradcheck", arch, depth, width, n, seed, 0, "trial",
                      max_rel_error=report.max_relative_error,
                      worst_parameter=report.worst_parameter)

    rows = _parallel([lambda s=s: trial(s) for s in seeds], threads)
    columns = list(_KEY_COLUMNS) + ["max_rel_error", "worst_parameter"]
    return {"gradcheck.csv": (rows, columns)}, seeds


def _exp_kernel(spec: dict, master_seed: int, threads: int):
    arch = _get(spec, "arch", "fc")
    depth = int(_get(spec, "H", required=True))
    config = _network_config(spec, arch, depth, max(2, int(_get(spec, "m", 2))))
    data, meta = _dataset_from_spec(spec, Rng(master_seed, 0))
    state = kernel_general(data, config)
    n = meta["n"]
    rows = []
    for i in range(n):
        for j in range(n):
            rows.append(_keyed("kernel", arch, depth, 0, n, master_seed, 0, "entry",
                               i=i, j=j, value=state.final[i, j]))
    rows.append(_keyed("kernel", arch, depth, 0, n, master_seed, 0, "summary",
                       lambda_min=sym_eig_min(state.final)))
    columns = list(_KEY_COLUMNS) + ["i", "j", "value", "lambda_min"]
    return {"kernel.csv": (rows, columns)}, [master_seed]


def _train_rows(
    experiment: str, spec: dict, config: NetworkConfig, data: Dataset,
    seed: int, log: MetricsLog,
) -> list[dict]:
    margin = float(_get(spec, "envelope_margin", 0.9))
    lam_hat = margin * log.lambda_min_initial
    base = log.initial_loss
    rate = 1.0 - log.eta * lam_hat / 2.0
    rows = []
    violations = 0
    for rec in log.records:
        envelope = base * rate**rec.iteration
        violated = rec.loss > envelope * (1.0 + 1e-12)
        violations += int(violated)
        rows.append(_keyed(
            experiment, config.arch, config.depth, config.width, data.size,
            seed, rec.iteration, "iteration",
            loss=rec.loss, residual_norm=rec.residual_norm,
            lambda_min_gram=rec.lambda_min_gram,
            weight_drift_max=max(rec.weight_drift), output_drift=rec.output_drift,
            gram_drift_fro=rec.gram_drift_fro, gram_drift_op=rec.gram_drift_op,
            envelope=envelope, violation=violated,
        ))
    ks, losses = log.iterations(), np.maximum(log.losses(), 1e-300)
    slope = float(np.polyfit(ks, np.log(losses), 1)[0]) if len(ks) > 1 else 0.0
    rows.append(_keyed(
        experiment, config.arch, config.depth, config.width, data.size,
        seed, log.records[-1].iteration, "summary",
        eta=log.eta, lambda_min_initial=log.lambda_min_initial,
        log_loss_slope=slope, violation_count=violations,
        loss_ratio=log.final_loss / max(base, 1e-300), diverged=log.diverged,
    ))
    return rows


_TRAIN_COLUMNS = list(_KEY_COLUMNS) + [
    "loss", "residual_norm", "lambda_min_gram", "weight_drift_max",
    "output_drift", "gram_drift_fro", "gram_drift_op", "envelope", "violation",
    "eta", "lambda_min_initial", "log_loss_slope", "violation_count",
    "loss_ratio", "diverged",
]


def _exp_train(spec: dict, master_seed: int, threads: int):
    arch = _get(spec, "arch", "fc")
    depth = int(_get(spec, "H", required=True))
    width = int(_get(spec, "m", required=True))
    config = _network_config(spec, arch, depth, width)
    seeds = _seed_list(spec, master_seed)
    iterations = int(_get(spec, "iterations", 500))
    eta_field = _get(spec, "eta", "auto")
    eta_scale = float(_get(spec, "eta_scale", 1.0))
    cadence = int(_get(spec, "cadence", 10))
    data, _ = _dataset_from_spec(spec, Rng(master_seed, 0))

    def trial(seed):
        params = init_params(config, Rng(seed, 2))
        eta = None if eta_field == "auto" else float(eta_field)
        if eta is None and eta_scale != 1.0:
            from .trainer import auto_step_size

            eta = eta_scale * auto_step_size(params, config, data)
        tc = TrainConfig(eta=eta, iterations=iterations, cadence=cadence)
        log, _ = train(params, config, tc, data)
        return _train_rows("train", spec, config, data, seed, log)

    results = _parallel([lambda s=s: trial(s) for s in seeds], threads)
    rows = [row for result in results for row in result]
    return {"train.csv": (rows, _TRAIN_COLUMNS)}, seeds


def _exp_concentration(spec: dict, master_seed: int, threads: int):
    arch = _get(spec, "arch", "fc")
    depth = int(_get(spec, "H", required=True))
    widths = [int(m) for m in _as_list(_get(spec, "m_list", required=True))]
    if len(widths) < 3 and not _get(spec, "allow_short_sweep", 0):
        raise SpecError("m_list", "width sweep needs at least 3 values")
    seeds = _seed_list(spec, master_seed)
    if len(seeds) < 10 and not _get(spec, "allow_few_seeds", 0):
        raise SpecError("seeds", "concentration sweep needs at least 10 seeds")
    data, meta = _dataset_from_spec(spec, Rng(master_seed, 0))
    kernel = kernel_general(data, _network_config(spec, arch, depth, widths[0]))
    lam_k = sym_eig_min(kernel.final)
    n = meta["n"]

    def trial(width, seed):
        config = _network_config(spec, arch, depth, width)
        params = init_params(config, Rng(seed, 2))
        traces = forward_all(params, config, data)
        gram = gram_layer_H(traces, params, config)
        lam_g = sym_eig_min(gram)
        return _keyed("concentration", arch, depth, width, n, seed, 0, "trial",
                      sup_error=float(np.max(np.abs(gram - kernel.final))),
                      lambda_min_gram=lam_g, lambda_min_kernel=lam_k,
                      lambda_abs_diff=abs(lam_g - lam_k))

    tasks = [lambda w=w, s=s: trial(w, s) for w in widths for s in seeds]
    rows = _parallel(tasks, threads)
    medians = []
    for width in widths:
        errs = [r["sup_error"] for r in rows if r["m"] == width]
        med = float(np.median(errs))
        medians.append(med)
        rows.append(_keyed("concentration", arch, depth, width, n, master_seed, 0,
                           "summary", median_sup_error=med,
                           lambda_min_kernel=lam_k))
    slope = float(np.polyfit(np.log(widths), np.log(medians), 1)[0])
    rows.append(_keyed("concentration", arch, depth, 0, n, master_seed, 0,
                       "slope", loglog_slope=slope))
    columns = list(_KEY_COLUMNS) + [
        "sup_error", "lambda_min_gram", "lambda_min_kernel", "lambda_abs_diff",
        "median_sup_error", "loglog_slope",
    ]
    return {"concentration.csv": (rows, columns)}, seeds


def _perturbation_amplification(
    spec: dict, arch: str, depth: int, width: int, data: Dataset, seed: int
) -> float:
    """Gram response at the top layer vs the bottom layer under a fixed
    random weight perturbation applied to every layer."""
    from .gram_kernel import gram_layer

    config = _network_config(spec, arch, depth, width)
    params = init_params(config, Rng(seed, 2))
    noise_rng = Rng(seed, 3)
    perturbed = params.copy()
    for h, w in enumerate(perturbed.weights):
        noise = noise_rng.split(h).normal(w.shape)
        noise *= 0.01 * np.sqrt(width) / frobenius_norm(noise)
        w += noise
    traces = forward_all(params, config, data)
    traces_p = forward_all(perturbed, config, data)
    delta_top = gram_layer(traces_p, perturbed, config, depth) - gram_layer(
        traces, params, config, depth
    )
    delta_bottom = gram_layer(traces_p, perturbed, config, 1) - gram_layer(
        traces, params, config, 1
    )
    return frobenius_norm(delta_top) / frobenius_norm(delta_bottom)


def _exp_depth_scan(spec: dict, master_seed: int, threads: int):
    depths = [int(h) for h in _as_list(_get(spec, "H_list", required=True))]
    width = int(_get(spec, "m", required=True))
    data, meta = _dataset_from_spec(spec, Rng(master_seed, 0))
    n = meta["n"]
    seed = master_seed

    def trial(arch, depth):
        amp = _perturbation_amplification(spec, arch, depth, width, data, seed)
        row = _keyed("depth-scan", arch, depth, width, n, seed, 0, "trial",
                     amplification=amp)
        if arch == "resnet":
            config = _network_config(spec, arch, depth, width)
            lam = sym_eig_min(kernel_general(data, config).final)
            row["lambda_min_kernel"] = lam
            row["depth_sq_lambda_min"] = depth * depth * lam
        return row

    tasks = [lambda a=a, h=h: trial(a, h)
             for a in ("fc", "resnet") for h in depths]
    rows = _parallel(tasks, threads)
    columns = list(_KEY_COLUMNS) + [
        "amplification", "lambda_min_kernel", "depth_sq_lambda_min",
    ]
    return {"depth_scan.csv": (rows, columns)}, [seed]


def _exp_gram_stability(spec: dict, master_seed: int, threads: int):
    arch = _get(spec, "arch", "fc")
    depth = int(_get(spec, "H", required=True))
    widths = [int(m) for m in _as_list(_get(spec, "m_list", required=True))]
    seeds = _seed_list(spec, master_seed)
    iterations = int(_get(spec, "iterations", 200))
    cadence = int(_get(spec, "cadence", 25))
    data, meta = _dataset_from_spec(spec, Rng(master_seed, 0))
    n = meta["n"]

    def trial(width, seed):
        config = _network_config(spec, arch, depth, width)
        params = init_params(config, Rng(seed, 2))
        tc = TrainConfig(eta=None, iterations=iterations, cadence=cadence,
                         dense_until=0)
        log, _ = train(params, config, tc, data)
        lam0 = log.lambda_min_initial
        rows = []
        for rec in log.records:
            rows.append(_keyed(
                "gram-stability", arch, depth, width, n, seed, rec.iteration,
                "checkpoint",
                gram_drift_fro=rec.gram_drift_fro, gram_drift_op=rec.gram_drift_op,
                lambda_min_gram=rec.lambda_min_gram,
                lambda_ratio=rec.lambda_min_gram / lam0 if lam0 > 0 else float("nan"),
                weight_drift_max=max(rec.weight_drift),
            ))
        return rows, rec.gram_drift_fro

    tasks = [lambda w=w, s=s: trial(w, s) for w in widths for s in seeds]
    results = _parallel(tasks, threads)
    rows = [row for result, _ in results for row in result]
    finals = [final for _, final in results]
    idx = 0
    for width in widths:
        drifts = finals[idx : idx + len(seeds)]
        idx += len(seeds)
        rows.append(_keyed("gram-stability", arch, depth, width, n, master_seed,
                           iterations, "summary",
                           median_final_drift=float(np.median(drifts))))
    columns = list(_KEY_COLUMNS) + [
        "gram_drift_fro", "gram_drift_op", "lambda_min_gram", "lambda_ratio",
        "weight_drift_max", "median_final_drift",
    ]
    return {"gram_stability.csv": (rows, columns)}, seeds


_EXPERIMENTS = {
    "gen-data": _exp_gen_data,
    "gradcheck": _exp_gradcheck,
    "kernel": _exp_kernel,
    "train": _exp_train,
    "concentration": _exp_concentration,
    "depth-scan": _exp_depth_scan,
    "gram-stability": _exp_gram_stability,
}


def run_experiment(
    command: str, spec_path: str | Path, out_dir: str | Path,
    master_seed: int | None = None, threads: int = 1,
) -> dict[str, Path]:
    """Execute one experiment; returns the mapping of produced CSV paths."""
    spec = parse_spec(spec_path)
    if master_seed is None:
        master_seed = int(_get(spec, "seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    outputs, seeds = _EXPERIMENTS[command](spec, master_seed, threads)
    produced = {}
    for name, (rows, columns) in outputs.items():
        path = out / name
        emit(rows, columns, path)
        produced[name] = path
    _write_manifest(out, spec, seeds, list(outputs), time.time() - start)
    return produced


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="labcli", description="deterministic experiment harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _EXPERIMENTS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--spec", required=True, help="spec file path")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="master seed")
        cmd.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        produced = run_experiment(
            args.command, args.spec, args.out, args.seed, args.threads
        )
    except (SpecError, ValueError, OSError, FloatingPointError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SpecError):
            error["field"] = exc.field
        print(json.dumps(error), file=sys.stderr)
        return 2
    for path in produced.values():
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
