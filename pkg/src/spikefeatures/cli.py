"""Command-line interface: generate synthetic data, fit, and evaluate recovery.

Exit codes: 0 success (fit converged), 2 input/usage error, 3 fit finished
without meeting the convergence rule (results still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_to_dict, load_config
from .data import (
    build_observation_set,
    read_counts_file,
    read_covariates_file,
    write_counts_file,
    write_covariates_file,
)
from .engine import FitResult, fit as engine_fit
from .errors import DataValidationError, NumericalStateError
from .metrics import build_report
from .synthetic import (
    generate,
    generator_config_from_dict,
    generator_config_to_dict,
    read_truth_states,
    write_ground_truth,
)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config_payload: dict, seed,
                    inputs: list[Path], outputs: list[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "config_hash": _config_hash(config_payload),
        "config": config_payload,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_json(path: Path) -> dict:
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataValidationError(f"{path}: no such file")
    except json.JSONDecodeError as err:
        raise DataValidationError(f"{path}:{err.lineno}: invalid JSON ({err.msg})")
    if not isinstance(payload, dict):
        raise DataValidationError(f"{path}: expected a JSON object")
    return payload


def cmd_generate(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = _load_json(Path(args.config))
    gen_cfg = generator_config_from_dict(payload)
    obs, truth = generate(gen_cfg, seed=args.seed)

    outputs = []
    counts_path = out_dir / "counts.csv"
    write_counts_file(counts_path, obs)
    outputs.append(counts_path)
    if obs.n_covariates:
        cov_path = out_dir / "covariates.csv"
        write_covariates_file(cov_path, obs.covariates)
        outputs.append(cov_path)
    outputs.extend(write_ground_truth(out_dir, truth))
    outputs.append(
        _write_manifest(
            out_dir, "generate", generator_config_to_dict(gen_cfg), args.seed,
            [Path(args.config)], outputs, started,
        )
    )
    print(f"wrote {obs.n_obs} count records to {out_dir}")
    return 0


def _export_gamma_table(path: Path, header: list[str], index: np.ndarray,
                        shape: np.ndarray, rate: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row, a, b in zip(index, shape.reshape(-1), rate.reshape(-1)):
            cells = [str(int(v)) for v in np.atleast_1d(row)]
            fh.write(",".join(cells + [repr(float(a)), repr(float(b))]) + "\n")


def _export_fit(out_dir: Path, result: FitResult) -> list[Path]:
    U = result.obs.n_units
    K = result.config.n_features
    R = result.obs.n_covariates
    outputs = []

    path = out_dir / "baseline.csv"
    _export_gamma_table(path, ["u", "shape", "rate"], np.arange(U),
                        result.baseline.shape, result.baseline.rate)
    outputs.append(path)

    if K:
        path = out_dir / "gains.csv"
        idx = np.array([(u, k) for u in range(U) for k in range(K)])
        _export_gamma_table(path, ["u", "k", "shape", "rate"], idx,
                            result.gains.shape, result.gains.rate)
        outputs.append(path)

        path = out_dir / "features.csv"
        probs = result.feature_probs()
        with open(path, "w") as fh:
            fh.write(",".join(f"xi{k}" for k in range(K)) + "\n")
            for row in probs:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        outputs.append(path)

        path = out_dir / "chain_params.csv"
        with open(path, "w") as fh:
            fh.write("k,init_off,init_on,a00,a01,a10,a11\n")
            for k in range(K):
                init = result.init[k].counts
                trans = result.trans[k].counts.reshape(-1)
                fh.write(
                    ",".join([str(k)] + [repr(float(v)) for v in init]
                             + [repr(float(v)) for v in trans]) + "\n"
                )
        outputs.append(path)

        path = out_dir / "gain_hyper.csv"
        _export_gamma_table(
            path, ["k", "conc_shape", "conc_rate"], np.arange(K),
            result.gain_conc.shape, result.gain_conc.rate,
        )
        outputs.append(path)

    if R:
        path = out_dir / "covariate_gains.csv"
        idx = np.array([(u, r) for u in range(U) for r in range(R)])
        _export_gamma_table(path, ["u", "r", "shape", "rate"], idx,
                            result.covariate_gains.shape, result.covariate_gains.rate)
        outputs.append(path)

    if result.noise_shape is not None:
        path = out_dir / "noise_shape.csv"
        _export_gamma_table(path, ["u", "shape", "rate"], np.arange(U),
                            result.noise_shape.shape, result.noise_shape.rate)
        outputs.append(path)

    path = out_dir / "diagnostics.json"
    path.write_text(json.dumps(result.diagnostics, indent=2) + "\n")
    outputs.append(path)
    return outputs


def cmd_fit(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = load_config(Path(args.config))
    if args.restarts is not None:
        cfg.n_restarts = args.restarts
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()

    records = read_counts_file(Path(args.data))
    covariates = read_covariates_file(Path(args.covariates)) if args.covariates else None
    obs = build_observation_set(records, covariate_table=covariates)

    trace_path = out_dir / "trace.csv"
    result = engine_fit(obs, cfg, trace_path=trace_path)
    outputs = [trace_path] + _export_fit(out_dir, result)
    inputs = [Path(args.data)] + ([Path(args.covariates)] if args.covariates else [])
    outputs.append(
        _write_manifest(out_dir, "fit", config_to_dict(cfg), cfg.seed, inputs, outputs, started)
    )
    status = "converged" if result.converged else "max sweeps reached"
    print(
        f"best restart {result.restart_index}: objective {result.elbo_trace[-1]:.4f} "
        f"after {len(result.elbo_trace)} sweeps ({status})"
    )
    return 0 if result.converged else 3


def _read_features_file(path: Path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.asarray(rows).reshape(len(rows), len(header))


def cmd_evaluate(args) -> int:
    started = time.time()
    fit_dir = Path(args.fit)
    truth_path = Path(args.truth)
    if not truth_path.exists():
        raise DataValidationError(f"{truth_path}: truth states file not found")
    features_path = fit_dir / "features.csv"
    gains_path = fit_dir / "gains.csv"
    for required in (features_path, gains_path):
        if not required.exists():
            raise DataValidationError(f"{required}: fit artifact missing")

    probs = _read_features_file(features_path)
    true_states = read_truth_states(truth_path)
    if true_states.shape[0] != probs.shape[0]:
        raise DataValidationError(
            f"truth has {true_states.shape[0]} rows, fit has {probs.shape[0]}"
        )

    from .metrics import match_features, nmi_matrix  # local alias for clarity

    matrix = nmi_matrix(probs, true_states)
    assignment = match_features(matrix)

    gains_rows = np.loadtxt(gains_path, delimiter=",", skiprows=1, ndmin=2)
    K = probs.shape[1]
    gain_mean = np.zeros(K)
    log_gain_spread = np.zeros(K)
    for k in range(K):
        rows = gains_rows[gains_rows[:, 1] == k]
        means = rows[:, 2] / rows[:, 3]
        gain_mean[k] = means.mean()
        log_gain_spread[k] = np.abs(np.log(means)).mean()
    entropy = np.zeros(K)
    p = np.clip(probs, 1e-12, 1 - 1e-12)
    entropy[:] = np.mean(-p * np.log(p) - (1 - p) * np.log(1 - p), axis=0)
    from .metrics import UNUSED_LOG_GAIN

    unused = [bool(log_gain_spread[k] < UNUSED_LOG_GAIN) for k in range(K)]
    report = {
        "nmi_matrix": matrix.tolist(),
        "assignment": [[int(a), int(b)] for a, b in assignment],
        "matched_nmi": [float(matrix[i, j]) for i, j in assignment],
        "unmatched_true": sorted(set(range(true_states.shape[1])) - {i for i, _ in assignment}),
        "unused_features": unused,
        "gain_population_mean": gain_mean.tolist(),
        "mean_state_entropy_nats": entropy.tolist(),
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote metrics to {out_path} ({time.time() - started:.2f}s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikefeatures",
        description="Discover binary time-varying stimulus features from spike counts.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap for data-parallel width (currently single-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a synthetic dataset with ground truth")
    gen.add_argument("--config", required=True, help="generator config JSON")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    fit_p = sub.add_parser("fit", help="fit the latent-feature model")
    fit_p.add_argument("--data", required=True, help="counts file (t,u,n)")
    fit_p.add_argument("--covariates", default=None, help="covariate table file")
    fit_p.add_argument("--config", required=True, help="model config JSON")
    fit_p.add_argument("--out", required=True, help="output directory")
    fit_p.add_argument("--restarts", type=int, default=10)
    fit_p.add_argument("--seed", type=int, default=None)
    fit_p.set_defaults(func=cmd_fit)

    ev = sub.add_parser("evaluate", help="score a fit against ground truth")
    ev.add_argument("--fit", required=True, help="fit output directory")
    ev.add_argument("--truth", required=True, help="truth states file")
    ev.add_argument("--out", required=True, help="metrics JSON path")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalStateError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
