"""Command-line front end.

``spectralbnn {sample-prior,train,certify,eval,param-count} --config C --out DIR [--seed S]``

Every CSV starts with a ``# schema=<name>/<version> config_digest=<sha256>``
comment line followed by a header row; floats are written with 17 significant
digits so they parse back to the identical 64-bit value.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import certify as cert
from . import gp_prior, metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import load_dataset
from .model import logits, network_layers
from .svi import (
    current_alpha,
    posterior_mean,
    posterior_sample,
    predictive_probs,
    prior_variances,
    train,
)
from .layers import param_count

__all__ = ["main", "mnist_table", "k_ablation_table"]

SCHEMA_VERSION = 1
DENSE32_HEAD_WEIGHTS = 2048 * 32 + 32 * 10  # frozen-feature MLP baseline head
ABLATION_K = (1025, 768, 512, 256, 128, 64)

# -- output helpers ----------------------------------------------------------


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_csv(path: Path, schema: str, header, rows, config_digest: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}/{SCHEMA_VERSION} config_digest={config_digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, schema: str, payload: dict, config_digest: str = "") -> None:
    doc = {"schema": f"{schema}/{SCHEMA_VERSION}", "config_digest": config_digest, **payload}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(x: float):
    return float(x) if math.isfinite(x) else None


# -- parameter-count tables --------------------------------------------------


def mnist_table() -> list[dict]:
    """Weight/bias counts of the ``28 x 28 -> 10`` classifiers."""
    rows = [
        ("SpectralCirculant", "spectral1d", 784, {}),
        ("SpectralBCCB (Cin=Cout=1)", "spectral2d", (28, 28), {}),
        ("BCCB (spatial)", "bccb2d", (28, 28), {}),
        ("Conv2D (Cout=8, k=3)", "conv2d", (28, 28), {"channels_out": 8, "kernel_size": 3}),
        ("Dense (D->D->10)", "dense", 784, {}),
    ]
    return [{"model": name, **param_count(kind, shape, 10, **kw)} for name, kind, shape, kw in rows]


def k_ablation_table(d: int = 2048, ks=ABLATION_K) -> list[dict]:
    """Spectral head + linear classifier weights for several active-bin counts."""
    out = []
    for K in ks:
        w = param_count("spectral1d", d, 10, K=K)["weights"]
        out.append({"K": K, "weights": w, "compression_vs_dense32": DENSE32_HEAD_WEIGHTS / w})
    return out


# -- data --------------------------------------------------------------------


def _dataset(cfg: RunConfig, role: str, need_labels: bool = True):
    if role not in cfg.data:
        raise ConfigError(f"config has no data.{role} entry")
    return _load_entry(cfg, cfg.data[role], role, need_labels)


def _load_entry(cfg: RunConfig, entry: dict, role: str, need_labels: bool):
    X, y = load_dataset(entry, cfg.base_dir, cfg.model.num_classes)
    if X.shape[1] != cfg.model.input_dim:
        raise ConfigError(
            f"data.{role} has {X.shape[1]} features but the model expects {cfg.model.input_dim}"
        )
    if need_labels:
        if y is None:
            raise ConfigError(f"data.{role} has no labels")
        if np.any((y < 0) | (y >= cfg.model.num_classes)):
            raise ConfigError(f"data.{role} has labels outside [0, {cfg.model.num_classes})")
    return X, y


def _checkpoint_dir(cfg: RunConfig, out: Path) -> Path:
    return cfg.resolve(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint"


def _load_model(cfg: RunConfig, out: Path) -> Checkpoint:
    return load_checkpoint(_checkpoint_dir(cfg, out), expect_model_digest=cfg.model_digest)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


# -- subcommands -------------------------------------------------------------


def cmd_sample_prior(cfg: RunConfig, out: Path) -> dict:
    sp = dict(cfg.sample_prior)
    spec = cfg.model
    grid = tuple(sp.get("grid", spec.grid))
    alpha = sp.get("alpha", spec.alpha)
    if alpha is None:
        alpha = float(np.log(2.0))  # median slope under the default alpha_z prior
    profile = gp_prior.SpectrumProfile(float(sp.get("sigma0_sq", spec.sigma0_sq)), alpha, grid)
    n_samples = int(sp.get("n_samples", 1000))
    rng = np.random.default_rng(cfg.seed)
    if len(grid) == 1:
        w = gp_prior.sample_prior_filter_1d(profile, rng, n_samples)
        k = gp_prior.prior_covariance_1d(profile)
        # empirical lag covariance, pooled over positions by stationarity
        prod = np.stack([np.mean(w * np.roll(w, -t, axis=-1), axis=-1) for t in range(grid[0])])
        lags = [(t,) for t in range(grid[0])]
        names = [f"w{t}" for t in range(grid[0])]
        lag_header = ["lag"]
    else:
        H, W = grid
        w = gp_prior.sample_prior_field_2d(profile, rng, n_samples)
        k = gp_prior.prior_covariance_2d(profile)
        lags = [(u, v) for u in range(H) for v in range(W)]
        prod = np.stack(
            [np.mean(w * np.roll(w, (-u, -v), axis=(-2, -1)), axis=(-2, -1)) for u, v in lags]
        )
        names = [f"w{u}_{v}" for u in range(H) for v in range(W)]
        lag_header = ["lag_u", "lag_v"]
    flat = w.reshape(n_samples, -1)
    write_csv(
        out / "filters.csv",
        "prior_filters",
        ["sample", *names],
        ([i, *row] for i, row in enumerate(flat)),
        cfg.digest,
    )
    emp = prod.mean(axis=1)
    se = prod.std(axis=1, ddof=1) / np.sqrt(n_samples) if n_samples > 1 else np.full(len(lags), np.nan)
    k_flat = k.ravel()
    write_csv(
        out / "covariance.csv",
        "prior_covariance",
        [*lag_header, "closed_form", "empirical", "std_error"],
        ([*lag, k_flat[i], emp[i], se[i]] for i, lag in enumerate(lags)),
        cfg.digest,
    )
    return {"grid": list(grid), "alpha": alpha, "n_samples": n_samples}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    spec = cfg.model
    X, y = _dataset(cfg, "train")
    rng = np.random.default_rng(cfg.seed)
    params = state = None
    if cfg.checkpoint:
        ck = _load_model(cfg, out)
        params, state = ck.params, ck.adam
        rng.bit_generator.state = ck.rng_state
    params, state, trace = train(spec, X, y, cfg.train, rng, params=params, state=state)
    lay = spec.layout
    ck = Checkpoint(
        params=params,
        adam=state,
        rng_state=rng.bit_generator.state,
        seed=cfg.seed,
        config_digest=cfg.digest,
        model_digest=cfg.model_digest,
        model=spec.to_dict(),
        layout=None if lay is None else {"dims": list(lay.dims), "d_eff": lay.d_eff,
                                         "rank": int(params["spec.U"].shape[1])},
    )
    save_checkpoint(ck, out / "checkpoint")
    keys = ["step", "elbo", "loglik", "kl_spectral", "kl_base"]
    write_csv(
        out / "elbo_trace.csv",
        "elbo_trace",
        keys,
        ([row[k] for k in keys] for row in trace),
        cfg.digest,
    )
    acc = metrics.accuracy(_softmax(logits(spec, posterior_mean(spec, params), X)), y)
    summary = {
        "steps_run": len(trace),
        "adam_step": state.step,
        "final_elbo": trace[-1]["elbo"] if trace else None,
        "train_accuracy_posterior_mean": acc,
    }
    write_json(out / "train_summary.json", "train_summary", summary, cfg.digest)
    return summary


def _tail_table(cfg: RunConfig, params: dict) -> dict | None:
    spec = cfg.model
    lay = spec.layout
    if lay is None:
        return None
    alpha = current_alpha(spec, params.get("alpha_z.mu"))
    profile = gp_prior.SpectrumProfile(spec.sigma0_sq, alpha, spec.grid)
    # per-bin spectrum S is the variance multiplier-free envelope
    S = prior_variances(profile, lay).tau_sq / lay.coord_var_mult
    s_max = float(np.max(S))
    m = lay.m_active
    rows = [
        {"delta": d, "radius": cert.prior_tail_radius(m, s_max, d)} for d in cfg.cert_deltas
    ]
    return {"alpha": alpha, "m_active": m, "S_max": s_max, "rows": rows}


def cmd_certify(cfg: RunConfig, out: Path) -> dict:
    spec = cfg.model
    role = "test" if "test" in cfg.data else "train"
    X, y = _dataset(cfg, role)
    ck = _load_model(cfg, out)
    theta = posterior_mean(spec, ck.params)
    report = cert.CertReport.from_logits(logits(spec, theta, X), y, network_layers(spec, theta))
    write_csv(
        out / "certify_inputs.csv",
        "certify_inputs",
        ["index", "label", "margin", "radius"],
        zip(range(len(y)), y, report.margins, report.radii),
        cfg.digest,
    )
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for s in range(cfg.cert_samples):
        th = posterior_sample(spec, ck.params, rng, cfg.guide.eps)
        L, norms = cert.network_lipschitz(network_layers(spec, th))
        m = cert.margin(logits(spec, th, X), y)
        r = cert.cert_radius(m, L)
        rows.append([s, L, *norms, float(np.mean(m > 0)), float(np.mean(r))])
    n_layers = len(report.layer_norms)
    write_csv(
        out / "certify_samples.csv",
        "certify_samples",
        ["sample", "lipschitz", *[f"norm{i}" for i in range(n_layers)], "frac_positive_margin",
         "mean_radius"],
        rows,
        cfg.digest,
    )
    Ls = np.array([r[1] for r in rows])
    dist = None
    if Ls.size:
        dist = {
            "mean": float(Ls.mean()),
            "std": float(Ls.std()),
            "min": float(Ls.min()),
            "median": float(np.median(Ls)),
            "max": float(Ls.max()),
        }
    summary = {
        "dataset": role,
        "layer_norms": report.layer_norms,
        "lipschitz": report.lipschitz,
        "mean_margin": float(np.mean(report.margins)),
        "mean_radius": float(np.mean(report.radii)),
        "frac_certified": float(np.mean(report.radii > 0)),
        "posterior_lipschitz": dist,
        "prior_tail": _tail_table(cfg, ck.params),
    }
    write_json(out / "certify_summary.json", "certify_summary", summary, cfg.digest)
    return summary


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    spec = cfg.model
    X, y = _dataset(cfg, "test")
    ck = _load_model(cfg, out)
    rng = np.random.default_rng(cfg.seed)
    p = predictive_probs(spec, ck.params, X, rng, cfg.predictive_samples, cfg.guide.eps)
    count, acc, conf = metrics.calibration_bins(p, y, cfg.ece_bins)
    h_id = metrics.entropy(p)
    result = {
        "n": int(len(y)),
        "accuracy": metrics.accuracy(p, y),
        "nll": metrics.nll(p, y),
        "brier": metrics.brier(p, y),
        "ece": metrics.ece(p, y, cfg.ece_bins),
        "mce": metrics.mce(p, y, cfg.ece_bins),
        "bins": [
            {"count": int(c), "accuracy": _finite(a), "confidence": _finite(f)}
            for c, a, f in zip(count, acc, conf)
        ],
        "mean_entropy": float(np.mean(h_id)),
        "ood": [],
    }
    entropies = [("test", i, h) for i, h in enumerate(h_id)]
    for i, entry in enumerate(cfg.data.get("ood", [])):
        name = entry.get("name", f"ood{i}")
        X_ood, _ = _load_entry(cfg, entry, f"ood[{i}]", need_labels=False)
        h_ood = metrics.entropy(
            predictive_probs(spec, ck.params, X_ood, rng, cfg.predictive_samples, cfg.guide.eps)
        )
        # higher score = more in-distribution
        result["ood"].append(
            {
                "name": name,
                "n": int(len(h_ood)),
                "auroc": metrics.auroc(-h_id, -h_ood),
                "fpr_at_95tpr": metrics.fpr_at_95tpr(-h_id, -h_ood),
                "mean_entropy": float(np.mean(h_ood)),
            }
        )
        entropies.extend((name, j, h) for j, h in enumerate(h_ood))
    if result["ood"]:
        result["ood_mean"] = {
            k: float(np.mean([o[k] for o in result["ood"]])) for k in ("auroc", "fpr_at_95tpr")
        }
    write_json(out / "metrics.json", "eval_metrics", result, cfg.digest)
    write_csv(out / "entropy.csv", "predictive_entropy", ["dataset", "index", "entropy"],
              entropies, cfg.digest)
    return {k: result[k] for k in ("accuracy", "nll", "brier", "ece", "mce")}


def cmd_param_count(cfg: RunConfig | None, out: Path) -> dict:
    digest = cfg.digest if cfg else ""
    mnist = mnist_table()
    ablation = k_ablation_table()
    write_csv(
        out / "param_counts_mnist.csv",
        "param_counts_mnist",
        ["model", "weights", "biases", "total"],
        ([r["model"], r["weights"], r["biases"], r["total"]] for r in mnist),
        digest,
    )
    write_csv(
        out / "param_counts_k_ablation.csv",
        "param_counts_k_ablation",
        ["K", "weights", "compression_vs_dense32"],
        ([r["K"], r["weights"], r["compression_vs_dense32"]] for r in ablation),
        digest,
    )
    result = {"mnist": mnist, "k_ablation": ablation, "dense32_weights": DENSE32_HEAD_WEIGHTS}
    if cfg is not None:
        result["config_model"] = {"spec": cfg.model.to_dict(), **cfg.model.param_count()}
    write_json(out / "param_counts.json", "param_counts", result, digest)
    return result


COMMANDS = {
    "sample-prior": cmd_sample_prior,
    "train": cmd_train,
    "certify": cmd_certify,
    "eval": cmd_eval,
    "param-count": cmd_param_count,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectralbnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "param-count", type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args.out)
    except Exception as exc:  # report every failure in machine-readable form
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "ok": True, "result": result},
                     default=_json_default))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
