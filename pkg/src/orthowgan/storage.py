"""Configuration files, checkpoints, CSV artifacts and run manifests.

Config files are flat ``key = value`` lines with ``#`` comments. Checkpoints
are JSON with weights as decimal strings at 17 significant digits, which
round-trips float64 bit-exactly and stays readable from any language. CSV
files use '.' decimals, '\\n' line endings and a mandatory header row;
everything written to CSV is deterministic given config and seed (timing
goes to the JSON manifest instead).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import MlpParams
from .wgan import DatasetSpec, MetricRow, TrainConfig, TrainState

CHECKPOINT_FORMAT_VERSION = 1

METRICS_COLUMNS = (
    "iter", "critic_loss", "gen_loss", "gen_grad_norm", "lipschitz_est", "mean_gram_dev",
)


class ConfigError(ValueError):
    """Malformed or unknown configuration input."""


def fmt(x: float) -> str:
    """Decimal text at 17 significant digits (float64 round-trips exactly)."""
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------

_TRAIN_KEYS = {
    "scheme": str,
    "n": int,
    "seed": int,
    "eta_d": float,
    "eta_g": float,
    "n_critic": int,
    "batch": int,
    "lambda_gp": float,
    "lambda_ortho": float,
    "clip_c": float,
    "k": int,
    "init_lambda": float,
    "latent_dim": int,
    "hidden": int,
    "layers": int,
    "budget_seconds": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "cayley_tau_scale": float,
    "diag_every": int,
    "lipschitz_points": int,
}

_DATA_KEYS = {
    "dataset": str,
    "turns": float,
    "noise_sigma": float,
    "arms": int,
    "modes": int,
    "radius": float,
    "mode_sigma": float,
}


def parse_config_text(text: str) -> dict:
    """Parse flat key = value lines; unknown keys are an error."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _TRAIN_KEYS:
            typ = _TRAIN_KEYS[key]
        elif key in _DATA_KEYS:
            typ = _DATA_KEYS[key]
        else:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = typ(val) if typ is not str else val
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: cannot parse {val!r} as {typ.__name__}") from exc
    return values


def build_train_setup(values: dict) -> tuple[TrainConfig, DatasetSpec]:
    """Turn parsed config values into (TrainConfig, DatasetSpec)."""
    if "scheme" not in values:
        raise ConfigError("config must set 'scheme'")
    if "n" not in values and float(values.get("budget_seconds", 0.0)) <= 0.0:
        raise ConfigError("config must set 'n' or a positive 'budget_seconds'")
    train_kwargs = {k: v for k, v in values.items() if k in _TRAIN_KEYS}
    train_kwargs.setdefault("n", 200)  # placeholder iterations under wall-clock budget
    try:
        cfg = TrainConfig(**train_kwargs)
        cfg.resolved()  # validate eagerly so bad configs fail before training
        data = build_dataset(values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, data


def build_dataset(values: dict) -> DatasetSpec:
    kind = values.get("dataset", "spiral")
    kwargs = {k: v for k, v in values.items() if k in _DATA_KEYS and k != "dataset"}
    try:
        return DatasetSpec(kind=kind, **kwargs).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _net_to_json(net: MlpParams) -> dict:
    layers = []
    for w, b in zip(net.weights, net.biases):
        layers.append(
            {
                "out": int(w.shape[0]),
                "in": int(w.shape[1]),
                "weight": [fmt(v) for v in w.reshape(-1)],
                "bias": [fmt(v) for v in b],
            }
        )
    return {"activation": "relu", "layers": layers}


def _net_from_json(obj: dict) -> MlpParams:
    weights, biases = [], []
    for layer in obj["layers"]:
        out, inp = int(layer["out"]), int(layer["in"])
        w = np.array([float(v) for v in layer["weight"]], dtype=np.float64).reshape(out, inp)
        b = np.array([float(v) for v in layer["bias"]], dtype=np.float64)
        weights.append(w)
        biases.append(b)
    return MlpParams(weights, biases)


@dataclasses.dataclass
class Checkpoint:
    scheme: str
    seed: int
    iter: int
    config: dict
    critic: MlpParams
    generator: MlpParams


def save_checkpoint(path, state: TrainState) -> None:
    cfg = dataclasses.asdict(state.config)
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "scheme": state.config.scheme,
        "seed": state.config.seed,
        "iter": state.iter,
        "config": cfg,
        "critic": _net_to_json(state.critic),
        "generator": _net_to_json(state.generator),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {version!r}")
    return Checkpoint(
        scheme=doc["scheme"],
        seed=int(doc["seed"]),
        iter=int(doc["iter"]),
        config=doc["config"],
        critic=_net_from_json(doc["critic"]),
        generator=_net_from_json(doc["generator"]),
    )


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def _open_csv(path):
    return open(path, "w", newline="")


def write_metrics_csv(path, rows: list[MetricRow]) -> None:
    """Deterministic per-iteration metrics; diagnostics cells are empty except
    every diag interval. Wall-clock timing is reported in the manifest, not
    here, so identical runs produce byte-identical files."""
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r.iter,
                    fmt(r.critic_loss),
                    fmt(r.gen_loss),
                    fmt(r.gen_grad_norm),
                    fmt(r.lipschitz_est) if r.lipschitz_est is not None else "",
                    fmt(r.mean_gram_dev) if r.mean_gram_dev is not None else "",
                ]
            )


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, state: TrainState, budget_seconds: float, extra: dict | None = None) -> None:
    doc = {
        "build_id": build_id(),
        "scheme": state.config.scheme,
        "seed": state.config.seed,
        "config": dataclasses.asdict(state.config),
        "dataset": dataclasses.asdict(state.data),
        "budget_mode": "wall_clock" if budget_seconds > 0 else "iterations",
        "budget_seconds": budget_seconds,
        "achieved_iterations": state.iter,
        "total_wall_seconds": state.total_wall_seconds,
        "iterations_per_sec": (
            state.iter / state.total_wall_seconds if state.total_wall_seconds > 0 else None
        ),
        "degenerate_penalty_rows": state.degenerate_rows,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def build_id() -> str:
    base = f"orthowgan-{__version__}"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def write_tournament_csv(path, result, names: list[str]) -> None:
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "model_i", "model_j", "w_raw", "w_hat_i", "w_rel"])
        for i in range(result.n_models):
            for j in range(result.n_models):
                w.writerow(
                    [
                        i,
                        j,
                        names[i],
                        names[j],
                        fmt(result.w_raw[i, j]),
                        fmt(result.w_hat[i]),
                        fmt(result.w_rel[i, j]),
                    ]
                )


def write_tournament_json(path, result, names: list[str]) -> None:
    doc = {
        "models": names,
        "w_raw": [[fmt(v) for v in row] for row in result.w_raw],
        "w_hat": [fmt(v) for v in result.w_hat],
        "w_rel": [[fmt(v) for v in row] for row in result.w_rel],
        "s": [fmt(v) for v in result.s],
        "excluded": result.excluded,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def write_rows_csv(path, header: list[str], rows: list[list]) -> None:
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an x,y,kind samples file into (real, generated) arrays."""
    real, generated = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"x", "y", "kind"}:
            raise ConfigError("samples csv needs columns x,y,kind")
        for row in reader:
            point = (float(row["x"]), float(row["y"]))
            if row["kind"] == "real":
                real.append(point)
            elif row["kind"] == "generated":
                generated.append(point)
            else:
                raise ConfigError(f"unknown sample kind {row['kind']!r}")
    return (
        np.array(real, dtype=np.float64).reshape(-1, 2),
        np.array(generated, dtype=np.float64).reshape(-1, 2),
    )


def write_samples_csv(path, real: np.ndarray, generated: np.ndarray) -> None:
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "kind"])
        for x, y in np.asarray(real).reshape(-1, 2):
            w.writerow([fmt(x), fmt(y), "real"])
        for x, y in np.asarray(generated).reshape(-1, 2):
            w.writerow([fmt(x), fmt(y), "generated"])
