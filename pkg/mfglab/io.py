"""
Reading and writing measures, flows, fields, tables and manifests.
CSV goes through pandas with round-trip float formatting so identical
results give identical bytes.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from mfglab import __version__
from mfglab.dynamics import MeasureFlow
from mfglab.errors import MeasureError, MissingFieldError
from mfglab.field import DecouplingField, FlowTable
from mfglab.measures import EmpiricalMeasure
from mfglab.models import Manifest, ScenarioConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
FIELD_MANIFEST = "field.json"

PathLike = Union[str, Path]


def _coords(prefix: str, d: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(d)]


def _read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_table(rows: Iterable[Union[BaseModel, dict]], path: PathLike) -> Path:
    """One CSV row per model (or dict), columns in field order."""
    records = [r.model_dump() if isinstance(r, BaseModel) else dict(r) for r in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame.from_records(records).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_json(model: Union[BaseModel, dict], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, BaseModel):
        path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    else:
        path.write_text(json.dumps(model, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# --- Config identity ---

def config_hash(config: ScenarioConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_manifest(config: ScenarioConfig, command: str) -> Manifest:
    return Manifest(
        version=__version__,
        command=command,
        config_hash=config_hash(config),
        seed=config.seed,
        config=config.model_dump(mode="json"),
    )


def write_manifest(config: ScenarioConfig, command: str, out_dir: PathLike) -> Path:
    return write_json(build_manifest(config, command), Path(out_dir) / "manifest.json")


# --- Measures ---

def measure_to_frame(mu: EmpiricalMeasure) -> pd.DataFrame:
    frame = pd.DataFrame(mu.points, columns=_coords("x", mu.dim))
    frame.insert(0, "weight", mu.weights)
    return frame


def write_measure_csv(mu: EmpiricalMeasure, path: PathLike) -> Path:
    return write_frame(measure_to_frame(mu), path)


def read_measure_csv(path: PathLike) -> EmpiricalMeasure:
    frame = _read_csv(path)
    if "weight" not in frame.columns or frame.shape[1] < 2:
        raise MeasureError(f"{path}: expected columns weight, x1..xd")
    return EmpiricalMeasure(frame.drop(columns="weight").to_numpy(dtype=float), frame["weight"].to_numpy(dtype=float))


def measure_to_json(mu: EmpiricalMeasure) -> dict:
    return {"dim": mu.dim, "points": mu.points.tolist(), "weights": mu.weights.tolist()}


def measure_from_json(data: dict) -> EmpiricalMeasure:
    mu = EmpiricalMeasure(np.asarray(data["points"], dtype=float), np.asarray(data["weights"], dtype=float))
    if mu.dim != data.get("dim", mu.dim):
        raise MeasureError(f"declared dim {data['dim']} but points live in R^{mu.dim}")
    return mu


# --- Flows ---

def write_flow(flow: MeasureFlow, out_dir: PathLike, config_hash_value: str = "") -> Path:
    """One CSV cloud per grid time plus flow.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(len(flow.times)):
        write_measure_csv(flow.cloud(k), out / f"cloud_{k:05d}.csv")
    meta = {
        "times": flow.times.tolist(),
        "seed": flow.seed,
        "config_hash": config_hash_value,
        "common_path": None if flow.common_path is None else flow.common_path.tolist(),
    }
    return write_json(meta, out / "flow.json")


def read_flow(out_dir: PathLike) -> MeasureFlow:
    out = Path(out_dir)
    meta = json.loads((out / "flow.json").read_text(encoding="utf-8"))
    clouds = [read_measure_csv(out / f"cloud_{k:05d}.csv").points for k in range(len(meta["times"]))]
    common = meta.get("common_path")
    return MeasureFlow(
        np.asarray(meta["times"]),
        np.stack(clouds, axis=1),
        meta["seed"],
        None if common is None else np.asarray(common),
    )


# --- Fields ---

def write_field(field: DecouplingField, out_dir: PathLike) -> Path:
    """field.json plus, per flow, a node table and the node clouds. The terminal condition is not stored."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = field.dim
    for j, table in enumerate(field.flows):
        K1, S, _ = table.values.shape
        nodes = pd.DataFrame(
            {
                "k": np.repeat(np.arange(K1), S),
                "t": np.repeat(field.times, S),
                "point": np.tile(np.arange(S), K1),
            }
        )
        for name, block in (("x", table.stencils), ("w", table.values)):
            for i, col in enumerate(_coords(name, d)):
                nodes[col] = block[:, :, i].reshape(-1)
        nodes["std_error"] = table.std_errors.reshape(-1)
        write_frame(nodes, out / f"flow_{j:03d}_table.csv")

        N = table.clouds.shape[1]
        clouds = pd.DataFrame({"k": np.repeat(np.arange(K1), N), "atom": np.tile(np.arange(N), K1)})
        for i, col in enumerate(_coords("x", d)):
            clouds[col] = table.clouds[:, :, i].reshape(-1)
        write_frame(clouds, out / f"flow_{j:03d}_clouds.csv")

    meta = {
        "horizon": field.horizon,
        "dt": field.dt,
        "n_steps": field.n_steps,
        "dim": d,
        "n_flows": len(field.flows),
        "config_hash": field.config_hash,
        "iteration_count": field.iteration_count,
        "final_increment": field.final_increment,
        "converged": field.converged,
        "increment_history": field.increment_history,
        "effective_tol": field.effective_tol,
        "satellites": [
            {"flow": j, "base": t.base, "shift": np.asarray(t.shift, dtype=float).tolist()}
            for j, t in enumerate(field.flows)
            if not t.is_reference
        ],
    }
    return write_json(meta, out / FIELD_MANIFEST)


def read_field(
    out_dir: PathLike,
    expected_hash: Optional[str] = None,
    terminal: Optional[Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]] = None,
) -> DecouplingField:
    out = Path(out_dir)
    manifest = out / FIELD_MANIFEST
    if not manifest.exists():
        raise MissingFieldError(f"no solved field under {out}")
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    if expected_hash is not None and meta["config_hash"] != expected_hash:
        raise MissingFieldError(f"field under {out} was solved for a different config")
    d, K1 = meta["dim"], meta["n_steps"] + 1
    satellites = {s["flow"]: s for s in meta.get("satellites", [])}
    tables = []
    for j in range(meta["n_flows"]):
        nodes = _read_csv(out / f"flow_{j:03d}_table.csv").sort_values(["k", "point"])
        S = int(nodes["point"].max()) + 1
        stencils = nodes[_coords("x", d)].to_numpy(dtype=float).reshape(K1, S, d)
        values = nodes[_coords("w", d)].to_numpy(dtype=float).reshape(K1, S, d)
        errors = nodes["std_error"].to_numpy(dtype=float).reshape(K1, S)
        clouds = _read_csv(out / f"flow_{j:03d}_clouds.csv").sort_values(["k", "atom"])
        N = int(clouds["atom"].max()) + 1
        sat = satellites.get(j)
        tables.append(
            FlowTable(
                clouds[_coords("x", d)].to_numpy(dtype=float).reshape(K1, N, d), stencils, values, errors,
                base=None if sat is None else sat["base"],
                shift=None if sat is None else np.asarray(sat["shift"], dtype=float),
            )
        )
    return DecouplingField(
        horizon=meta["horizon"],
        dt=meta["dt"],
        flows=tables,
        config_hash=meta["config_hash"],
        iteration_count=meta["iteration_count"],
        final_increment=meta["final_increment"],
        converged=meta["converged"],
        increment_history=meta["increment_history"],
        effective_tol=meta["effective_tol"],
        terminal=terminal,
    )
