"""Model persistence: one self-describing binary file per model.

Layout (little-endian): magic b"GMDL", version u32, header length u64, a
UTF-8 JSON header (kind, scalar metadata, array directory), then the raw
array payloads in directory order. Floats are stored as f64, so a saved
model reloads bit-exactly and reproduces identical decisions. The JSON is
serialized with sorted keys, making writes byte-deterministic.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DataValidationError, InputError, VersionMismatchError
from .grood_core import ClassGaussian, ClassStrategy, GroodModel, OODGaussian, OODPriorConfig
from .linear_probe import LinearProbeModel, LPTrainConfig
from .nearest_mean import NearestMeanModel

MAGIC = b"GMDL"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")

_DTYPES = {
    "<f8": np.dtype("<f8"),
    "<i4": np.dtype("<i4"),
    "|u1": np.dtype("u1"),  # single-byte dtypes carry no byte-order mark
}


def write_model_file(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    directory = []
    payloads = []
    for name, arr in arrays.items():
        if arr.dtype.kind == "f":
            arr = np.ascontiguousarray(arr, dtype="<f8")
        elif arr.dtype.kind in "iu" and arr.dtype.itemsize <= 4 and arr.dtype.kind == "i":
            arr = np.ascontiguousarray(arr, dtype="<i4")
        elif arr.dtype == np.dtype("<u1") or arr.dtype.kind == "b":
            arr = np.ascontiguousarray(arr, dtype="<u1")
        else:
            raise DataValidationError(f"unsupported array dtype {arr.dtype} for {name}")
        directory.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": directory},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def read_model_file(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"model file not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREAMBLE.size:
        raise DataValidationError(f"{path}: file shorter than preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported model version {version}")
    try:
        header = json.loads(data[_PREAMBLE.size:_PREAMBLE.size + header_len])
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: corrupt model header") from exc
    arrays = {}
    offset = _PREAMBLE.size + header_len
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataValidationError(f"{path}: unknown dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(data):
            raise DataValidationError(f"{path}: truncated array payload")
        block = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = block.reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise DataValidationError(f"{path}: trailing or missing payload bytes")
    return header["kind"], header["meta"], arrays


def _expect_kind(path, kind: str, expected: str) -> None:
    if kind != expected:
        raise DataValidationError(f"{path}: expected a {expected} model, found {kind}")


# -- linear probe -------------------------------------------------------------

def _lp_meta(model: LinearProbeModel) -> dict:
    cfg = model.train_config
    return {
        "class_count": model.class_count,
        "dim": model.dim,
        "converged": model.converged,
        "final_gradient_norm": model.final_gradient_norm,
        "config": {
            "l2_strength": cfg.l2_strength,
            "max_iterations": cfg.max_iterations,
            "gradient_tolerance": cfg.gradient_tolerance,
            "seed": cfg.seed,
            "l2_normalize_inputs": cfg.l2_normalize_inputs,
        },
    }


def _lp_from_parts(meta: dict, arrays: dict, prefix: str = "") -> LinearProbeModel:
    cfg = meta["config"]
    return LinearProbeModel(
        weights=arrays[prefix + "weights"],
        bias=arrays[prefix + "bias"],
        class_count=int(meta["class_count"]),
        dim=int(meta["dim"]),
        train_config=LPTrainConfig(
            l2_strength=float(cfg["l2_strength"]),
            max_iterations=int(cfg["max_iterations"]),
            gradient_tolerance=float(cfg["gradient_tolerance"]),
            seed=int(cfg["seed"]),
            l2_normalize_inputs=bool(cfg["l2_normalize_inputs"]),
        ),
        converged=bool(meta["converged"]),
        final_gradient_norm=float(meta["final_gradient_norm"]),
    )


def save_linear_probe(path, model: LinearProbeModel) -> None:
    write_model_file(path, "linear_probe", _lp_meta(model),
                     {"weights": model.weights, "bias": model.bias})


def load_linear_probe(path) -> LinearProbeModel:
    kind, meta, arrays = read_model_file(path)
    _expect_kind(path, kind, "linear_probe")
    return _lp_from_parts(meta, arrays)


# -- nearest mean -------------------------------------------------------------

def save_nearest_mean(path, model: NearestMeanModel) -> None:
    meta = {
        "class_count": model.class_count,
        "dim": model.dim,
        "l2_normalize_inputs": model.l2_normalize_inputs,
    }
    write_model_file(path, "nearest_mean", meta, {"means": model.means})


def _nm_from_parts(meta: dict, arrays: dict, prefix: str = "") -> NearestMeanModel:
    return NearestMeanModel(
        means=arrays[prefix + "means"],
        class_count=int(meta["class_count"]),
        dim=int(meta["dim"]),
        l2_normalize_inputs=bool(meta["l2_normalize_inputs"]),
    )


def load_nearest_mean(path) -> NearestMeanModel:
    kind, meta, arrays = read_model_file(path)
    _expect_kind(path, kind, "nearest_mean")
    return _nm_from_parts(meta, arrays)


# -- full detector ------------------------------------------------------------

def save_grood(path, model: GroodModel) -> None:
    """Persist the detector with embedded copies of its LP and NM models."""
    k = model.class_count
    meta = {
        "class_count": k,
        "ood": {"sigma_lp": model.ood.sigma_lp, "sigma_nm": model.ood.sigma_nm},
        "lp": _lp_meta(model.lp_model),
        "nm": {
            "class_count": model.nm_model.class_count,
            "dim": model.nm_model.dim,
            "l2_normalize_inputs": model.nm_model.l2_normalize_inputs,
        },
    }
    if model.calibration_config is not None:
        cfg = model.calibration_config
        meta["calibration"] = {
            "range_quantile": cfg.range_quantile,
            "range_multiplier": cfg.range_multiplier,
            "mc_samples": cfg.mc_samples,
            "seed": cfg.seed,
        }
    if model.class_names:
        meta["class_names"] = {str(k): v for k, v in sorted(model.class_names.items())}
    arrays: dict[str, np.ndarray] = {
        "gauss_means": np.stack([g.mean for g in model.class_gaussians]),
        "gauss_covs": np.stack([g.cov for g in model.class_gaussians]),
        "gauss_degenerate": np.array(
            [g.degenerate for g in model.class_gaussians], dtype="<u1"),
        "lp.weights": model.lp_model.weights,
        "lp.bias": model.lp_model.bias,
        "nm.means": model.nm_model.means,
    }
    if model.strategies:
        arrays["epsilon_grid"] = model.strategies[0].epsilon_grid
        arrays["mu_values"] = np.stack([s.mu_values for s in model.strategies])
        arrays["cdf_samples"] = np.stack([s.cdf_samples for s in model.strategies])
    write_model_file(path, "grood", meta, arrays)


def load_grood(path) -> GroodModel:
    kind, meta, arrays = read_model_file(path)
    _expect_kind(path, kind, "grood")
    k = int(meta["class_count"])
    gaussians = tuple(
        ClassGaussian(
            mean=arrays["gauss_means"][c],
            cov=arrays["gauss_covs"][c],
            class_index=c,
            degenerate=bool(arrays["gauss_degenerate"][c]),
        )
        for c in range(k)
    )
    strategies: tuple[ClassStrategy, ...] = ()
    if "epsilon_grid" in arrays:
        strategies = tuple(
            ClassStrategy(
                class_index=c,
                epsilon_grid=arrays["epsilon_grid"],
                mu_values=arrays["mu_values"][c],
                cdf_samples=arrays["cdf_samples"][c],
            )
            for c in range(k)
        )
    calib = None
    if "calibration" in meta:
        c = meta["calibration"]
        calib = OODPriorConfig(
            range_quantile=float(c["range_quantile"]),
            range_multiplier=float(c["range_multiplier"]),
            mc_samples=int(c["mc_samples"]),
            seed=int(c["seed"]),
        )
    return GroodModel(
        class_gaussians=gaussians,
        ood=OODGaussian(sigma_lp=float(meta["ood"]["sigma_lp"]),
                        sigma_nm=float(meta["ood"]["sigma_nm"])),
        strategies=strategies,
        lp_model=_lp_from_parts(meta["lp"], arrays, prefix="lp."),
        nm_model=_nm_from_parts(meta["nm"], arrays, prefix="nm."),
        calibration_config=calib,
        class_names={int(k): v for k, v in meta["class_names"].items()}
        if "class_names" in meta else None,
    )
