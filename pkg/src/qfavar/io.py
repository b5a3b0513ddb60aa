"""Serialization of posterior draws and run manifests.

A posterior is stored as ``posterior.bin`` (a NumPy ``.npz`` archive holding
every array) next to ``posterior.json`` (layout, labels, configuration and
diagnostics).  Every CLI run also writes ``manifest.json`` with the command
line, the configuration and its hash, the seed, package versions and the
SHA-256 of every output file.
"""

import hashlib
import io
import json
import platform
import sys
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelLayout, PosteriorDraws

__all__ = ["save_posterior", "load_posterior", "config_hash", "file_sha256", "write_manifest",
           "read_manifest", "package_versions", "to_jsonable"]

FORMAT_VERSION = 1
VOLATILE_KEYS = ("runtime_seconds",)


def to_jsonable(obj):
    """Recursively convert NumPy scalars/arrays and tuples into JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def _write_npz(path, arrays):
    """``np.savez`` layout with fixed entry timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def _sidecar(path):
    return Path(path).with_suffix(".json")


def save_posterior(draws, path):
    """Write ``draws`` to ``path`` (``.npz`` content) and its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.asarray(getattr(draws, name)) for name in PosteriorDraws.ARRAYS}
    for key, val in draws.variances.items():
        arrays[f"var__{key}"] = np.asarray(val)
    _write_npz(path, arrays)
    meta = {
        "format_version": FORMAT_VERSION,
        "method": draws.method,
        "variant": draws.variant,
        "layout": asdict(draws.layout),
        "time_index": list(draws.time_index),
        "indicator_labels": list(draws.indicator_labels),
        "country_labels": list(draws.country_labels),
        "global_labels": list(draws.global_labels),
        "seed": draws.seed,
        "config": draws.config,
        "config_hash": config_hash(draws.config),
        # wall-clock timings would make reruns differ byte for byte
        "diagnostics": {k: v for k, v in draws.diagnostics.items() if k not in VOLATILE_KEYS},
    }
    _sidecar(path).write_text(json.dumps(to_jsonable(meta), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_posterior(path):
    """Read a posterior written by :func:`save_posterior`."""
    path = Path(path)
    side = _sidecar(path)
    if not path.exists():
        raise FileNotFoundError(f"posterior file {path} not found")
    if not side.exists():
        raise FileNotFoundError(f"metadata file {side} not found")
    meta = json.loads(side.read_text(encoding="utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported posterior format {meta.get('format_version')}")
    lay = meta["layout"]
    lay["quantiles"] = tuple(lay["quantiles"])
    layout = ModelLayout(**lay)
    with np.load(path, allow_pickle=False) as data:
        arrays = {name: data[name] for name in PosteriorDraws.ARRAYS}
        variances = {k[len("var__"):]: data[k] for k in data.files if k.startswith("var__")}
    return PosteriorDraws(meta["method"], meta["variant"], layout, time_index=meta["time_index"],
                          indicator_labels=meta["indicator_labels"], country_labels=meta["country_labels"],
                          global_labels=meta["global_labels"], seed=meta["seed"], config=meta["config"],
                          variances=variances, diagnostics=meta["diagnostics"], **arrays)


def config_hash(config):
    """SHA-256 of the canonical JSON form of a configuration dict."""
    text = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def package_versions():
    import numba
    import pandas
    import scipy
    import sklearn

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pandas.__version__, "numba": numba.__version__, "scikit-learn": sklearn.__version__,
            "qfavar": __version__}


def write_manifest(out_dir, command, argv, config=None, seed=None, outputs=(), threads=1, extra=None):
    """Write ``manifest.json`` into ``out_dir`` and return its path."""
    out_dir = Path(out_dir)
    files = {}
    for p in outputs:
        p = Path(p)
        files[p.name] = file_sha256(p)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "config_hash": config_hash(config) if config is not None else None,
        "seed": seed,
        "threads": threads,
        "versions": package_versions(),
        "platform": sys.platform,
        "outputs": files,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(to_jsonable(manifest), indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_manifest(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
