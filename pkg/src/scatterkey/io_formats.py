"""On-disk artifact formats: PGM intensity maps, history CSV, canonical JSON.

Every writer here is deterministic: no timestamps, sorted JSON keys, fixed
numeric formatting.  Re-running a command with the same config and seeds
reproduces each file byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os

import numpy as np

PGM_MAXVAL = 65535

HISTORY_COLUMNS = ["generation", "best_fitness", "mean_fitness", "mutation_rate"]


def write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_history_csv(records, path) -> None:
    """Convergence trace as CSV: one row per generation."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in records:
            writer.writerow(
                [rec.generation, repr(rec.best_fitness), repr(rec.mean_fitness), repr(rec.mutation_rate)]
            )


def read_history_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header: {header}")
        return [
            {
                "generation": int(row[0]),
                "best_fitness": float(row[1]),
                "mean_fitness": float(row[2]),
                "mutation_rate": float(row[3]),
            }
            for row in reader
        ]


def write_pgm(intensity: np.ndarray, path, maxval: int = PGM_MAXVAL) -> dict:
    """Write an intensity map as plain (ASCII, P2) PGM.

    Pixels are scaled so the brightest one maps to ``maxval``.  Returns the
    scaling metadata to embed in the JSON sidecar.
    """
    data = np.asarray(intensity, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("intensity map must be 2-d")
    peak = float(data.max())
    scale = maxval / peak if peak > 0 else 0.0
    pixels = np.floor(data * scale + 0.5).astype(np.int64)
    pixels = np.clip(pixels, 0, maxval)

    height, width = data.shape
    buf = io.StringIO()
    buf.write(f"P2\n{width} {height}\n{maxval}\n")
    for row in pixels:
        line = " ".join(str(v) for v in row)
        # plain PGM lines should stay short; chunk long rows
        while len(line) > 69:
            cut = line.rfind(" ", 0, 69)
            buf.write(line[:cut] + "\n")
            line = line[cut + 1 :]
        buf.write(line + "\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(buf.getvalue())
    return {"maxval": maxval, "peak_intensity": peak, "scale": scale}


def read_pgm(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError("not a plain P2 PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if values.size != width * height:
        raise ValueError("PGM pixel count does not match header")
    if values.max(initial=0) > maxval:
        raise ValueError("PGM pixel exceeds maxval")
    return values.reshape(height, width)


def sha256_of_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, config_snapshot: dict, artifacts: dict, metrics: dict) -> None:
    """Run manifest: config snapshot, artifact paths and summary metrics.

    Every artifact listed must already exist on disk (checked here), so a
    manifest always describes a complete run.
    """
    base = os.path.dirname(os.path.abspath(path))
    resolved = {}
    for name, rel in artifacts.items():
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise FileNotFoundError(f"manifest artifact missing on disk: {rel}")
        resolved[name] = rel
    write_json(
        {"config": config_snapshot, "artifacts": resolved, "metrics": metrics},
        path,
    )
