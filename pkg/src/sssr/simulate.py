"""Synthetic scene generator and dataset manifests.

Desk-scale stand-in for real acquisitions: each scene is a sum of random 2-D
Gaussian blobs whose spectra are drawn from a small set of smooth latent
endmembers, so pixels live near a low-dimensional spectral manifold and
cluster-routed operators have structure to exploit.  All randomness derives
from (seed, sample index), so generation order cannot change results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube import DegradationSpec, ImageCube, make_quadruple, save_hsc

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class DatasetManifest:
    seed: int
    split: str
    samples: list  # [{"id": str, "f": path, "F": path, "g": path, "G": path}]

    def to_json(self) -> dict:
        return {"seed": self.seed, "samples": self.samples, "split": self.split}


def smooth_spectra(rng: np.random.Generator, count: int, bands: int) -> np.ndarray:
    """Random smooth endmember spectra in [0.05, 1]."""
    axis = np.arange(bands, dtype=np.float64)
    out = np.empty((count, bands))
    for i in range(count):
        spec = np.full(bands, rng.uniform(0.05, 0.3))
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(0, bands - 1)
            width = rng.uniform(bands / 6, bands)
            amp = rng.uniform(0.2, 1.0)
            spec = spec + amp * np.exp(-0.5 * ((axis - center) / width) ** 2)
        out[i] = spec / spec.max()
    return out


def synth_cube(rng: np.random.Generator, h: int, w: int, bands: int,
               endmembers: int = 6) -> ImageCube:
    """One scene: Gaussian blobs with endmember spectra, rescaled into [0,1]."""
    spectra = smooth_spectra(rng, endmembers, bands)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, bands))
    for _ in range(int(rng.integers(6, 12))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sy = rng.uniform(0.8, h / 5)
        sx = rng.uniform(0.8, w / 5)
        amp = rng.uniform(0.3, 1.0)
        blob = amp * np.exp(-0.5 * (((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))
        img += blob[:, :, None] * spectra[rng.integers(endmembers)]
    img /= max(img.max(), 1e-6)
    img *= rng.uniform(0.75, 0.95)
    return ImageCube(data=img)


def synth_dataset(out_dir, seed: int, count: int, dims: dict,
                  spec: DegradationSpec, split=(8, 1, 1),
                  endmembers: int = 6) -> dict:
    """Generate ``count`` scenes, degrade each, and write HSC files plus one
    manifest JSON per split.  Returns {split: DatasetManifest}.

    Paths inside manifests are relative to ``out_dir`` so the dataset
    directory can be moved as a whole.
    """
    if sum(split) != count:
        raise ValueError(f"split {split} does not sum to count {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = dims["H"], dims["W"]
    bands = dims["C"]

    boundaries = np.cumsum((0,) + tuple(split))
    manifests = {}
    for name, lo, hi in zip(SPLIT_NAMES, boundaries[:-1], boundaries[1:]):
        records = []
        for idx in range(int(lo), int(hi)):
            rng = np.random.default_rng([seed, 0, idx])
            reference = synth_cube(rng, h, w, bands, endmembers)
            f, big_ms, low_hs, ref = make_quadruple(reference, spec, rng=rng)
            sample_id = f"sample_{idx:03d}"
            record = {"id": sample_id}
            for tag, cube in (("f", f), ("F", big_ms), ("g", low_hs), ("G", ref)):
                fname = f"{sample_id}_{tag}.hsc"
                save_hsc(cube, out_dir / fname)
                record[tag] = fname
            records.append(record)
        manifest = DatasetManifest(seed=seed, split=name, samples=records)
        (out_dir / f"{name}.json").write_text(
            json.dumps(manifest.to_json(), indent=2) + "\n")
        manifests[name] = manifest
    return manifests


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    payload = json.loads(path.read_text())
    manifest = DatasetManifest(seed=payload["seed"], split=payload["split"],
                               samples=payload["samples"])
    base = path.parent
    for rec in manifest.samples:
        for tag in ("f", "F", "g", "G"):
            if not (base / rec[tag]).exists():
                raise FileNotFoundError(f"manifest references missing file {rec[tag]}")
    return manifest


def load_samples(manifest_path) -> list:
    """Load every sample of a manifest into memory as numpy quadruples."""
    from .cube import load_hsc

    path = Path(manifest_path)
    manifest = load_manifest(path)
    base = path.parent
    out = []
    for rec in manifest.samples:
        out.append({
            "id": rec["id"],
            "f": load_hsc(base / rec["f"]).data,
            "F": load_hsc(base / rec["F"]).data,
            "g": load_hsc(base / rec["g"]).data,
            "G": load_hsc(base / rec["G"]).data,
        })
    return out
