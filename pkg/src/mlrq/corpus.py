"""Procedural face-like grayscale images.

A stand-in for an aligned face database: an ellipsoidal head lit from a
random direction (Lambertian shading with attached shadows), dark eye,
brow and mouth regions, a nose ridge, hair, and sensor noise.  Every image
is a pure function of ``(seed, index)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from mlrq.codec import GrayImage, write_pgm


def _blob(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def face_image(seed: int, index: int, height: int = 64, width: int = 56) -> GrayImage:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy = (yy + 0.5) / height * 2 - 1
    xx = (xx + 0.5) / width * 2 - 1

    cy, cx = rng.normal(0.05, 0.04), rng.normal(0.0, 0.04)
    ry, rx = rng.uniform(0.85, 1.0), rng.uniform(0.7, 0.85)
    q = _blob(yy, xx, cy, cx, ry, rx)
    inside = q < 1
    # surface normal of the head ellipsoid
    nz = np.sqrt(np.clip(1 - q, 0, None))
    nx, ny = (xx - cx) / rx, (yy - cy) / ry
    norm = np.sqrt(nx ** 2 + ny ** 2 + nz ** 2) + 1e-12
    az, el = rng.uniform(-1.3, 1.3), rng.uniform(-0.5, 0.6)
    light = np.array([np.sin(az) * np.cos(el), -np.sin(el), np.cos(az) * np.cos(el)])
    shade = np.clip((nx * light[0] + ny * light[1] + nz * light[2]) / norm, 0, None)
    albedo = rng.uniform(140, 215)
    ambient = rng.uniform(8, 45)
    img = np.where(inside, ambient + albedo * shade, rng.uniform(0, 25))

    eye_y = cy - 0.18 * ry + rng.normal(0, 0.02)
    eye_dx = 0.38 * rx + rng.normal(0, 0.02)
    eye_r = rng.uniform(0.06, 0.09)
    for side in (-1, 1):
        ex = cx + side * eye_dx
        e = _blob(yy, xx, eye_y, ex, eye_r * 0.7, eye_r * 1.5)
        img = np.where(e < 1, img * 0.35, img)
        brow = _blob(yy, xx, eye_y - 0.16, ex, 0.035, eye_r * 2.0)
        img = np.where(brow < 1, img * rng.uniform(0.3, 0.6), img)
    # nose ridge: brighter on the lit side, shadow on the other
    nose = _blob(yy, xx, cy + 0.08 * ry, cx, 0.22, 0.06)
    img = np.where(nose < 1, img * (1 + 0.25 * np.sign(light[0]) * np.sign(xx - cx)), img)
    mouth = _blob(yy, xx, cy + 0.45 * ry, cx, 0.045, rng.uniform(0.18, 0.28))
    img = np.where(mouth < 1, img * rng.uniform(0.35, 0.6), img)
    hair = (yy < cy - 0.55 * ry + 0.08 * np.cos(6 * xx + rng.uniform(0, 6))) & inside
    img = np.where(hair, img * rng.uniform(0.15, 0.4), img)

    # mild blur, then sensor noise
    k = np.array([0.25, 0.5, 0.25])
    img = np.apply_along_axis(lambda r: np.convolve(np.pad(r, 1, mode="edge"), k, "valid"), 1, img)
    img = np.apply_along_axis(lambda c: np.convolve(np.pad(c, 1, mode="edge"), k, "valid"), 0, img)
    img = img + rng.normal(0, 2.5, img.shape)
    return GrayImage(np.clip(np.round(img), 0, 255).astype(np.uint8))


def face_corpus(count: int, seed: int = 0, height: int = 64, width: int = 56) -> list[GrayImage]:
    return [face_image(seed, i, height, width) for i in range(count)]


def write_corpus(directory, count: int, seed: int = 0, height: int = 64, width: int = 56) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = directory / f"face_{i:04d}.pgm"
        write_pgm(p, face_image(seed, i, height, width))
        paths.append(p)
    return paths


def noise_image(seed: int, height: int, width: int) -> GrayImage:
    """Uniform random pixels."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED,)))
    return GrayImage(rng.integers(0, 256, size=(height, width), dtype=np.uint8))
