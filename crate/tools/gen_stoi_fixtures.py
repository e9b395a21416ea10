"""Regenerates the STOI reference fixtures used by the metrics tests.

Requires numpy, scipy and pystoi. Run from the repository root:
    python tools/gen_stoi_fixtures.py
"""
import json
import os

import numpy as np
from pystoi import stoi
from scipy.io import wavfile
from scipy.signal import lfilter

OUT = os.path.join("crates", "core", "tests", "data", "stoi")


def speechlike(rate, seconds, rng):
    n = int(rate * seconds)
    t = np.arange(n) / rate
    out = np.zeros(n)
    pos = 0
    while pos < n:
        syl = int(rate * rng.uniform(0.12, 0.25))
        gap = int(rate * rng.uniform(0.03, 0.15))
        f0 = rng.uniform(100, 220)
        seg = np.zeros(min(syl, n - pos))
        tt = t[: len(seg)]
        for h in range(1, 25):
            if h * f0 > rate / 2 - 200:
                break
            amp = np.exp(-((h * f0 - rng.uniform(400, 900)) / 700.0) ** 2) + 0.1 / h
            seg += amp * np.sin(2 * np.pi * h * f0 * tt + rng.uniform(0, 2 * np.pi))
        seg *= np.hanning(len(seg))
        out[pos : pos + len(seg)] = seg
        pos += syl + gap
    return 0.5 * out / np.max(np.abs(out))


def degrade(kind, x, rate, rng):
    if kind == "white":
        n = rng.standard_normal(len(x))
        snr = rng.uniform(-5, 10)
        return x + n * np.sqrt(np.mean(x**2) / np.mean(n**2) / 10 ** (snr / 10))
    if kind == "lowpass":
        a = 0.9
        return lfilter([1 - a], [1, -a], x)
    if kind == "clip":
        return np.clip(x, -0.1, 0.1)
    if kind == "echo":
        d = int(0.05 * rate)
        y = x.copy()
        y[d:] += 0.7 * x[:-d]
        return y
    if kind == "gated":
        n = rng.standard_normal(len(x)) * 0.05
        g = (np.arange(len(x)) // int(0.1 * rate)) % 2
        return x * g + n
    raise ValueError(kind)


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(20240601)
    kinds = ["white", "lowpass", "clip", "echo", "gated"]
    cases = []
    for i in range(10):
        rate = 10000 if i < 5 else 16000
        kind = kinds[i % 5]
        clean = speechlike(rate, 1.2, rng).astype(np.float32)
        est = degrade(kind, clean.astype(np.float64), rate, rng).astype(np.float32)
        cname, ename = f"case{i:02}_clean.wav", f"case{i:02}_est.wav"
        wavfile.write(os.path.join(OUT, cname), rate, clean)
        wavfile.write(os.path.join(OUT, ename), rate, est)
        value = stoi(clean.astype(np.float64), est.astype(np.float64), rate, extended=False)
        cases.append({"clean": cname, "estimate": ename, "rate": rate, "kind": kind, "stoi": float(value)})
    with open(os.path.join(OUT, "expected.json"), "w") as f:
        json.dump({"reference": "pystoi 0.4.1", "cases": cases}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
