"""Reference STOI values for the shared test vectors.

Regenerates the deterministic test signals used by
`crates/core/tests/stoi_reference.rs` and evaluates them with pystoi
(`pip install pystoi`). The printed values are frozen into that test.

    python3 tools/stoi_reference.py
"""

import math

import numpy as np
from pystoi import stoi
from pystoi.utils import resample_oct

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self):
        # [-1, 1)
        return ((self.next_u64() >> 11) * (1.0 / (1 << 53))) * 2.0 - 1.0


def clean(n, fs, seed):
    rng = SplitMix64(seed)
    out = np.zeros(n)
    for i in range(n):
        t = i / fs
        env = (0.5 + 0.5 * math.sin(2 * math.pi * 3.1 * t)) ** 2
        if 1.0 <= t < 1.3:
            env = 0.0
        harm = 0.0
        for h in range(1, 13):
            harm += math.sin(2 * math.pi * 140.0 * h * t + 0.7 * h) / h
        out[i] = env * (harm + 0.05 * rng.uniform())
    return out


def noise(n, seed):
    rng = SplitMix64(seed)
    return np.array([rng.uniform() for _ in range(n)])


def mix(x, v, snr_db):
    px = np.mean(x * x)
    pv = np.mean(v * v)
    g = math.sqrt(px / (pv * 10 ** (snr_db / 10)))
    return x + g * v


def main():
    fs = 16000
    n = int(2.5 * fs)
    x = clean(n, fs, 7)
    v = noise(n, 99)
    for snr in (-5.0, 0.0, 5.0):
        print(f"fs=16000 snr={snr:+.0f}: {stoi(x, mix(x, v, snr), fs):.9f}")
    print(f"fs=16000 noise-only: {stoi(x, v, fs):.9f}")

    fs10 = 10000
    n10 = int(2.5 * fs10)
    x10 = clean(n10, fs10, 7)
    v10 = noise(n10, 99)
    print(f"fs=10000 snr=+0: {stoi(x10, mix(x10, v10, 0.0), fs10):.9f}")

    r = resample_oct(x, 10000, 16000)
    print(f"resampled len={len(r)}")
    for idx in (0, 1, 100, 4321, 12345, len(r) - 1):
        print(f"resampled[{idx}] = {r[idx]:.12e}")


if __name__ == "__main__":
    main()
