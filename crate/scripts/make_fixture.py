#!/usr/bin/env python3
"""Regenerate fixtures/klines: synthetic 4h Binance-format klines for 8 assets.

Closes follow a shared momentum walk (each altcoin leads BTC by a few bars)
and are rescaled so every asset spans its documented min/max close exactly.
IOTA is missing one bar to exercise carry-forward alignment.
"""
import csv
import math
import random
from pathlib import Path

START_MS = 1527811200000  # 2018-06-01T00:00:00Z
STEP_MS = 4 * 3600 * 1000
ROWS = 700 * 6 + 1  # through 2020-05-01T00:00:00Z inclusive

# symbol, min close, max close, lead over BTC in bars
ASSETS = [
    ("BTCUSDT", 3156.26, 13960.76, 0),
    ("ETHUSDT", 81.79, 628.81, 2),
    ("LTCUSDT", 22.32, 145.90, 3),
    ("EOSUSDT", 1.36, 15.68, 1),
    ("IOTAUSDT", 0.05, 2.01, 2),
    ("XRPUSDT", 0.10, 0.80, 4),
    ("XLMUSDT", 0.03, 0.35, 3),
    ("ADAUSDT", 0.02, 0.24, 1),
]
MISSING = ("IOTAUSDT", 2000)


def walk(rng, n):
    level, velocity, out = 0.0, 0.0, []
    for _ in range(n):
        velocity = 0.95 * velocity + rng.gauss(0.0, 1.0)
        level += velocity
        out.append(level)
    return out


def rescale(xs, lo, hi):
    a, b = min(xs), max(xs)
    return [lo + (x - a) / (b - a) * (hi - lo) for x in xs]


def main():
    rng = random.Random(20180601)
    max_lead = max(a[3] for a in ASSETS)
    common = walk(rng, ROWS + max_lead)
    out_dir = Path(__file__).resolve().parent.parent / "fixtures" / "klines"
    out_dir.mkdir(parents=True, exist_ok=True)
    for symbol, lo, hi, lead in ASSETS:
        idio = walk(rng, ROWS)
        # log-space mix so prices stay positive after rescaling
        raw = [common[t + lead] + 0.25 * idio[t] for t in range(ROWS)]
        closes = rescale(raw, math.log(lo), math.log(hi))
        closes = [math.exp(c) for c in closes]
        closes[closes.index(min(closes))] = lo
        closes[closes.index(max(closes))] = hi
        with open(out_dir / f"{symbol}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            prev = closes[0]
            for t, close in enumerate(closes):
                if (symbol, t) == MISSING:
                    prev = close
                    continue
                open_ = prev
                spread = 0.004 * rng.random()
                high = max(open_, close) * (1 + spread)
                low = min(open_, close) * (1 - spread)
                volume = 1000.0 * (1 + rng.random())
                open_time = START_MS + t * STEP_MS
                w.writerow([
                    open_time, f"{open_:.8f}", f"{high:.8f}", f"{low:.8f}", f"{close:.8f}",
                    f"{volume:.4f}", open_time + STEP_MS - 1, f"{volume * close:.4f}",
                    rng.randint(100, 5000), f"{volume / 2:.4f}", f"{volume * close / 2:.4f}", "0",
                ])
                prev = close


if __name__ == "__main__":
    main()
