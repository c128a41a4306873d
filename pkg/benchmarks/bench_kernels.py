"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel plus a full training step, with the speedup of
the compiled backend. Both backends are also checked for identical output.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hiadv._kernels import _fallback

try:
    from hiadv._kernels import _ext
except ImportError:
    _ext = None


def kernel_cases(rng: np.random.Generator):
    n_params = 64 * 64 * 20
    p, g = rng.normal(size=n_params), rng.normal(size=n_params)
    m, v = np.zeros(n_params), np.zeros(n_params)
    yield ("adam_update (82k params)",
           lambda k: k.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 0.5, 1e-8))

    table = np.zeros((600, 64))
    idx = rng.integers(0, 600, size=8 * 24).astype(np.int64)
    rows = rng.normal(size=(idx.size, 64))
    yield "scatter_add_rows (192 x 64)", lambda k: k.scatter_add_rows(table, idx, rows)

    depth = 6
    parent = [-1]
    for i in range(1, 2 ** (depth + 1) - 1):
        parent.append((i - 1) // 2)
    parent = np.array(parent, dtype=np.int64)
    dep = np.zeros_like(parent)
    for i in range(1, parent.size):
        dep[i] = dep[parent[i]] + 1
    yield f"tree_distances ({parent.size} nodes)", lambda k: k.tree_distances(parent, dep)


def check_parity(rng: np.random.Generator) -> None:
    a = [rng.normal(size=1000) for _ in range(2)]
    outs = []
    for k in (_fallback, _ext):
        p, m, v = a[0].copy(), np.zeros(1000), np.zeros(1000)
        for _ in range(5):
            k.adam_update(p, a[1], m, v, 1e-3, 0.9, 0.999, 0.3, 1e-8)
        outs.append(p)
    assert np.array_equal(outs[0], outs[1]), "adam_update differs between backends"


STEP_SNIPPET = """
import time, numpy as np
from hiadv.config import RunConfig
from hiadv.data import SynthSpec, Sample, Vocab, batcher, gen_dataset, gen_taxonomy
from hiadv.framework import build_model, init_state, train_step
spec = SynthSpec(n_train=160, n_dev=0, n_test=0, seed=0)
h = gen_taxonomy(spec)
raw = gen_dataset(spec, h)["train"]
vocab = Vocab.build((s.tokens for s in raw), h)
train = [Sample(s.tokens, s.labels, vocab.encode(s.tokens)) for s in raw]
cfg = RunConfig()
model = build_model(h, vocab, cfg)
state = init_state(model, cfg.training)
batches = list(batcher(train, 8, len(h), seed=0))
train_step(model, batches[0], state)
t = time.perf_counter()
for b in batches[1:]:
    train_step(model, b, state)
print((time.perf_counter() - t) / (len(batches) - 1))
"""


def step_time(pure: bool) -> float:
    env = dict(os.environ, HIADV_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if _ext is None:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    check_parity(rng)
    print(f"{'kernel':32} {'python us':>10} {'compiled us':>12} {'speedup':>8}")
    for name, fn in kernel_cases(rng):
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=args.repeat, repeat=3)) / args.repeat
        t_c = min(timeit.repeat(lambda: fn(_ext), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:32} {t_py * 1e6:10.1f} {t_c * 1e6:12.1f} {t_py / t_c:8.2f}")
    s_py, s_c = step_time(True), step_time(False)
    print(f"{'train_step (B=8, 121 labels)':32} {s_py * 1e6:10.1f} {s_c * 1e6:12.1f} {s_py / s_c:8.2f}")


if __name__ == "__main__":
    main()
