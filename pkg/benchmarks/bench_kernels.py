"""Time the numba loop kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64] [--hidden 32]

Both implementations are imported directly, so the env flag does not matter
here.  The first numba call (compilation or cache load) is excluded.
"""
import argparse
import timeit

import numpy as np

from magrnn import gauss, nn, sim
from magrnn._accel import NUMBA_AVAILABLE
from magrnn.kernels import loops, vectorized


def cases(batch, hidden, rng):
    p = sim.DEFAULT_PARAMS
    n = p.n_steps
    model = nn.init_model(hidden, rng)
    enc, dec = model.encoder, model.decoder
    x = rng.standard_normal((n, batch))
    z = np.zeros((batch, hidden))
    fwd = vectorized.lstm_forward(enc.w_r, enc.w_h, enc.b, x, z, z)
    dH = rng.standard_normal(fwd[0][1:].shape)

    b0 = rng.standard_normal(4096)
    dw = rng.standard_normal((4096, n - 1))
    field = rng.standard_normal((4096, n))
    p0 = rng.standard_normal(4096)
    shot = rng.standard_normal((4096, n))

    ssm = gauss.build_model(p)
    pred, filt, gains, _ = gauss._covariance_pass(ssm, n)
    G = np.ascontiguousarray(gauss._smoother_gains(ssm, filt, pred)[0])
    signals = sim.generate_dataset(p, 4096, seed=0).signals

    return {
        "ou_paths (4096 x N)": lambda k: k.ou_paths(b0, dw, 0.99, 0.1414),
        "measure (4096 x N)": lambda k: k.measure(field, p0, shot, 0.4243, 0.9),
        "kalman_rts_means (4096 x N)": lambda k: k.kalman_rts_means(ssm.transition, ssm.observation, gains, G,
                                                                    ssm.prior.mean, signals),
        f"lstm_forward (N x {batch}, m={hidden})": lambda k: k.lstm_forward(enc.w_r, enc.w_h, enc.b, x, z, z),
        f"lstm_backward (N x {batch}, m={hidden})": lambda k: k.lstm_backward(enc.w_r, enc.w_h, x, *fwd, dH, z, z),
        f"decode_feedback ({batch}, m={hidden})": lambda k: k.decode_feedback(
            dec.w_r, dec.w_h, dec.b, model.W_out, model.b_out, z, z, n),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=32)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba not installed; loops run as plain python")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, call in cases(args.batch, args.hidden, rng).items():
        call(loops)  # compile / load cache
        t = {}
        for label, mod in (("numba", loops), ("numpy", vectorized)):
            t[label] = min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<36}{t['numba']:>10.2f}{t['numpy']:>10.2f}{t['numpy'] / t['numba']:>9.2f}")


if __name__ == "__main__":
    main()
