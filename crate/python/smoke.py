"""Smoke test for the audible_py extension.

Build and run from the workspace root:

    cargo build -p audible-py --release
    cp target/release/libaudible_py.so python/audible_py.so
    python3 python/smoke.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import audible_py as au


def main():
    xprime, t = au.gamma([0.0, 1.0], [1.0, 1.0])
    assert abs(xprime[0] + 1.0) < 1e-15 and abs(t - math.sqrt(2.0)) < 1e-15

    with tempfile.TemporaryDirectory() as out:
        cfg = au.RunConfig.reference(1.0 / 16.0, out)
        assert au.RunConfig.from_json(cfg.to_json()).hash() == cfg.hash()
        assert au.in_audible_zone(cfg, [0.0, 1.0], [0.0, 1.0])
        assert not au.in_audible_zone(cfg, [0.0, 1.0], [1.0, 0.0])
        assert au.principal_symbol(cfg, [0.0, 1.0], [0.0, 2.0]) > 0.0

        sigma = au.sigma(cfg, 64)
        value, stderr = au.sigma_montecarlo(cfg, 200_000, 2024)
        assert abs(sigma - value) < 5.0 * stderr, (sigma, value, stderr)

        a = au.assemble(cfg)
        m, n = a.shape
        assert (m, n) == (cfg.n_rows(), cfg.n_cols())
        c = [math.sin(0.1 * j) for j in range(n)]
        direct = au.solve(cfg, c)
        via_matrix = a.matvec(c)
        assert max(abs(x - y) for x, y in zip(direct, via_matrix)) < 1e-12

        svals = au.singular_values(a)
        assert all(x >= y for x, y in zip(svals, svals[1:]))
        assert au.counting_function(svals, 0.5 * svals[0]) >= 1

        exact = [math.sqrt(4.0 / k) for k in range(1, 1025)]
        s_est, slope = au.weyl_estimate(exact, 2)
        assert abs(s_est - 4.0) < 1e-12 and abs(slope + 0.5) < 1e-9

        coeffs, kept = au.truncated_solve(a, via_matrix, "relative", 1e-8)
        assert au.correlation(coeffs, c) > 0.999, au.correlation(coeffs, c)

        path = os.path.join(out, "A.bin")
        a.save(path, cfg.hash())
        assert au.ObservationMatrix.load(path).shape == (m, n)

        assert au.run_pipeline(cfg, ["sigma"]) == 0
        try:
            au.run_pipeline(cfg, ["no-such-stage"])
        except ValueError:
            pass
        else:
            raise AssertionError("unknown stage accepted")

    print(f"smoke ok: N = {n}, s_1 = {svals[0]:.4f}, sigma = {sigma:.5f}, kept {kept} terms")


if __name__ == "__main__":
    main()
