"""Fast invariant suite behind ``qednet selftest``; exits nonzero if any check fails."""
from __future__ import annotations

import sys
import time

import numpy as np

from . import circuits, cnn, indices, metrics, model, qsim
from .data import Raster, SynthSpec, decode_raster, encode_raster, nearest_template, synth_scene


def _gates(rng):
    for kind in (qsim.RX, qsim.RY, qsim.ISING_XX):
        for theta in rng.uniform(-2 * np.pi, 2 * np.pi, 50):
            u = qsim.gate_matrix(kind, theta)
            assert np.linalg.norm(u.conj().T @ u - np.eye(len(u))) < 1e-12
    for kind in (qsim.NOT, qsim.TOFFOLI, qsim.PAULI_Z):
        u = qsim.gate_matrix(kind)
        assert np.array_equal(u @ u, np.eye(len(u)))


def _norm_and_range(rng):
    for _ in range(200):
        p = circuits.QnnParams.init(rng, np.pi)
        state = qsim.run_circuit(circuits.spectral_circuit(), p.spectral[0], np.pi * rng.uniform(0, 1, 4))
        assert abs(state.norm_sq() - 1) < 1e-12
        assert 0 <= circuits.ffb(rng.uniform(0, 1, 12), p) <= 1


def _shift_rule(rng):
    c = circuits.qfm_circuit()
    p, a = rng.uniform(-3, 3, 12), np.pi * rng.uniform(0, 1, 3)
    gp, _ = qsim.param_shift_grad(c, p, a, [1.0])
    h = 1e-5
    fd = [(qsim.objective(c, p + h * e, a, [1.0]) - qsim.objective(c, p - h * e, a, [1.0])) / (2 * h) for e in np.eye(12)]
    assert np.max(np.abs(gp - fd)) < 1e-7


def _metrics():
    cm = metrics.ConfusionMatrix(np.array([[4, 1], [1, 4]]))
    assert abs(metrics.oa(cm) - 80) < 1e-12 and abs(metrics.kappa(cm) - 0.6) < 1e-12


def _indices():
    vals = np.zeros((1, 1, 12))
    vals[0, 0, [2, 3, 7, 10]] = [0.1, 0.2, 0.6, 0.2]
    r = Raster(vals)
    assert abs(indices.ndvi(r)[0, 0] - 0.5) < 1e-12
    assert abs(indices.mvi(r)[0, 0] - 5.0) < 1e-12


def _threshold():
    _, t = model.auto_threshold((np.arange(100) / 100).reshape(10, 10), return_threshold=True)
    assert t == 0.45


def _model(rng):
    assert model.n_params(model.CNN_QNN, 64) == cnn.n_cnn_params(64) + circuits.N_QNN_PARAMS <= 100_000
    p = model.ModelParams.init(model.CNN_QNN, 4, seed=0)
    y = model.forward(rng.uniform(size=(8, 8, 12)), p)
    assert y.shape == (8, 8) and np.all((y > 0) & (y < 1))


def _data():
    raster, mask = synth_scene(SynthSpec(seed=0, height=16, width=16))
    back = decode_raster(encode_raster(raster))
    assert np.array_equal(back.values, raster.values)
    assert metrics.kappa(metrics.confusion(nearest_template(raster), mask)) >= 0.99


CHECKS = [
    ("gate unitarity", _gates),
    ("statevector norm and output range", _norm_and_range),
    ("parameter-shift gradient", _shift_rule),
    ("metric formulas", lambda rng: _metrics()),
    ("index formulas", lambda rng: _indices()),
    ("automatic threshold", lambda rng: _threshold()),
    ("model shape and budget", _model),
    ("container round trip and generator", lambda rng: _data()),
]


def run(out=sys.stdout) -> int:
    failures = 0
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            check(np.random.default_rng(0))
            status = "ok"
        except Exception as exc:  # noqa: BLE001
            failures += 1
            status = f"FAIL ({type(exc).__name__}: {exc})"
        print(f"{name:<40} {status} [{time.perf_counter() - start:.2f}s]", file=out)
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed", file=out)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(run())
