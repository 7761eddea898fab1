"""Time integrators and trajectory storage with dense output."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import WindowError
from .grid import fornberg_weights

# ARS(4,4,3): implicit (A) and explicit (B) tableaux, stiffly accurate
ARS443_A = np.array(
    [
        [0, 0, 0, 0, 0],
        [0, 1 / 2, 0, 0, 0],
        [0, 1 / 6, 1 / 2, 0, 0],
        [0, -1 / 2, 1 / 2, 1 / 2, 0],
        [0, 3 / 2, -3 / 2, 1 / 2, 1 / 2],
    ]
)
ARS443_B = np.array(
    [
        [0, 0, 0, 0, 0],
        [1 / 2, 0, 0, 0, 0],
        [11 / 18, 1 / 18, 0, 0, 0],
        [5 / 6, -5 / 6, 1 / 2, 0, 0],
        [1 / 4, 7 / 4, 3 / 4, -7 / 4, 0],
    ]
)
ARS443_C = np.array([0, 1 / 2, 2 / 3, 1 / 2, 1])
ARS443_GAMMA = 0.5


def ssprk3_step(rhs, t, y, dt):
    """Third-order strong-stability-preserving Runge-Kutta step.

    ``rhs(t, y)`` returns the tendency; ``y`` is any array-like supporting
    linear combinations.
    """
    k1 = rhs(t, y)
    y1 = y + dt * k1
    k2 = rhs(t + dt, y1)
    y2 = 0.75 * y + 0.25 * (y1 + dt * k2)
    k3 = rhs(t + 0.5 * dt, y2)
    return y / 3.0 + 2.0 / 3.0 * (y2 + dt * k3)


def ars443_step(t, y, dt, explicit, solve):
    """One ARS(4,4,3) step.

    Parameters
    ----------
    explicit : callable
        ``explicit(t, y)`` returns the non-stiff tendency.
    solve : callable
        ``solve(t, rhs, h)`` returns ``Y`` with ``Y - h L Y = rhs`` and the
        boundary conditions valid at time ``t``.

    Notes
    -----
    The implicit stage derivatives are recovered as ``(Y - rhs) / h`` so
    they stay consistent with whatever boundary rows the solver imposes.
    """
    A, B, C = ARS443_A, ARS443_B, ARS443_C
    N = [explicit(t, y)]
    K = [None]
    Y = y
    for i in range(1, 5):
        rhs = y.copy()
        for j in range(i):
            if B[i, j]:
                rhs = rhs + dt * B[i, j] * N[j]
            if j > 0 and A[i, j]:
                rhs = rhs + dt * A[i, j] * K[j]
        h = dt * A[i, i]
        Y = solve(t + C[i] * dt, rhs, h)
        K.append((Y - rhs) / h)
        if i < 4:
            N.append(explicit(t + C[i] * dt, Y))
    return Y


class Trajectory:
    """Snapshots of named arrays at increasing times with Lagrange dense output.

    Parameters
    ----------
    times : array_like
        Strictly increasing sample times.
    data : dict of str -> ndarray
        Arrays of shape ``(len(times), ...)``.
    meta : dict, optional
        JSON-serializable metadata (grid, parameters).
    order : int
        Number of samples in each interpolation stencil.
    """

    def __init__(self, times, data, meta=None, order=6):
        self.times = np.asarray(times, dtype=float)
        self.data = {k: np.asarray(v) for k, v in data.items()}
        self.meta = dict(meta or {})
        self.order = order
        for key, arr in self.data.items():
            if arr.shape[0] != self.times.size:
                raise ValueError(f"'{key}' has {arr.shape[0]} samples, expected {self.times.size}")

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def t1(self):
        return float(self.times[-1])

    def covers(self, t0, t1, slack=1e-12):
        return self.t0 <= t0 + slack and self.t1 >= t1 - slack

    def _weights(self, t, deriv):
        times = self.times
        span = max(self.t1 - self.t0, 1.0)
        if t < self.t0 - 1e-12 * span or t > self.t1 + 1e-12 * span:
            raise WindowError(f"time {t} outside trajectory window [{self.t0}, {self.t1}]")
        n = times.size
        if deriv == 0:
            hit = np.flatnonzero(np.abs(times - t) <= 1e-13 * span)
            if hit.size:
                return np.array([hit[0]]), np.array([1.0])
        m = min(self.order, n)
        j = int(np.searchsorted(times, t))
        s0 = int(np.clip(j - m // 2, 0, n - m))
        idx = np.arange(s0, s0 + m)
        w = fornberg_weights(t, times[idx], deriv)[deriv]
        return idx, w

    def at(self, name, t, deriv=0):
        """Interpolated value (or time derivative) of ``name`` at time ``t``.

        If ``name + '_t'`` is stored, first derivatives use the stored
        tendencies instead of differentiating the interpolant.
        """
        if deriv == 1 and name + "_t" in self.data:
            return self.at(name + "_t", t, 0)
        idx, w = self._weights(t, deriv)
        arr = self.data[name]
        return np.tensordot(w, arr[idx], axes=(0, 0))

    def index_of(self, t):
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        return int(hit[0]) if hit.size else None

    def save(self, directory, stride=1):
        """Write one ``.npz`` per stored time plus ``index.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i in range(0, self.times.size, stride):
            fname = f"snapshot_{i:05d}.npz"
            np.savez(directory / fname, **{k: v[i] for k, v in self.data.items()})
            files.append({"t": float(self.times[i]), "file": fname})
        index = {"format": "inviscid-limit-trajectory", "version": 1, "meta": self.meta, "snapshots": files}
        (directory / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
        return directory / "index.json"

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        if index.get("format") != "inviscid-limit-trajectory":
            raise ValueError("not a trajectory store")
        times, stacks = [], {}
        for entry in index["snapshots"]:
            times.append(entry["t"])
            with np.load(directory / entry["file"]) as snap:
                for key in snap.files:
                    stacks.setdefault(key, []).append(snap[key])
        return cls(times, {k: np.stack(v) for k, v in stacks.items()}, index["meta"])

    def save_npz(self, path):
        """Single-file form used for the pipeline cache."""
        np.savez(
            path,
            __times__=self.times,
            __meta__=np.array(json.dumps(self.meta, sort_keys=True)),
            **self.data,
        )

    @classmethod
    def load_npz(cls, path):
        with np.load(path, allow_pickle=False) as f:
            data = {k: f[k] for k in f.files if not k.startswith("__")}
            return cls(f["__times__"], data, json.loads(str(f["__meta__"])))
