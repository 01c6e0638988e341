"""Trajectory store persistence.

Binary container: a text magic line, one canonical JSON header line, then per
trajectory a `traj <T>` line followed by states/actions/rewards as row-major
little-endian float64 blocks. Returns-to-go are derived, never stored.
A JSON-lines text export is provided for interop and debugging.
"""

from __future__ import annotations

import json

import numpy as np

from .envs import Trajectory, TrajectoryStore

MAGIC = b"drdt3/1\n"


class StoreFormatError(ValueError):
    """Raised for version mismatch, truncation, or inconsistent dimensions."""


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_store(store, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        header = {
            "env_id": store.env_id,
            "d_s": store.d_s,
            "d_a": store.d_a,
            "n_traj": store.count,
            "state_mean": list(store.state_mean),
            "state_std": list(store.state_std),
            "max_abs_return": store.max_abs_return,
        }
        fh.write(_canonical_json(header).encode() + b"\n")
        for t in store.trajectories:
            fh.write(b"traj %d\n" % t.length)
            fh.write(np.ascontiguousarray(t.states, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(t.actions, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(t.rewards, dtype="<f8").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise StoreFormatError(f"truncated file while reading {what}")
    return buf


def _read_line(fh, what):
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise StoreFormatError(f"truncated file while reading {what}")
    return line


def load_store(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise StoreFormatError(
                f"bad magic {magic!r}; expected {MAGIC!r} (version mismatch?)"
            )
        try:
            header = json.loads(_read_line(fh, "header"))
        except json.JSONDecodeError as e:
            raise StoreFormatError(f"unparseable header: {e}") from None
        d_s, d_a = int(header["d_s"]), int(header["d_a"])
        trajs = []
        for j in range(int(header["n_traj"])):
            line = _read_line(fh, f"trajectory {j} header")
            if not line.startswith(b"traj "):
                raise StoreFormatError(f"bad trajectory record header {line!r}")
            t_len = int(line.split()[1])
            if t_len < 1:
                raise StoreFormatError(f"trajectory {j} has invalid length {t_len}")
            states = np.frombuffer(
                _read_exact(fh, 8 * t_len * d_s, f"states of trajectory {j}"),
                dtype="<f8",
            ).reshape(t_len, d_s)
            actions = np.frombuffer(
                _read_exact(fh, 8 * t_len * d_a, f"actions of trajectory {j}"),
                dtype="<f8",
            ).reshape(t_len, d_a)
            rewards = np.frombuffer(
                _read_exact(fh, 8 * t_len, f"rewards of trajectory {j}"),
                dtype="<f8",
            )
            trajs.append(Trajectory(states, actions, rewards))
        if fh.read(1):
            raise StoreFormatError("trailing bytes after the last trajectory")
    return TrajectoryStore(header["env_id"], d_s, d_a, trajs)


def export_text(store, path):
    """One JSON record per line: env header first, then each trajectory."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical_json({
            "env_id": store.env_id, "d_s": store.d_s, "d_a": store.d_a,
            "n_traj": store.count,
        }) + "\n")
        for t in store.trajectories:
            fh.write(_canonical_json({
                "states": t.states.tolist(),
                "actions": t.actions.tolist(),
                "rewards": t.rewards.tolist(),
            }) + "\n")
