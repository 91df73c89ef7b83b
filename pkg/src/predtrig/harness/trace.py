"""Per-round trace: in-memory arrays plus CSV persistence.

File layout
-----------
Line 1 is ``# predtrig-trace v1 `` followed by a one-line JSON object with the
run metadata (config, derived constants, summary).  Line 2 is the header.
Each further line is one round ``k`` with the columns, in this order:

``k``
``x_{i}_{c}``        state of agent i at the start of round k
``u_{i}_{c}``        input applied over round k
``e_{i}_{c}``        self-estimation error ``x_i - xhat_ii``
``d2_{i}``           squared distance of the self error (one-step noise metric)
``pH_{i} p0_{i}``    raw scheduling and instantaneous priorities
``qH_{i} q0_{i}``    their quantized levels
``granted kappa skipped``  ``;``-separated agent ids
``has_agg``          hex bitmask: agents holding this round's final aggregate
``deliv_{j}``        hex bitmask of receivers of agent j's message
``unassigned slots V_self V_cross cost``

Per-agent column groups are written agent-major (all of agent 0, then agent
1, ...) and components in state order.  Floats use 17 significant digits so
a read-back is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError

MAGIC = "# predtrig-trace v1 "

FLOAT_GROUPS = ("x", "u", "e")
AGENT_FLOATS = ("d2", "pH", "p0")
AGENT_INTS = ("qH", "q0")
ID_SETS = ("granted", "kappa", "skipped")
TAIL = ("unassigned", "slots", "V_self", "V_cross", "cost")


@dataclass
class Trace:
    x: np.ndarray          # (T, N, n)
    u: np.ndarray          # (T, N, m)
    e: np.ndarray          # (T, N, n)
    d2: np.ndarray         # (T, N)
    pH: np.ndarray
    p0: np.ndarray
    qH: np.ndarray         # (T, N) int
    q0: np.ndarray
    granted: np.ndarray    # (T, N) bool
    kappa: np.ndarray
    skipped: np.ndarray
    has_agg: np.ndarray
    delivered: np.ndarray  # (T, N, N) bool, [k, sender, receiver]
    unassigned: np.ndarray # (T,) int
    slots: np.ndarray      # (T,)
    V_self: np.ndarray
    V_cross: np.ndarray
    cost: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return self.x.shape[0]

    @property
    def n_agents(self) -> int:
        return self.x.shape[1]

    @classmethod
    def allocate(cls, T: int, N: int, n: int, m: int) -> "Trace":
        f = lambda *s: np.zeros(s)
        b = lambda *s: np.zeros(s, dtype=bool)
        i = lambda *s: np.zeros(s, dtype=np.int64)
        return cls(f(T, N, n), f(T, N, m), f(T, N, n), f(T, N), f(T, N), f(T, N), i(T, N), i(T, N),
                   b(T, N), b(T, N), b(T, N), b(T, N), b(T, N, N), i(T), f(T), f(T), f(T), f(T))

    def truncate(self, T: int) -> None:
        for name in self.__dataclass_fields__:
            if name != "meta":
                setattr(self, name, getattr(self, name)[:T])


def header(N: int, n: int, m: int) -> list[str]:
    cols = ["k"]
    for g, width in zip(FLOAT_GROUPS, (n, m, n)):
        cols += [f"{g}_{i}_{c}" for i in range(N) for c in range(width)]
    for g in AGENT_FLOATS + AGENT_INTS:
        cols += [f"{g}_{i}" for i in range(N)]
    cols += list(ID_SETS) + ["has_agg"] + [f"deliv_{j}" for j in range(N)] + list(TAIL)
    return cols


def _ids(mask_row: np.ndarray) -> str:
    return ";".join(str(i) for i in np.flatnonzero(mask_row))


def _hexmask(mask_row: np.ndarray) -> str:
    """Bit i set when entry i is true."""
    return format(int.from_bytes(np.packbits(mask_row, bitorder="little").tobytes(), "little"), "x")


def write_trace(trace: Trace, path) -> None:
    T, N, n = trace.x.shape
    m = trace.u.shape[2]
    cols = header(N, n, m)
    lead = np.concatenate([trace.x.reshape(T, -1), trace.u.reshape(T, -1), trace.e.reshape(T, -1),
                           trace.d2, trace.pH, trace.p0], axis=1)
    lead_fmt = ",".join(["%.17g"] * lead.shape[1])
    ints = np.concatenate([trace.qH, trace.q0], axis=1)
    lines = [MAGIC + json.dumps(trace.meta, sort_keys=True, separators=(",", ":")), ",".join(cols)]
    for k in range(T):
        parts = [str(k), lead_fmt % tuple(lead[k]), ",".join(map(str, ints[k]))]
        parts += [_ids(getattr(trace, s)[k]) for s in ID_SETS]
        parts.append(_hexmask(trace.has_agg[k]))
        parts += [_hexmask(row) for row in trace.delivered[k]]
        parts.append(str(int(trace.unassigned[k])))
        parts.append("%.17g,%.17g,%.17g,%.17g" % (trace.slots[k], trace.V_self[k], trace.V_cross[k], trace.cost[k]))
        lines.append(",".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def _unmask(value: str, N: int) -> np.ndarray:
    bits = int(value, 16)
    return np.array([(bits >> i) & 1 for i in range(N)], dtype=bool)


def _unids(value: str, N: int) -> np.ndarray:
    out = np.zeros(N, dtype=bool)
    if value:
        out[[int(i) for i in value.split(";")]] = True
    return out


def read_trace(path) -> Trace:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith(MAGIC):
        raise ConfigurationError(f"{path} is not a predtrig trace")
    meta = json.loads(lines[0][len(MAGIC):])
    N, n, m = meta["n_agents"], meta["n"], meta["m"]
    cols = lines[1].split(",")
    if cols != header(N, n, m):
        raise ConfigurationError(f"{path}: header does not match the v1 column order")
    T = len(lines) - 2
    tr = Trace.allocate(T, N, n, m)
    n_lead = N * (2 * n + m) + 3 * N
    for k, line in enumerate(lines[2:]):
        f = line.split(",")
        if int(f[0]) != k:
            raise ConfigurationError(f"{path}: row {k} is labelled {f[0]}")
        pos = 1
        lead = np.array(f[pos:pos + n_lead], dtype=float)
        pos += n_lead
        tr.x[k] = lead[: N * n].reshape(N, n)
        tr.u[k] = lead[N * n: N * (n + m)].reshape(N, m)
        tr.e[k] = lead[N * (n + m): N * (2 * n + m)].reshape(N, n)
        rest = lead[N * (2 * n + m):].reshape(3, N)
        tr.d2[k], tr.pH[k], tr.p0[k] = rest
        ints = np.array(f[pos:pos + 2 * N], dtype=np.int64).reshape(2, N)
        pos += 2 * N
        tr.qH[k], tr.q0[k] = ints
        for s in ID_SETS:
            getattr(tr, s)[k] = _unids(f[pos], N)
            pos += 1
        tr.has_agg[k] = _unmask(f[pos], N)
        pos += 1
        for j in range(N):
            tr.delivered[k, j] = _unmask(f[pos + j], N)
        pos += N
        tr.unassigned[k] = int(f[pos])
        tr.slots[k], tr.V_self[k], tr.V_cross[k], tr.cost[k] = (float(v) for v in f[pos + 1: pos + 5])
    tr.meta = meta
    return tr
