"""Sparse linear / mixed-integer program container and incremental builder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

CONTINUOUS, BINARY, INTEGER = "C", "B", "I"
LE, GE, EQ = "L", "G", "E"

_SENSE_ALIASES = {"<=": LE, "L": LE, ">=": GE, "G": GE, "=": EQ, "==": EQ, "E": EQ}


@dataclass(frozen=True)
class MilpInstance:
    """``min c.x + offset`` subject to ``A x (senses) rhs`` and ``lb <= x <= ub``.

    ``kinds`` holds ``"C"``, ``"B"`` or ``"I"`` per column.  Rows are stored
    as a CSR matrix.
    """

    A: sparse.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    kinds: np.ndarray
    var_names: tuple = ()
    row_names: tuple = ()
    offset: float = 0.0

    def __post_init__(self):
        m, n = self.A.shape
        if not (len(self.senses) == len(self.rhs) == m):
            raise ValueError("row data sizes disagree")
        if not (len(self.c) == len(self.lb) == len(self.ub) == len(self.kinds) == n):
            raise ValueError("column data sizes disagree")
        if not (np.all(np.isfinite(self.A.data)) and np.all(np.isfinite(self.rhs))
                and np.all(np.isfinite(self.c))):
            raise ValueError("NaN or infinite coefficient in instance")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("NaN bound in instance")
        binary = self.kinds == BINARY
        if np.any(self.lb[binary] < 0) or np.any(self.ub[binary] > 1):
            raise ValueError("binary variables must be bounded in [0, 1]")
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"x{j}" for j in range(n)))
        if not self.row_names:
            object.__setattr__(self, "row_names", tuple(f"r{i}" for i in range(m)))

    @property
    def num_vars(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def integer_mask(self) -> np.ndarray:
        return self.kinds != CONTINUOUS

    def var_index(self, name: str) -> int:
        index = getattr(self, "_index", None)
        if index is None:
            index = {nm: j for j, nm in enumerate(self.var_names)}
            object.__setattr__(self, "_index", index)
        return index[name]

    def objective(self, x) -> float:
        return float(self.c @ x + self.offset)

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x) -> float:
        """Largest violation of any row or bound (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        viol = np.zeros(self.num_rows)
        le, ge, eq = self.senses == LE, self.senses == GE, self.senses == EQ
        viol[le] = act[le] - self.rhs[le]
        viol[ge] = self.rhs[ge] - act[ge]
        viol[eq] = np.abs(act[eq] - self.rhs[eq])
        worst = float(max(viol.max(initial=0.0), 0.0))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return worst

    def is_feasible(self, x, tol: float = 1e-6, int_tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if self.max_violation(x) > tol:
            return False
        mask = self.integer_mask
        return bool(np.all(np.abs(x[mask] - np.round(x[mask])) <= int_tol))

    def with_bounds(self, lb, ub) -> "MilpInstance":
        return MilpInstance(self.A, self.senses, self.rhs, self.c, np.asarray(lb, float),
                            np.asarray(ub, float), self.kinds, self.var_names, self.row_names,
                            self.offset)

    def relaxation(self) -> "MilpInstance":
        return MilpInstance(self.A, self.senses, self.rhs, self.c, self.lb, self.ub,
                            np.full(self.num_vars, CONTINUOUS), self.var_names,
                            self.row_names, self.offset)

    def census(self) -> dict:
        """Counts of columns by kind and of rows."""
        return {
            "variables": self.num_vars,
            "binary": int(np.sum(self.kinds == BINARY)),
            "integer": int(np.sum(self.kinds == INTEGER)),
            "continuous": int(np.sum(self.kinds == CONTINUOUS)),
            "rows": self.num_rows,
        }

    def to_lp_format(self) -> str:
        """Render in the CPLEX LP text format.

        Grammar::

            Minimize
             obj: [+|-] coef name ...
            Subject To
             row: terms (<=|>=|=) rhs
            Bounds
             lb <= name <= ub | name free
            Binaries / Generals
             names...
            End
        """
        def terms(coefs: Iterable[tuple[float, str]]) -> str:
            out = []
            for coef, name in coefs:
                sign = "-" if coef < 0 else "+"
                out.append(f"{sign} {abs(coef):.12g} {name}")
            return " ".join(out) if out else "0 " + (self.var_names[0] if self.var_names else "")

        lines = ["\\ generated by ctas", "Minimize"]
        obj = [(float(v), self.var_names[j]) for j, v in enumerate(self.c) if v != 0]
        lines.append(" obj: " + terms(obj))
        if self.offset:
            lines[-1] += f" + {self.offset:.12g} __offset"
        lines.append("Subject To")
        sym = {LE: "<=", GE: ">=", EQ: "="}
        A = self.A.tocsr()
        for i in range(self.num_rows):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            row = [(float(A.data[p]), self.var_names[A.indices[p]]) for p in range(lo, hi)]
            lines.append(f" {self.row_names[i]}: {terms(row)} {sym[self.senses[i]]} {self.rhs[i]:.12g}")
        lines.append("Bounds")
        for j in range(self.num_vars):
            lo, hi, name = self.lb[j], self.ub[j], self.var_names[j]
            if lo == -math.inf and hi == math.inf:
                lines.append(f" {name} free")
            elif not (lo == 0 and hi == math.inf):
                lo_s = "-inf" if lo == -math.inf else f"{lo:.12g}"
                hi_s = "+inf" if hi == math.inf else f"{hi:.12g}"
                lines.append(f" {lo_s} <= {name} <= {hi_s}")
        if self.offset:
            lines.append(" __offset = 1")
        binaries = [self.var_names[j] for j in range(self.num_vars) if self.kinds[j] == BINARY]
        generals = [self.var_names[j] for j in range(self.num_vars) if self.kinds[j] == INTEGER]
        if binaries:
            lines.append("Binaries")
            lines.extend(f" {b}" for b in binaries)
        if generals:
            lines.append("Generals")
            lines.extend(f" {g}" for g in generals)
        lines.append("End")
        return "\n".join(lines) + "\n"


LpInstance = MilpInstance


@dataclass
class ModelBuilder:
    """Accumulates named columns and rows, then freezes them into an instance."""

    _names: list = field(default_factory=list)
    _lb: list = field(default_factory=list)
    _ub: list = field(default_factory=list)
    _kinds: list = field(default_factory=list)
    _obj: list = field(default_factory=list)
    _rows_i: list = field(default_factory=list)
    _rows_j: list = field(default_factory=list)
    _rows_v: list = field(default_factory=list)
    _senses: list = field(default_factory=list)
    _rhs: list = field(default_factory=list)
    _row_names: list = field(default_factory=list)
    _index: dict = field(default_factory=dict)
    offset: float = 0.0

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                kind: str = CONTINUOUS, obj: float = 0.0) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        j = len(self._names)
        self._index[name] = j
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._kinds.append(kind)
        self._obj.append(float(obj))
        return j

    def var(self, name: str) -> int:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    def set_obj(self, j: int, value: float):
        self._obj[j] = float(value)

    def add_obj(self, j: int, value: float):
        self._obj[j] += float(value)

    def add_row(self, coefs, sense: str, rhs: float, name: str | None = None) -> int:
        """Add ``sum(coef * x_j) sense rhs``; ``coefs`` maps column -> coefficient."""
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        i = len(self._rhs)
        merged: dict[int, float] = {}
        for j, v in items:
            j = self._index[j] if isinstance(j, str) else int(j)
            merged[j] = merged.get(j, 0.0) + float(v)
        for j, v in merged.items():
            if v != 0.0:
                self._rows_i.append(i)
                self._rows_j.append(j)
                self._rows_v.append(v)
        self._senses.append(_SENSE_ALIASES[sense])
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"r{i}")
        return i

    @property
    def num_vars(self) -> int:
        return len(self._names)

    @property
    def num_rows(self) -> int:
        return len(self._rhs)

    def build(self) -> MilpInstance:
        m, n = len(self._rhs), len(self._names)
        A = sparse.csr_matrix((self._rows_v, (self._rows_i, self._rows_j)), shape=(m, n))
        A.sum_duplicates()
        return MilpInstance(
            A=A,
            senses=np.array(self._senses, dtype="<U1"),
            rhs=np.array(self._rhs, dtype=float),
            c=np.array(self._obj, dtype=float),
            lb=np.array(self._lb, dtype=float),
            ub=np.array(self._ub, dtype=float),
            kinds=np.array(self._kinds, dtype="<U1"),
            var_names=tuple(self._names),
            row_names=tuple(self._row_names),
            offset=self.offset,
        )


def from_arrays(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, A_ge=None, b_ge=None,
                bounds: Sequence | None = None, kinds: Sequence[str] | None = None) -> MilpInstance:
    """Convenience constructor from dense arrays (``bounds`` as ``(lo, hi)`` pairs)."""
    c = np.asarray(c, dtype=float)
    n = c.size
    blocks, senses, rhs = [], [], []
    for mat, vec, sense in ((A_ub, b_ub, LE), (A_ge, b_ge, GE), (A_eq, b_eq, EQ)):
        if mat is None:
            continue
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        blocks.append(mat)
        senses += [sense] * mat.shape[0]
        rhs += list(np.asarray(vec, dtype=float).ravel())
    A = sparse.csr_matrix(np.vstack(blocks)) if blocks else sparse.csr_matrix((0, n))
    if bounds is None:
        lb, ub = np.zeros(n), np.full(n, math.inf)
    else:
        lb = np.array([-math.inf if lo is None else lo for lo, _ in bounds], dtype=float)
        ub = np.array([math.inf if hi is None else hi for _, hi in bounds], dtype=float)
    kinds = np.array(kinds if kinds is not None else [CONTINUOUS] * n, dtype="<U1")
    return MilpInstance(A, np.array(senses, dtype="<U1"), np.array(rhs, dtype=float), c, lb, ub, kinds)
