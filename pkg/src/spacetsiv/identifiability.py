"""Rank diagnostics for sparse identifiability of the causal parents.

Two conditions on the reduced-form matrix ``Pi`` and a candidate parent set
``pa`` are checked numerically:

* ``check_assumption_a``: the columns of ``Pi`` indexed by ``pa`` are
  linearly independent.
* ``check_assumption_c``: no other support of the same size spans the same
  column space.

The remaining condition quantifies over every support and every coefficient
vector and is not reducible to finitely many rank checks, so it is reported as
not checked. Applied to an estimate of ``Pi`` rather than the true matrix the
checks are heuristics only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_TOL = 1e-9
ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True)
class IdentifiabilityReport:
    rank_ok: bool
    uniqueness_ok: bool | None  # None: enumeration cap exceeded
    checked_subsets: int
    tolerance: float
    assumption_b: str = "not checked"
    note: str = ""

    def to_dict(self):
        out = asdict(self)
        out["uniqueness_ok"] = "indeterminate" if self.uniqueness_ok is None else self.uniqueness_ok
        return out


def numerical_rank(mat, tol=DEFAULT_TOL):
    """Number of singular values above ``tol`` times the largest one."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def _columns(big_pi, idx):
    return np.asarray(big_pi, dtype=np.float64)[:, list(idx)]


def check_assumption_a(big_pi, pa, tol=DEFAULT_TOL) -> bool:
    """True when ``Pi[:, pa]`` has full column rank."""
    pa = sorted(int(i) for i in pa)
    m, d = np.shape(big_pi)
    if len(pa) > min(m, d):
        raise ValueError(f"|pa| = {len(pa)} exceeds min(m, d) = {min(m, d)}")
    return numerical_rank(_columns(big_pi, pa), tol) == len(pa)


def _same_image(big_pi, s, pa, rank_pa, tol):
    both = numerical_rank(_columns(big_pi, list(s) + list(pa)), tol)
    return both == rank_pa and numerical_rank(_columns(big_pi, s), tol) == rank_pa


def _check_c(big_pi, pa, tol):
    pa = sorted(int(i) for i in pa)
    d = np.shape(big_pi)[1]
    if math.comb(d, len(pa)) > ENUMERATION_CAP:
        return None, 0
    rank_pa = numerical_rank(_columns(big_pi, pa), tol)
    checked = 0
    for s in itertools.combinations(range(d), len(pa)):
        if list(s) == pa:
            continue
        checked += 1
        if _same_image(big_pi, s, pa, rank_pa, tol):
            return False, checked
    return True, checked


def check_assumption_c(big_pi, pa, tol=DEFAULT_TOL) -> bool | None:
    """True when every other support of size ``|pa|`` spans a different image.

    Returns None (indeterminate) if more than ``ENUMERATION_CAP`` supports
    would have to be enumerated.
    """
    return _check_c(big_pi, pa, tol)[0]


def diagnose(big_pi, pa, tol=DEFAULT_TOL, estimated=False) -> IdentifiabilityReport:
    uniqueness, checked = _check_c(big_pi, pa, tol)
    note = "computed from an estimate of Pi; heuristic only" if estimated else ""
    return IdentifiabilityReport(
        rank_ok=check_assumption_a(big_pi, pa, tol),
        uniqueness_ok=uniqueness,
        checked_subsets=checked,
        tolerance=tol,
        note=note,
    )
