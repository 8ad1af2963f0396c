"""Reading and writing summary statistics, estimation results and metrics.

Text formats:

* outcome TSV: header with ``snp``, ``beta``, ``se``;
* exposure TSV: ``snp`` then ``beta_<id>`` / ``se_<id>`` pairs, one per covariate;
* correlation CSV: square matrix with a header row and a first column of ids;
* joint JSON: ``pi``, ``sigma_pi``, ``big_pi``, ``sigma_big_pi`` (row-major
  nested lists), ``n_a``, ``n_b``, ``snp_ids``, ``covariate_ids``.

Rows of the exposure file and of the correlation matrices are matched to the
outcome file by SNP id. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ParseError
from .sumstats import JointSummaryStats, MarginalSummaryStats, rescale_df_corrected

JOINT_FIELDS = ("pi", "sigma_pi", "big_pi", "sigma_big_pi", "n_a", "n_b")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _float(path, text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, f"cannot parse {text!r} as a number", line, column) from None
    if not math.isfinite(value):
        raise ParseError(path, f"non-finite value {text!r}", line, column)
    return value


def _read_rows(path, delimiter):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [(i, row) for i, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1)
                    if row and any(cell.strip() for cell in row)]
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    if not rows:
        raise ParseError(path, "file is empty")
    return [(i, [c.strip() for c in row]) for i, row in rows]


def _table(path, required):
    rows = _read_rows(path, "\t")
    header_line, header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(path, f"missing column(s) {', '.join(missing)}", header_line)
    if len(set(header)) != len(header):
        raise ParseError(path, "duplicate column names in header", header_line)
    body = []
    seen = set()
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(path, f"expected {len(header)} fields, got {len(row)}", line)
        rec = dict(zip(header, row))
        snp = rec["snp"]
        if snp in seen:
            raise ParseError(path, f"duplicate SNP id {snp!r}", line, "snp")
        seen.add(snp)
        body.append((line, rec))
    if not body:
        raise ParseError(path, "no data rows")
    return header, body


def read_outcome(path):
    """Return (snp_ids, beta, se) from an outcome TSV."""
    _, body = _table(path, ("snp", "beta", "se"))
    ids = [rec["snp"] for _, rec in body]
    beta = np.array([_float(path, rec["beta"], line, "beta") for line, rec in body])
    se = np.array([_float(path, rec["se"], line, "se") for line, rec in body])
    if np.any(se < 0):
        line = body[int(np.argmax(se < 0))][0]
        raise ParseError(path, "standard errors must be nonnegative", line, "se")
    return ids, beta, se


def read_exposure(path):
    """Return (snp_ids, covariate_ids, beta m x d, se m x d) from an exposure TSV."""
    header, body = _table(path, ("snp",))
    cov_ids = [c[len("beta_"):] for c in header if c.startswith("beta_")]
    if not cov_ids:
        raise ParseError(path, "no beta_<covariate> columns", 1)
    for cid in cov_ids:
        if f"se_{cid}" not in header:
            raise ParseError(path, f"column beta_{cid} has no matching se_{cid}", 1)
    ids = [rec["snp"] for _, rec in body]
    beta = np.array([[_float(path, rec[f"beta_{c}"], line, f"beta_{c}") for c in cov_ids] for line, rec in body])
    se = np.array([[_float(path, rec[f"se_{c}"], line, f"se_{c}") for c in cov_ids] for line, rec in body])
    if np.any(se < 0):
        raise ParseError(path, "standard errors must be nonnegative")
    return ids, cov_ids, beta, se


def read_matrix_csv(path):
    """Return (ids, matrix) from a square CSV with id header row and column."""
    rows = _read_rows(path, ",")
    header_line, header = rows[0]
    ids = header[1:]
    if len(set(ids)) != len(ids):
        raise ParseError(path, "duplicate ids in header", header_line)
    if len(rows) - 1 != len(ids):
        raise ParseError(path, f"matrix has {len(ids)} columns but {len(rows) - 1} rows")
    mat = np.empty((len(ids), len(ids)))
    for r, (line, row) in enumerate(rows[1:]):
        if len(row) != len(ids) + 1:
            raise ParseError(path, f"expected {len(ids) + 1} fields, got {len(row)}", line)
        if row[0] != ids[r]:
            raise ParseError(path, f"row id {row[0]!r} does not match column id {ids[r]!r}", line, header[0] or 0)
        for c, cell in enumerate(row[1:]):
            mat[r, c] = _float(path, cell, line, ids[c])
    return ids, mat


def _reorder(path, ids, target, what):
    if sorted(ids) != sorted(target):
        extra = sorted(set(ids) - set(target))[:3]
        absent = sorted(set(target) - set(ids))[:3]
        raise DimensionMismatchError(
            f"{path}: {what} ids do not match ({len(ids)} vs {len(target)}; "
            f"unexpected {extra}, missing {absent})"
        )
    pos = {s: i for i, s in enumerate(ids)}
    return np.array([pos[s] for s in target], dtype=int)


def read_marginal(outcome, exposure, ld, mx, n_outcome, n_exposure, ld_b=None, df_corrected=False) -> MarginalSummaryStats:
    """Assemble marginal statistics from files, ordered as in the outcome file."""
    snps, eta, se_eta = read_outcome(outcome)
    exp_snps, cov_ids, h, se_h = read_exposure(exposure)
    order = _reorder(exposure, exp_snps, snps, "SNP")
    h, se_h = h[order], se_h[order]

    ld_ids, m_za = read_matrix_csv(ld)
    order = _reorder(ld, ld_ids, snps, "SNP")
    m_za = m_za[np.ix_(order, order)]
    if ld_b is None:
        m_zb = m_za
    else:
        ldb_ids, m_zb = read_matrix_csv(ld_b)
        order = _reorder(ld_b, ldb_ids, snps, "SNP")
        m_zb = m_zb[np.ix_(order, order)]

    mx_ids, m_x = read_matrix_csv(mx)
    order = _reorder(mx, mx_ids, cov_ids, "covariate")
    m_x = m_x[np.ix_(order, order)]

    marg = MarginalSummaryStats(
        eta=eta, sigma_eta_sq=se_eta**2, h=h, sigma_h_sq=se_h**2,
        m_za=m_za, m_zb=m_zb, m_x=m_x, n_a=n_outcome, n_b=n_exposure,
        snp_ids=tuple(snps), covariate_ids=tuple(cov_ids),
    )
    return rescale_df_corrected(marg) if df_corrected else marg


def _write_matrix_csv(path, ids, mat, corner="snp"):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *ids])
        for i, row in zip(ids, mat):
            w.writerow([i, *(fmt(v) for v in row)])


def write_marginal(marg: MarginalSummaryStats, outcome, exposure, ld, mx, ld_b=None):
    with Path(outcome).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["snp", "beta", "se"])
        for s, b, v in zip(marg.snp_ids, marg.eta, marg.sigma_eta_sq):
            w.writerow([s, fmt(b), fmt(math.sqrt(v))])
    with Path(exposure).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        head = ["snp"]
        for c in marg.covariate_ids:
            head += [f"beta_{c}", f"se_{c}"]
        w.writerow(head)
        for s, bs, vs in zip(marg.snp_ids, marg.h, marg.sigma_h_sq):
            row = [s]
            for b, v in zip(bs, vs):
                row += [fmt(b), fmt(math.sqrt(v))]
            w.writerow(row)
    _write_matrix_csv(ld, marg.snp_ids, marg.m_za)
    if ld_b is not None:
        _write_matrix_csv(ld_b, marg.snp_ids, marg.m_zb)
    _write_matrix_csv(mx, marg.covariate_ids, marg.m_x, corner="covariate")


def joint_to_dict(joint: JointSummaryStats) -> dict:
    return {
        "pi": joint.pi.tolist(),
        "sigma_pi": joint.sigma_pi.tolist(),
        "big_pi": joint.big_pi.tolist(),
        "sigma_big_pi": joint.sigma_big_pi.tolist(),
        "n_a": joint.n_a,
        "n_b": joint.n_b,
        "snp_ids": list(joint.snp_ids),
        "covariate_ids": list(joint.covariate_ids),
    }


def write_joint(joint: JointSummaryStats, path):
    dump_json(joint_to_dict(joint), path)


def read_joint(path) -> JointSummaryStats:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError(path, "top-level JSON value must be an object")
    missing = [k for k in JOINT_FIELDS if k not in doc]
    if missing:
        raise ParseError(path, f"missing field(s) {', '.join(missing)}")
    try:
        arrays = {k: np.array(doc[k], dtype=np.float64) for k in JOINT_FIELDS[:4]}
    except (TypeError, ValueError) as exc:
        raise ParseError(path, f"malformed numeric array: {exc}") from None
    return JointSummaryStats(
        **arrays, n_a=doc["n_a"], n_b=doc["n_b"],
        snp_ids=tuple(doc.get("snp_ids", ())), covariate_ids=tuple(doc.get("covariate_ids", ())),
    )


def _clean(value):
    """Replace non-finite floats by None and numpy scalars by Python ones."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def dump_json(doc, path=None):
    text = json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _fit_dict(fit):
    return {
        "indices": fit.support.to_list(),
        "beta": fit.beta.tolist(),
        "q_value": fit.q_value,
        "p_value": fit.p_value,
        "converged": fit.converged,
    }


def ci_to_dict(ci) -> dict:
    return {
        "coordinate": ci.coordinate,
        "lower": ci.lower,
        "upper": ci.upper,
        "level": ci.level,
        "unbounded_lower": ci.unbounded_lower,
        "unbounded_upper": ci.unbounded_upper,
        "empty": ci.empty,
    }


def result_to_dict(result, cis=None, covariate_ids=None) -> dict:
    doc = {
        "method": result.method,
        "estimate": result.estimate.tolist(),
        "phi": bool(result.phi),
        "support": result.support.to_list(),
        "q_value": result.q_value,
        "p_value": result.p_value,
        "accepted_supports": [_fit_dict(f) for _, f in result.accepted_supports],
        "trajectory": result.trajectory,
    }
    if result.lambdas is not None:
        doc["lambdas"] = np.asarray(result.lambdas).tolist()
    if covariate_ids is not None:
        doc["covariate_ids"] = list(covariate_ids)
    if cis is not None:
        doc["confidence_intervals"] = [ci_to_dict(c) for c in cis]
    return doc


def write_metrics_csv(rows, path):
    records = [r.to_record() for r in rows]
    if not records:
        Path(path).write_text("")
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]), lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in rec.items()})
