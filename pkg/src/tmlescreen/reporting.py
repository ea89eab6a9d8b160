"""Result-table serialization shared by the CLI and tests.

``report.tsv`` carries 6 significant digits for reading; ``full.tsv``
carries 17 so that downstream re-ranking and regression tests are
bit-exact. Both are sorted by rank.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import SchemaMismatch
from .moderation import ZERO_VARIANCE_FLAG, bh_adjust

REPORT_COLUMNS = (
    "biomarker_id", "ate", "se_ic", "se_moderated", "t_moderated",
    "p_raw", "p_adj", "wald_p", "ci_lo", "ci_hi", "rank", "flags",
)
SIGNIFICANT_FLAG = "sig"
NO_FLAGS = "."


def build_rows(result, fdr_q: float) -> list[dict]:
    """One dict per biomarker, sorted by rank."""
    mod = result.moderated
    n = result.obs.n
    rows = []
    for i, bid in enumerate(mod.biomarker_ids):
        tokens = []
        if mod.p_adj[i] <= fdr_q:
            tokens.append(SIGNIFICANT_FLAG)
        if mod.flags[i]:
            tokens.append(mod.flags[i])
        rows.append({
            "biomarker_id": bid,
            "ate": mod.psi[i],
            "se_ic": mod.sigma[i] / math.sqrt(n),
            "se_moderated": mod.se_moderated[i],
            "t_moderated": mod.t_tilde[i],
            "p_raw": mod.p_raw[i],
            "p_adj": mod.p_adj[i],
            "wald_p": mod.wald_p[i],
            "ci_lo": mod.wald_ci_lo[i],
            "ci_hi": mod.wald_ci_hi[i],
            "rank": int(mod.rank[i]),
            "flags": ";".join(tokens) if tokens else NO_FLAGS,
        })
    rows.sort(key=lambda row: row["rank"])
    return rows


def _format(value, digits: int) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), f".{digits}g")


def write_report(rows: list[dict], path, digits: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(_format(row[col], digits) for col in REPORT_COLUMNS) + "\n")


def read_full(path) -> list[dict]:
    """Parse a full-precision result table back into row dicts."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header is None or tuple(header) != REPORT_COLUMNS:
                raise SchemaMismatch(f"{path}: expected columns {REPORT_COLUMNS}, got {header}")
            rows = []
            for line_no, record in enumerate(reader, start=2):
                if len(record) != len(REPORT_COLUMNS):
                    raise SchemaMismatch(f"{path}: row {line_no} has {len(record)} fields")
                row = dict(zip(REPORT_COLUMNS, record))
                try:
                    for col in REPORT_COLUMNS:
                        if col in ("biomarker_id", "flags"):
                            continue
                        row[col] = int(row[col]) if col == "rank" else float(row[col])
                except ValueError as exc:
                    raise SchemaMismatch(f"{path}: row {line_no}: {exc}") from exc
                rows.append(row)
    except OSError as exc:
        raise SchemaMismatch(f"{path}: cannot read ({exc})") from exc
    if not rows:
        raise SchemaMismatch(f"{path}: no result rows")
    return rows


def rethreshold(rows: list[dict], fdr_q: float) -> list[dict]:
    """Recompute adjusted p-values, ranks, and flags from stored raw p."""
    p_raw = np.array([row["p_raw"] for row in rows])
    p_adj = bh_adjust(p_raw)
    order = sorted(range(len(rows)),
                   key=lambda i: (p_adj[i], p_raw[i], rows[i]["biomarker_id"]))
    out = []
    for position, i in enumerate(order, start=1):
        row = dict(rows[i])
        row["p_adj"] = float(p_adj[i])
        row["rank"] = position
        tokens = []
        if p_adj[i] <= fdr_q:
            tokens.append(SIGNIFICANT_FLAG)
        if ZERO_VARIANCE_FLAG in row["flags"]:
            tokens.append(ZERO_VARIANCE_FLAG)
        row["flags"] = ";".join(tokens) if tokens else NO_FLAGS
        out.append(row)
    return out


def write_topk_matrix(result, path, top_k: int) -> None:
    """Top-k influence-matrix rows for heatmap rendering.

    Subjects are ordered by exposure then id; the second header line
    carries the exposure indicator for plot annotation.
    """
    obs = result.obs
    mod = result.moderated
    order = sorted(range(obs.n), key=lambda i: (obs.a.values[i], obs.subject_ids[i]))
    by_rank = np.argsort(mod.rank, kind="stable")[: max(top_k, 0)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("biomarker_id\t" + "\t".join(obs.subject_ids[i] for i in order) + "\n")
        fh.write("exposure\t" + "\t".join(str(int(obs.a.values[i])) for i in order) + "\n")
        for b in by_rank:
            cells = "\t".join(format(x, ".6g") for x in result.ic_matrix.values[b][order])
            fh.write(f"{mod.biomarker_ids[b]}\t{cells}\n")


def write_hyperparams(result, path) -> None:
    mod = result.moderated
    d_b = result.ic_matrix.n - (1 if mod.mode != "two-group" else 2)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"mode\t{mod.mode}\n")
        if mod.hyperparameters is None:
            fh.write("d0\tnan\ns0_sq\tnan\n")
            fh.write(f"d_b\t{d_b}\nwt_b\t1\n")
        else:
            hp = mod.hyperparameters
            fh.write(f"d0\t{hp.d0:.17g}\n")
            fh.write(f"s0_sq\t{hp.s0_sq:.17g}\n")
            fh.write(f"d_b\t{d_b}\n")
            fh.write(f"wt_b\t{d_b / (hp.d0 + d_b):.17g}\n")
