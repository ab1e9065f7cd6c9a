"""Text tables and rater-agreement reports."""
from __future__ import annotations

import csv
import math

import numpy as np

from ..errors import FormatError, UndefinedStatisticError
from ..metrics import icc_2_1, mae_std, weighted_kappa
from ..sampling import PATTERNS

RATER_COLUMNS = ("case", "level", "rater", "session", "tot", "gg", "ret")
CONSENSUS = "consensus"
MODEL = "model"


def _num(v, digits=2):
    if v is None:
        return "-"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.{digits}f}"


def format_table1(level_rows):
    """Level-selection table: MAE (STD) in slices and ICC per level."""
    lines = [f"{'level':<8} {'MAE (STD)':>16} {'ICC':>7} {'mean diff':>10}"]
    for name, rep in level_rows:
        mae = f"{_num(rep.mae)} ({_num(rep.mae_std)})"
        lines.append(f"{name:<8} {mae:>16} {_num(rep.icc, 3):>7} "
                     f"{_num(rep.bland_altman[0]):>10}")
    return "\n".join(lines) + "\n"


def format_table2(table):
    """Score table: one line per method with MAE (STD), WK, ICC per pattern.

    ``table`` is ``[(method, [(pattern, AgreementReport), ...]), ...]``.
    """
    head = f"{'method':<20}"
    for p in PATTERNS:
        head += f" | {p + ' MAE (STD)':>16} {'WK':>6} {'ICC':>6} {'p':>7}"
    lines = [head]
    for method, rows in table:
        line = f"{method:<20}"
        for _, rep in rows:
            mae = f"{_num(rep.mae)} ({_num(rep.mae_std)})"
            line += (f" | {mae:>16} {_num(rep.wk, 3):>6} {_num(rep.icc, 3):>6} "
                     f"{_num(rep.wilcoxon_p, 4):>7}")
        lines.append(line)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# rater agreement

def _read_rater_table(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in RATER_COLUMNS:
            if c not in cols:
                raise FormatError(c, f"column missing from {path}")
        ratings = {}
        for n, row in enumerate(reader, start=2):
            key = (row["rater"].strip(), row["session"].strip())
            case = (row["case"].strip(), row["level"].strip())
            try:
                vals = tuple(float(row[p]) for p in ("tot", "gg", "ret"))
            except ValueError:
                raise FormatError("tot/gg/ret", f"non-numeric score on line {n}") from None
            group = ratings.setdefault(key, {})
            if case in group:
                raise FormatError("case", f"duplicate rating for {case} by {key} on line {n}")
            group[case] = vals
    return ratings


def _agreement(pred, truth, weighting):
    mae, std = mae_std(pred, truth)
    try:
        wk = weighted_kappa(pred, truth, weighting)
    except UndefinedStatisticError:
        wk = math.nan
    try:
        icc = icc_2_1(np.column_stack([pred, truth]))
    except UndefinedStatisticError:
        icc = math.nan
    return mae, std, wk, icc


def rater_agreement(table_path, weighting="linear"):
    """Agreement of every rater session, and of the model, with the consensus.

    The CSV holds one row per (case, level, rater, session).  Rows whose
    rater is ``consensus`` are the reference; rows whose rater is ``model``
    are the method under test.  Grades must lie on the 0-100 step-5 scale.

    Returns
    -------
    list of ``(name, {pattern: (mae, mae_std, wk, icc)})``
        Human rater sessions sorted by rater then session, the model last.
    """
    ratings = _read_rater_table(table_path)
    consensus = {}
    for (rater, _), group in ratings.items():
        if rater == CONSENSUS:
            consensus.update(group)
    if not consensus:
        raise FormatError(CONSENSUS, "no consensus ratings in the table")
    humans = sorted(k for k in ratings if k[0] not in (CONSENSUS, MODEL))
    models = sorted(k for k in ratings if k[0] == MODEL)
    report = []
    for rater, session in humans + models:
        group = ratings[(rater, session)]
        missing = [c for c in group if c not in consensus]
        if missing:
            raise FormatError(CONSENSUS, f"no consensus rating for {missing[0]}")
        cases = sorted(group)
        pred = np.array([group[c] for c in cases])
        truth = np.array([consensus[c] for c in cases])
        name = f"{rater}_{session}" if session else rater
        report.append((name, {p: _agreement(pred[:, j], truth[:, j], weighting)
                              for j, p in enumerate(PATTERNS)}))
    return report


TABLE3_COLUMNS = ("name",) + tuple(f"{p.lower()}_{m}" for p in PATTERNS
                                   for m in ("mae", "mae_std", "wk", "icc"))


def write_table3_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE3_COLUMNS)
        for name, cells in report:
            w.writerow([name] + [repr(float(v)) for p in PATTERNS for v in cells[p]])


def format_table3(report):
    head = f"{'rater':<16}"
    for p in PATTERNS:
        head += f" | {p + ' MAE (STD)':>16} {'WK':>6} {'ICC':>6}"
    lines = [head]
    for name, cells in report:
        line = f"{name:<16}"
        for p in PATTERNS:
            mae, std, wk, icc = cells[p]
            line += f" | {_num(mae) + ' (' + _num(std) + ')':>16} {_num(wk, 3):>6} {_num(icc, 3):>6}"
        lines.append(line)
    return "\n".join(lines) + "\n"
