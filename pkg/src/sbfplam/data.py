"""CSV ingestion into :class:`~sbfplam.plam.Dataset`."""

import csv
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstantColumnError
from .plam import Dataset

_OPS = {
    "==": operator.eq, "!=": operator.ne, "<=": operator.le,
    ">=": operator.ge, "<": operator.lt, ">": operator.gt,
}
_RULE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(==|!=|<=|>=|<|>)\s*(\S+)\s*$")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IngestSchema:
    response: str
    parametric: tuple
    nonparametric: tuple
    log_transform: tuple = ()
    drop_rule: str = None

    def __post_init__(self):
        for name in ("parametric", "nonparametric", "log_transform"):
            object.__setattr__(self, name, tuple(getattr(self, name) or ()))
        if set(self.parametric) & set(self.nonparametric):
            raise IngestError("parametric and nonparametric columns overlap")
        if self.response in self.parametric or self.response in self.nonparametric:
            raise IngestError("response listed among the covariates")
        if not self.nonparametric:
            raise IngestError("need at least one nonparametric column")
        if not self.parametric:
            raise IngestError("need at least one parametric column")
        if self.drop_rule:
            parse_rule(self.drop_rule)

    @property
    def columns(self):
        return (self.response,) + self.parametric + self.nonparametric


def parse_rule(rule):
    """Parse ``"COLUMN OP VALUE"`` into ``(column, op, value)``."""
    m = _RULE.match(rule)
    if not m:
        raise IngestError(f"cannot parse drop rule {rule!r}; expected e.g. 'MEDV == 50'")
    col, op, value = m.groups()
    try:
        return col, _OPS[op], float(value)
    except ValueError:
        raise IngestError(f"drop rule value {value!r} is not numeric") from None


BOSTON_SCHEMA = IngestSchema(
    response="MEDV",
    parametric=("LSTAT", "CHAS"),
    nonparametric=("CRIM", "RM", "NOX", "PTRATIO", "DIS", "TAX"),
    log_transform=("LSTAT", "DIS", "TAX"),
    drop_rule="MEDV == 50",
)


def read_columns(csv_path, names):
    path = Path(csv_path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().strip('"') for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        missing = [c for c in names if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, i in zip(names, idx):
                cell = row[i].strip() if i < len(row) else ""
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestError(
                        f"{path}: non-numeric value {cell!r} in column {c}, line {lineno}"
                    ) from None
            rows.append(vals)
    return np.asarray(rows, dtype=float).reshape(-1, len(names))


def load_dataset(csv_path, schema):
    """Read a CSV and build a Dataset.

    Applies the drop rule, then log transforms, then min-max rescales each
    nonparametric column to [0, 1] (recording ``(min, max)``).  Parametric
    columns keep their scale.
    """
    names = list(dict.fromkeys(schema.columns))
    extra = []
    if schema.drop_rule:
        col = parse_rule(schema.drop_rule)[0]
        if col not in names:
            extra.append(col)
    table = read_columns(csv_path, names + extra)
    cols = {c: table[:, i] for i, c in enumerate(names + extra)}
    if schema.drop_rule:
        col, op, value = parse_rule(schema.drop_rule)
        keep = ~op(cols[col], value)
        cols = {c: v[keep] for c, v in cols.items()}
    n = cols[schema.response].size
    if n == 0:
        raise IngestError("no rows left after applying the drop rule")
    for c in schema.log_transform:
        if np.any(cols[c] <= 0):
            raise IngestError(f"cannot take logarithm of non-positive values in {c}")
        cols[c] = np.log(cols[c])
    records = {}
    zcols = []
    for c in schema.nonparametric:
        lo, hi = float(cols[c].min()), float(cols[c].max())
        if not hi > lo:
            raise ConstantColumnError(f"column {c} is constant; cannot rescale to [0, 1]")
        z = (cols[c] - lo) / (hi - lo)
        zcols.append(np.clip(z, 0.0, 1.0))
        records[c] = (lo, hi)
    x = np.column_stack([cols[c] for c in schema.parametric])
    return Dataset(cols[schema.response], x, np.column_stack(zcols),
                   schema.response, list(schema.parametric),
                   list(schema.nonparametric), records)


def to_original_scale(dataset, j, z):
    """Map grid values of nonparametric column ``j`` back to its (possibly logged) scale."""
    lo, hi = dataset.rescale_records[dataset.z_names[j]]
    return lo + np.asarray(z) * (hi - lo)
