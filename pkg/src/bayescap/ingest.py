"""Reading and writing long-format signal files, effective sample size, thinning."""

import csv
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ParseError, ValidationError
from .model import TimeSeriesDataset


def _read_rows(path):
    """Header and ``(line number, cells)`` pairs of a CSV file; blank lines skipped."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            rows.append((lineno, row))
    return header, rows


def _floats(path, lineno, cells):
    try:
        return [float(c) for c in cells]
    except ValueError:
        bad = next(c for c in cells if not _is_float(c))
        raise ParseError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load(signals_path, covariates_path, add_intercept=True) -> TimeSeriesDataset:
    """Load ``subject,t,y1..yp`` signals and ``subject,x1..xq`` covariates.

    Subjects keep the order of first appearance in the signals file. With
    ``add_intercept`` a leading column of ones is added to the covariates.
    """
    series = OrderedDict()
    header, rows = _read_rows(signals_path)
    if header[:2] != ["subject", "t"] or len(header) < 3:
        raise ParseError(f"{signals_path}:1: header must be subject,t,y1,...,yp")
    for lineno, row in rows:
        try:
            t = int(row[1])
        except ValueError:
            raise ParseError(f"{signals_path}:{lineno}: time index {row[1]!r} is not an integer") from None
        series.setdefault(row[0], []).append((t, lineno, _floats(signals_path, lineno, row[2:])))

    covs = {}
    header, rows = _read_rows(covariates_path)
    if header[:1] != ["subject"] or len(header) < 2:
        raise ParseError(f"{covariates_path}:1: header must be subject,x1,...,xq")
    for lineno, row in rows:
        if row[0] in covs:
            raise ParseError(f"{covariates_path}:{lineno}: duplicate subject {row[0]!r}")
        covs[row[0]] = _floats(covariates_path, lineno, row[1:])

    Y, X = [], []
    for sid, recs in series.items():
        if sid not in covs:
            raise ParseError(f"{covariates_path}: no covariates for subject {sid!r}")
        recs.sort(key=lambda r: r[0])
        ts = [r[0] for r in recs]
        if ts != list(range(1, len(ts) + 1)):
            raise ParseError(f"{signals_path}:{recs[0][1]}: time index for subject {sid!r} is not contiguous from 1")
        Y.append(np.array([r[2] for r in recs]))
        X.append(covs[sid])
    if not Y:
        raise ParseError(f"{signals_path}: no signal rows")
    X = np.array(X)
    if add_intercept:
        X = np.column_stack([np.ones(len(X)), X])
    return TimeSeriesDataset(tuple(Y), X, tuple(series))


def write(data: TimeSeriesDataset, signals_path, covariates_path):
    """Write a dataset in the format read by :func:`load` (17 significant digits)."""
    fmt = lambda v: format(float(v), ".17g")
    Path(signals_path).parent.mkdir(parents=True, exist_ok=True)
    with open(signals_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "t"] + [f"y{j + 1}" for j in range(data.p)])
        for sid, y in zip(data.subject_ids, data.Y):
            for t, row in enumerate(y, start=1):
                w.writerow([sid, t] + [fmt(v) for v in row])
    with open(covariates_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject"] + [f"x{j + 1}" for j in range(data.q)])
        for sid, x in zip(data.subject_ids, data.X):
            w.writerow([sid] + [fmt(v) for v in x])


def autocorrelation(x, axis=-1):
    """Sample autocorrelation along ``axis`` (biased normalization, via FFT)."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = acov / acov[..., :1]
    return np.moveaxis(rho, -1, axis)


def integrated_autocorrelation_time(y):
    """``1 + 2 * sum_t rho_t``, summing until the first nonpositive autocorrelation."""
    rho = autocorrelation(y)
    nonpos = np.flatnonzero(rho[1:] <= 0)
    stop = nonpos[0] + 1 if nonpos.size else len(rho)
    return 1.0 + 2.0 * float(np.sum(rho[1:stop]))


def effective_sample_size(data: TimeSeriesDataset) -> int:
    """Minimum over subjects and signal coordinates of ``T_i / tau_ij``, floored, at least 1."""
    best = np.inf
    for sid, y in zip(data.subject_ids, data.Y):
        if y.shape[0] < 4:
            raise ValidationError(f"subject {sid}: need at least 4 time points for ESS")
        for j in range(y.shape[1]):
            col = y[:, j]
            if np.ptp(col) == 0:
                raise DegenerateInputError(f"subject {sid}, signal {j + 1}: constant series")
            best = min(best, y.shape[0] / integrated_autocorrelation_time(col))
    return max(1, int(np.floor(best)))


def thin(data: TimeSeriesDataset, target_T: int) -> TimeSeriesDataset:
    """Keep ``target_T`` evenly strided time points per subject, then remove subject means.

    The stride is ``floor(T_i / target_T)`` and the first kept point is the first
    time point.
    """
    target_T = int(target_T)
    if target_T < 2:
        raise ValidationError("target_T must be at least 2")
    if data.n and target_T > int(data.T.min()):
        raise ValidationError(f"target_T={target_T} exceeds the shortest series (T={int(data.T.min())})")
    Y = []
    for y in data.Y:
        stride = y.shape[0] // target_T
        Y.append(y[: stride * target_T : stride])
    return TimeSeriesDataset(tuple(Y), data.X, data.subject_ids).demeaned()
