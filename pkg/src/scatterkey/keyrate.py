"""Decoy-state BB84 secure key rate (GLLP bound, vacuum + weak decoy).

From the measured gains and QBERs of the signal (mu) and decoy (nu) states
the module bounds the single-photon yield Y1 from below, the single-photon
error rate e1 from above, and the single-photon fraction Delta1, then forms
the GLLP rate

    R = max{ q * Q_mu * [ -f * H2(E_mu) + Delta1 * (1 - H2(e1)) ], 0 }.

A batch mode evaluates a whole table of observations against reference
rates; the package ships such a reference table of measured QKD sessions
through 120-grit, 600-grit and clear channels (see ``reference_table_path``).

Reported rates additionally apply a configurable significance floor
(``KeyRateParams.min_margin``): sessions whose privacy-amplification margin
is positive but below the floor are reported as rate 0, matching how
experimental tables mark such sessions as yielding no key.  Set
``min_margin=0`` for the bare formula.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace as dc_replace
from importlib import resources

_DEFAULT_E0 = 0.5


def h2(x: float) -> float:
    """Binary Shannon entropy in bits; h2(0) = h2(1) = 0 by continuity."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"h2 argument must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


@dataclass(frozen=True)
class DecoyObservation:
    """Measured tuple feeding the decoy-state bounds.

    Attributes:
        mu, nu: signal and decoy mean photon numbers (0 < nu < mu).
        q_mu, q_nu: per-pulse gains of the signal and decoy states.
        e_mu, e_nu: QBERs of the signal and decoy states (fractions).
        y0: background (vacuum) yield.
        e0: vacuum error rate; 1/2 for random dark counts.
    """

    mu: float
    nu: float
    q_mu: float
    e_mu: float
    q_nu: float
    e_nu: float
    y0: float
    e0: float = _DEFAULT_E0

    def __post_init__(self):
        if not 0.0 < self.nu < self.mu:
            raise ValueError(f"need 0 < nu < mu, got nu={self.nu}, mu={self.mu}")
        for name in ("q_mu", "q_nu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("e_mu", "e_nu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.y0 < 0:
            raise ValueError(f"y0 must be >= 0, got {self.y0}")
        if not 0.0 <= self.e0 <= 0.5:
            raise ValueError(f"e0 must be in [0, 0.5], got {self.e0}")

    def to_jsonable(self) -> dict:
        return {
            "mu": self.mu,
            "nu": self.nu,
            "Q_mu": self.q_mu,
            "E_mu": self.e_mu,
            "Q_nu": self.q_nu,
            "E_nu": self.e_nu,
            "Y0": self.y0,
            "e0": self.e0,
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "DecoyObservation":
        return cls(
            mu=doc["mu"],
            nu=doc["nu"],
            q_mu=doc["Q_mu"],
            e_mu=doc["E_mu"],
            q_nu=doc["Q_nu"],
            e_nu=doc["E_nu"],
            y0=doc["Y0"],
            e0=doc.get("e0", _DEFAULT_E0),
        )


@dataclass(frozen=True)
class KeyRateParams:
    """Protocol constants of the rate formula.

    Attributes:
        q: protocol/sifting factor (1/2 for symmetric basis choice).
        f: error-correction inefficiency (>= 1).
        min_margin: significance floor on the privacy-amplification margin
            in secret bits per sifted signal pulse; margins below it report
            rate 0.
    """

    q: float = 0.5
    f: float = 1.15
    min_margin: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.f < 1.0:
            raise ValueError(f"f must be >= 1, got {self.f}")
        if self.min_margin < 0.0:
            raise ValueError("min_margin must be >= 0")


@dataclass(frozen=True)
class KeyRateResult:
    """Bounds and rate for one observation.

    ``margin`` is the bracket of the rate formula (secret bits per sifted
    signal pulse) before the q*Q_mu scaling; it is None when Y1 = 0 leaves
    e1 unbounded.  Clamp flags record which bounds were cut to their valid
    range.
    """

    y1_lower: float
    e1_upper: float | None
    delta1: float
    margin: float | None
    rate: float
    y1_clamped: bool = False
    e1_clamped: bool = False
    delta1_clamped: bool = False
    below_margin: bool = False


def _y1_raw(obs: DecoyObservation) -> float:
    mu, nu = obs.mu, obs.nu
    denom = mu * nu - nu * nu
    if denom <= 0:
        raise ValueError("decoy bound requires nu < mu")
    return (mu / denom) * (
        obs.q_nu * math.exp(nu)
        - obs.q_mu * math.exp(mu) * nu * nu / (mu * mu)
        - (mu * mu - nu * nu) / (mu * mu) * obs.y0
    )


def y1_lower(obs: DecoyObservation) -> float:
    """Lower bound on the single-photon yield Y1, clamped at 0."""
    return max(_y1_raw(obs), 0.0)


def e1_upper(obs: DecoyObservation, y1: float) -> float:
    """Upper bound on the single-photon QBER, clamped into [0, 1/2]."""
    if y1 <= 0:
        raise ValueError("e1 bound requires Y1 > 0")
    raw = (obs.e_nu * obs.q_nu * math.exp(obs.nu) - obs.e0 * obs.y0) / (y1 * obs.nu)
    return min(max(raw, 0.0), 0.5)


def delta1(obs: DecoyObservation, y1: float) -> float:
    """Single-photon fraction of the signal gain, clamped into [0, 1]."""
    if obs.q_mu <= 0:
        raise ValueError("delta1 requires Q_mu > 0")
    raw = y1 * obs.mu * math.exp(-obs.mu) / obs.q_mu
    return min(max(raw, 0.0), 1.0)


def gllp_rate(obs: DecoyObservation, params: KeyRateParams = KeyRateParams()) -> KeyRateResult:
    """Secure key rate per pulse with all intermediate bounds reported."""
    raw_y1 = _y1_raw(obs)
    y1 = max(raw_y1, 0.0)
    y1_clamped = raw_y1 < 0.0

    if y1 <= 0.0:
        return KeyRateResult(
            y1_lower=0.0,
            e1_upper=None,
            delta1=0.0,
            margin=None,
            rate=0.0,
            y1_clamped=y1_clamped,
        )

    raw_e1 = (obs.e_nu * obs.q_nu * math.exp(obs.nu) - obs.e0 * obs.y0) / (y1 * obs.nu)
    e1 = min(max(raw_e1, 0.0), 0.5)
    e1_clamped = e1 != raw_e1

    if obs.q_mu <= 0:
        raise ValueError("gllp_rate requires Q_mu > 0")
    raw_d1 = y1 * obs.mu * math.exp(-obs.mu) / obs.q_mu
    d1 = min(max(raw_d1, 0.0), 1.0)
    d1_clamped = d1 != raw_d1

    margin = -params.f * h2(obs.e_mu) + d1 * (1.0 - h2(e1))
    if margin >= params.min_margin:
        rate = params.q * obs.q_mu * margin
        below = False
    else:
        rate = 0.0
        below = True

    return KeyRateResult(
        y1_lower=y1,
        e1_upper=e1,
        delta1=d1,
        margin=margin,
        rate=rate,
        y1_clamped=y1_clamped,
        e1_clamped=e1_clamped,
        delta1_clamped=d1_clamped,
        below_margin=below,
    )


@dataclass(frozen=True)
class BatchRow:
    """One table line: an observation, its label and an optional reference
    rate (None marks sessions recorded as yielding no key)."""

    label: str
    observation: DecoyObservation
    reference_rate: float | None = None

    def with_y0(self, y0: float) -> "BatchRow":
        return BatchRow(self.label, dc_replace(self.observation, y0=y0), self.reference_rate)


@dataclass(frozen=True)
class BatchEntry:
    label: str
    result: KeyRateResult
    reference_rate: float | None
    rel_deviation: float | None
    matches: bool | None = None


@dataclass(frozen=True)
class BatchReport:
    entries: tuple
    tolerance: float | None = None

    @property
    def max_rel_deviation(self) -> float | None:
        devs = [e.rel_deviation for e in self.entries if e.rel_deviation is not None]
        return max(devs) if devs else None

    @property
    def all_within_tolerance(self) -> bool:
        return all(e.matches for e in self.entries if e.matches is not None)

    def to_jsonable(self) -> dict:
        entries = []
        for e in self.entries:
            r = e.result
            entries.append(
                {
                    "label": e.label,
                    "rate": r.rate,
                    "reference_rate": e.reference_rate,
                    "rel_deviation": e.rel_deviation,
                    "matches": e.matches,
                    "y1_lower": r.y1_lower,
                    "e1_upper": r.e1_upper,
                    "delta1": r.delta1,
                    "margin": r.margin,
                    "flags": {
                        "y1_clamped": r.y1_clamped,
                        "e1_clamped": r.e1_clamped,
                        "delta1_clamped": r.delta1_clamped,
                        "below_margin": r.below_margin,
                    },
                }
            )
        return {
            "tolerance": self.tolerance,
            "max_rel_deviation": self.max_rel_deviation,
            "all_within_tolerance": self.all_within_tolerance,
            "entries": entries,
        }


def table_batch(
    rows,
    params: KeyRateParams = KeyRateParams(),
    tolerance: float | None = None,
) -> BatchReport:
    """Evaluate the rate for every row and compare against references.

    For rows with a numeric reference the relative deviation is reported and,
    when a tolerance is given, checked; rows whose reference is None match
    exactly when the computed rate is 0.
    """
    entries = []
    for row in rows:
        result = gllp_rate(row.observation, params)
        if row.reference_rate is None:
            dev = None
            matches = result.rate == 0.0
        else:
            dev = abs(result.rate - row.reference_rate) / row.reference_rate
            matches = dev <= tolerance if tolerance is not None else None
        entries.append(BatchEntry(row.label, result, row.reference_rate, dev, matches))
    return BatchReport(tuple(entries), tolerance)


def format_batch_table(report: BatchReport) -> str:
    """Aligned text rendering of a batch report."""
    head = ["label", "rate", "reference", "deviation", "margin"]
    lines = []
    for e in report.entries:
        ref = "none" if e.reference_rate is None else f"{e.reference_rate:.3e}"
        dev = "-" if e.rel_deviation is None else f"{100 * e.rel_deviation:.2f}%"
        margin = "-" if e.result.margin is None else f"{e.result.margin:.4f}"
        lines.append([e.label, f"{e.result.rate:.3e}", ref, dev, margin])
    widths = [max(len(r[i]) for r in [head] + lines) for i in range(len(head))]
    out = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    for row in lines:
        out.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    if report.max_rel_deviation is not None:
        out.append(f"max relative deviation: {100 * report.max_rel_deviation:.2f}%")
    return "\n".join(out)


class BatchParseError(ValueError):
    """Malformed batch input; carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_BATCH_COLUMNS = ["label", "mu", "nu", "Q_mu", "E_mu", "Q_nu", "E_nu", "Y0", "R_reference"]


def parse_batch_csv(text: str) -> list:
    """Parse batch rows from CSV with columns
    label,mu,nu,Q_mu,E_mu,Q_nu,E_nu,Y0,R_reference (QBERs as fractions;
    R_reference empty or 'none' for no-key sessions)."""
    rows = []
    reader = csv.reader(io.StringIO(text))
    header: list | None = None
    for lineno, record in enumerate(reader, start=1):
        if not record or all(not c.strip() for c in record):
            continue
        if record[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in record]
            if header != _BATCH_COLUMNS:
                raise BatchParseError(lineno, f"expected header {','.join(_BATCH_COLUMNS)}")
            continue
        if len(record) != len(_BATCH_COLUMNS):
            raise BatchParseError(lineno, f"expected {len(_BATCH_COLUMNS)} fields, got {len(record)}")
        try:
            label = record[0].strip()
            mu, nu, q_mu, e_mu, q_nu, e_nu, y0 = (float(v) for v in record[1:8])
            ref_text = record[8].strip().lower()
            ref = None if ref_text in ("", "none") else float(record[8])
            obs = DecoyObservation(mu=mu, nu=nu, q_mu=q_mu, e_mu=e_mu, q_nu=q_nu, e_nu=e_nu, y0=y0)
        except (ValueError, TypeError) as exc:
            raise BatchParseError(lineno, str(exc)) from exc
        rows.append(BatchRow(label, obs, ref))
    if header is None and rows == []:
        return []
    return rows


def parse_batch_json(text: str) -> list:
    """Parse batch rows from a JSON list of objects with the CSV's keys."""
    doc = json.loads(text)
    if not isinstance(doc, list):
        raise ValueError("batch JSON must be a list of row objects")
    rows = []
    for i, item in enumerate(doc):
        try:
            obs = DecoyObservation(
                mu=item["mu"],
                nu=item["nu"],
                q_mu=item["Q_mu"],
                e_mu=item["E_mu"],
                q_nu=item["Q_nu"],
                e_nu=item["E_nu"],
                y0=item["Y0"],
            )
            ref = item.get("R_reference")
            rows.append(BatchRow(str(item.get("label", f"row{i}")), obs, ref))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"row {i}: {exc}") from exc
    return rows


def load_batch_file(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return parse_batch_json(text)
    return parse_batch_csv(text)


def reference_table_path():
    """Path to the bundled reference table of measured decoy-state sessions
    (120-grit / 600-grit / clear channels, with and without wavefront
    optimization, at several attenuator settings)."""
    return resources.files("scatterkey").joinpath("data/reference_sessions.csv")


def load_reference_table() -> list:
    return parse_batch_csv(reference_table_path().read_text(encoding="utf-8"))
