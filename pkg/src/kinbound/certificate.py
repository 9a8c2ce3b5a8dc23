"""Certificate records and their JSON form.

Heights of the lower bounds are routinely far below the smallest double, so
the logarithms (log_rho_prime, log_C1) are the authoritative fields; the
plain values are informational and may underflow to 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

CERT_FORMAT_VERSION = 1


def _clean(obj):
    """Recursively convert numpy scalars / arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class Certificate:
    kind: str
    dimension: int
    tau: float
    R0: float
    log_rho_prime: float | None = None
    theta_prime: float | None = None
    log_C1: float | None = None
    C2: float | None = None
    K: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "maxwellian":
            if self.theta_prime is None or not self.theta_prime > 0 or self.log_rho_prime is None:
                raise ValueError("maxwellian certificate needs log_rho_prime and theta_prime > 0")
        elif self.kind == "stretched_exp":
            if self.log_C1 is None or self.C2 is None or self.K is None:
                raise ValueError("stretched_exp certificate needs log_C1, C2, K")
            if not (self.C2 > 0 and self.K >= 2):
                raise ValueError("stretched_exp certificate needs C2 > 0 and K >= 2")
        else:
            raise ValueError(f"unknown certificate kind {self.kind!r}")

    @property
    def rho_prime(self):
        return math.exp(self.log_rho_prime) if self.log_rho_prime is not None else None

    @property
    def C1(self):
        return math.exp(self.log_C1) if self.log_C1 is not None else None

    def log_value(self, v):
        """log of the certified lower bound at velocities v (..., N)."""
        v = np.asarray(v, dtype=float)
        s2 = np.sum(v * v, axis=-1)
        if self.kind == "maxwellian":
            th = self.theta_prime
            return self.log_rho_prime - 0.5 * self.dimension * math.log(2 * math.pi * th) - s2 / (2 * th)
        return self.log_C1 - self.C2 * s2 ** (self.K / 2.0)

    def value(self, v):
        return np.exp(self.log_value(v))

    def log_height(self):
        """log of the bound at v = 0."""
        return float(self.log_value(np.zeros(self.dimension)))

    def inflated(self, factor):
        """Copy with the height multiplied by factor."""
        d = self.to_dict()
        key = "log_rho_prime" if self.kind == "maxwellian" else "log_C1"
        d[key] = d[key] + math.log(factor)
        d["provenance"] = dict(d["provenance"], inflated_by=factor)
        return Certificate.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["format_version"] = CERT_FORMAT_VERSION
        if self.kind == "maxwellian":
            d["rho_prime"] = self.rho_prime
        else:
            d["C1"] = self.C1
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ver = d.pop("format_version", CERT_FORMAT_VERSION)
        if ver != CERT_FORMAT_VERSION:
            raise ValueError(f"unsupported certificate format_version {ver}")
        d.pop("rho_prime", None)
        d.pop("C1", None)
        for k in ("log_rho_prime", "theta_prime", "log_C1", "C2", "K", "tau", "R0"):
            if isinstance(d.get(k), str):
                d[k] = float(d[k])
        return cls(**d)

    def to_json(self):
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())
