"""Run configuration: defaults per dimension, flat key=value files, validation."""

import dataclasses
from dataclasses import dataclass

from .analysis import fl_window, predicted_dimension
from .errors import ScaleUnresolvable
from .sampler import check_gamma

# (grid_log2, levels, replicas) per dimension; d = 3 runs are trend-only
DEFAULTS = {1: (12, 9, 64), 2: (9, 6, 32), 3: (6, 3, 16)}
TOLERANCE = {1: 0.2, 2: 0.25}


@dataclass
class RunConfig:
    d: int = 1
    gamma: float = 0.5
    grid_log2: int | None = None
    levels: int | None = None
    replicas: int | None = None
    seed: int = 0
    tau: float | None = None
    p: float | None = None
    q: float | None = None
    shells: tuple | None = None
    mode: str = "sup"
    out: str | None = None
    spectrum_csv: bool = False
    dump_fields: bool = False

    def resolved(self):
        """Copy with dimension defaults filled in and the (tau, p, q) window chosen."""
        g, m, n = DEFAULTS.get(self.d, DEFAULTS[3])
        c = dataclasses.replace(
            self,
            grid_log2=g if self.grid_log2 is None else self.grid_log2,
            levels=m if self.levels is None else self.levels,
            replicas=n if self.replicas is None else self.replicas,
        )
        check_gamma(c.gamma, c.d)
        if c.tau is None:
            c.tau = round(predicted_dimension(c.gamma, c.d) / 2, 6)
        win = fl_window(c.gamma, c.d, c.tau)
        if c.p is None:
            c.p = win["p"]
        if c.q is None:
            if win["q"] is None:
                raise ValueError(f"tau={c.tau} leaves no admissible q (needs tau < {win['tau_max']:.4f})")
            c.q = win["q"]
        c.validate()
        return c

    def validate(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        check_gamma(self.gamma, self.d)
        if self.grid_log2 < 3:
            raise ValueError(f"grid_log2 must be >= 3, got {self.grid_log2}")
        if self.levels < 0:
            raise ValueError(f"levels must be >= 0, got {self.levels}")
        if self.levels > self.grid_log2 - 3:
            raise ScaleUnresolvable(self.levels, 2**self.grid_log2)
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if self.mode not in ("sup", "mean"):
            raise ValueError(f"mode must be sup or mean, got {self.mode!r}")
        if self.q is not None and self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")

    @property
    def M(self):
        return 2**self.grid_log2

    @property
    def trend_only(self):
        return self.d >= 3

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["shells"] = list(self.shells) if self.shells is not None else None
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("shells") is not None:
            data["shells"] = tuple(data["shells"])
        return cls(**data)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_shells(text):
    """``"lo:hi"`` or ``"lo,hi"`` to a tuple of ints."""
    parts = text.replace(",", ":").split(":")
    if len(parts) != 2:
        raise ValueError(f"shell range must look like lo:hi, got {text!r}")
    lo, hi = (int(x) for x in parts)
    return (lo, hi)


def _coerce(key, value):
    if key == "shells":
        return parse_shells(value)
    if key in ("spectrum_csv", "dump_fields"):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key in ("d", "grid_log2", "levels", "replicas", "seed"):
        return int(value)
    if key in ("gamma", "tau", "p", "q"):
        return float(value)
    return value.strip()


def read_config_file(path):
    """Parse a flat ``key = value`` file (``#`` comments, dashes or underscores in keys)."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "dim":
                key = "d"
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value)
    return values


def merge(file_values, flag_values):
    """Flags override file values; ``None`` flags are treated as unset."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return RunConfig(**merged)


def fourier_tolerance(d):
    return TOLERANCE.get(d)
