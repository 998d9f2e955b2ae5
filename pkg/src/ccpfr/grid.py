"""Grid case data, case documents and DC power-flow sensitivities."""

from __future__ import annotations

import hashlib
import io
import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

BALANCE_TOL = 1e-6


class CaseFormatError(ValueError):
    """The case document could not be parsed."""


class CaseValidationError(ValueError):
    """The case document parsed but violates a data invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    load: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    cost_quad: float = 0.0
    cost_lin: float = 0.0
    cost_const: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    gamma: float = 0.0

    def cost(self, p):
        return self.cost_quad * p * p + self.cost_lin * p + self.cost_const


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float


@dataclass(frozen=True)
class WindFarm:
    bus: int
    forecast: float
    stdev: float = 0.0


@dataclass(frozen=True)
class GridCase:
    """Immutable problem instance.

    Bus ids are kept as given in the document; ``bus_index`` maps them onto
    contiguous positions ``0..n-1`` used by every matrix in the package.
    """

    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    wind_farms: tuple[WindFarm, ...]
    slack_bus: int
    name: str = ""
    bus_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "wind_farms", tuple(self.wind_farms))
        object.__setattr__(
            self, "bus_index", {b.id: k for k, b in enumerate(self.buses)}
        )
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_wind(self) -> int:
        return len(self.wind_farms)

    def loads(self) -> np.ndarray:
        return np.array([b.load for b in self.buses], dtype=float)

    def gen_buses(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    def wind_buses(self) -> np.ndarray:
        return np.array([self.bus_index[w.bus] for w in self.wind_farms], dtype=int)

    def forecasts(self) -> np.ndarray:
        return np.array([w.forecast for w in self.wind_farms], dtype=float)

    def gen_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(g, attr) for g in self.generators], dtype=float)

    def line_limits(self) -> np.ndarray:
        return np.array([ln.limit for ln in self.lines], dtype=float)

    def injections(self, p_gen, wind=None) -> np.ndarray:
        """Net bus injections (MW) for generator outputs and wind outputs.

        Both arguments may carry a leading scenario axis.
        """
        p_gen = np.asarray(p_gen, dtype=float)
        wind = self.forecasts() if wind is None else np.asarray(wind, dtype=float)
        lead = np.broadcast_shapes(p_gen.shape[:-1], wind.shape[:-1])
        inj = np.zeros(lead + (self.n_bus,))
        inj -= self.loads()
        np.add.at(inj, (..., self.gen_buses()), np.broadcast_to(p_gen, lead + p_gen.shape[-1:]))
        if self.n_wind:
            np.add.at(inj, (..., self.wind_buses()), np.broadcast_to(wind, lead + wind.shape[-1:]))
        return inj

    def with_slack(self, slack_bus: int) -> "GridCase":
        return replace(self, slack_bus=slack_bus)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "slack_bus": self.slack_bus,
            "buses": [asdict(b) for b in self.buses],
            "generators": [asdict(g) for g in self.generators],
            "lines": [
                {
                    "from": ln.from_bus,
                    "to": ln.to_bus,
                    "susceptance": ln.susceptance,
                    "limit": ln.limit,
                }
                for ln in self.lines
            ],
            "wind_farms": [asdict(w) for w in self.wind_farms],
        }

    def content_hash(self) -> str:
        """SHA-256 of the canonical serialization; modifiers change it."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _validate(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    seen = set()
    for b in case.buses:
        if b.id in seen:
            raise CaseValidationError(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if not np.isfinite(b.load) or b.load < 0:
            raise CaseValidationError(f"bus {b.id}: load must be nonnegative, got {b.load}")
    if not ids:
        raise CaseValidationError("case has no buses")
    if case.slack_bus not in seen:
        raise CaseValidationError(f"slack_bus references nonexistent bus {case.slack_bus}")
    if not case.generators:
        raise CaseValidationError("case has no generators")

    for k, g in enumerate(case.generators):
        tag = f"generator {k} (bus {g.bus})"
        if g.bus not in seen:
            raise CaseValidationError(f"{tag}: references nonexistent bus {g.bus}")
        if not (0 <= g.p_min <= g.p_max):
            raise CaseValidationError(f"{tag}: need 0 <= p_min <= p_max, got [{g.p_min}, {g.p_max}]")
        if g.cost_quad < 0:
            raise CaseValidationError(f"{tag}: cost_quad must be nonnegative")
        for attr in ("alpha1", "alpha2", "gamma"):
            if getattr(g, attr) < 0:
                raise CaseValidationError(f"{tag}: {attr} must be nonnegative")

    for k, ln in enumerate(case.lines):
        tag = f"line {k} ({ln.from_bus}-{ln.to_bus})"
        for end in (ln.from_bus, ln.to_bus):
            if end not in seen:
                raise CaseValidationError(f"{tag}: references nonexistent bus {end}")
        if ln.from_bus == ln.to_bus:
            raise CaseValidationError(f"{tag}: from and to bus coincide")
        if not ln.susceptance > 0:
            raise CaseValidationError(f"{tag}: susceptance must be positive")
        if not ln.limit > 0:
            raise CaseValidationError(f"{tag}: limit must be positive, got {ln.limit}")

    for k, w in enumerate(case.wind_farms):
        tag = f"wind farm {k} (bus {w.bus})"
        if w.bus not in seen:
            raise CaseValidationError(f"{tag}: references nonexistent bus {w.bus}")
        if w.forecast < 0 or w.stdev < 0:
            raise CaseValidationError(f"{tag}: forecast and stdev must be nonnegative")

    unreached = _unreached_buses(case)
    if unreached:
        raise CaseValidationError(
            f"grid graph is disconnected; buses unreachable from slack: {sorted(unreached)[:10]}"
        )


def _unreached_buses(case: GridCase) -> set:
    adj = {b.id: [] for b in case.buses}
    for ln in case.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {case.slack_bus}
    queue = deque([case.slack_bus])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return set(adj) - seen


# --------------------------------------------------------------------------
# case documents

_REQUIRED = ("buses", "generators", "lines", "wind_farms", "slack_bus")


def _record(cls, raw, section: str, k: int, rename=None):
    if not isinstance(raw, dict):
        raise CaseFormatError(f"{section}[{k}]: expected an object")
    data = {(rename or {}).get(key, key): val for key, val in raw.items()}
    names = set(cls.__dataclass_fields__)
    unknown = set(data) - names
    if unknown:
        raise CaseFormatError(f"{section}[{k}]: unknown fields {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise CaseFormatError(f"{section}[{k}]: {exc}") from None


def case_from_dict(doc: dict) -> GridCase:
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be an object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise CaseFormatError(f"case document missing sections: {missing}")
    buses = [_record(Bus, r, "buses", k) for k, r in enumerate(doc["buses"])]
    gens = [_record(Generator, r, "generators", k) for k, r in enumerate(doc["generators"])]
    lines = [
        _record(Line, r, "lines", k, rename={"from": "from_bus", "to": "to_bus"})
        for k, r in enumerate(doc["lines"])
    ]
    farms = [_record(WindFarm, r, "wind_farms", k) for k, r in enumerate(doc["wind_farms"])]
    return GridCase(buses, gens, lines, farms, slack_bus=doc["slack_bus"], name=doc.get("name", ""))


Source = Union[str, Path, bytes, IO]


def load_case(source: Source) -> GridCase:
    """Parse and validate a JSON case document.

    ``source`` may be a path, raw bytes, or a readable (text or binary) stream.
    """
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CaseFormatError(f"case document is not UTF-8: {exc}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"malformed case document: {exc}") from None
    return case_from_dict(doc)


def dump_case(case: GridCase, dest=None) -> str:
    text = json.dumps(case.to_dict(), indent=1) + "\n"
    if dest is not None:
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(text, encoding="utf-8")
        else:
            dest.write(text)
    return text


def builtin_case(name: str) -> GridCase:
    """Load a case shipped with the package (``rts118``, ``two_bus``, ...)."""
    ref = resources.files("ccpfr.data").joinpath(f"{name}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no built-in case named {name!r}")
    return load_case(io.BytesIO(ref.read_bytes()))


def resolve_case(spec: str) -> GridCase:
    """Path to a case document, or ``builtin:<name>``."""
    if spec.startswith("builtin:"):
        return builtin_case(spec.split(":", 1)[1])
    return load_case(spec)


def apply_case_modifiers(case: GridCase, line_derate: float = 0.0, load_scale: float = 1.0) -> GridCase:
    """Scale every line limit by ``1 - line_derate`` and every load by ``load_scale``."""
    if not 0 <= line_derate < 1:
        raise ValueError(f"line_derate must lie in [0, 1), got {line_derate}")
    if not load_scale > 0:
        raise ValueError(f"load_scale must be positive, got {load_scale}")
    if line_derate == 0 and load_scale == 1:
        return case
    keep = 1.0 - line_derate
    return replace(
        case,
        buses=tuple(replace(b, load=b.load * load_scale) for b in case.buses),
        lines=tuple(replace(ln, limit=ln.limit * keep) for ln in case.lines),
    )


# --------------------------------------------------------------------------
# DC sensitivities


@dataclass(frozen=True)
class PTDFMatrix:
    entries: np.ndarray  # (n_line, n_bus)
    slack_bus: int

    def __post_init__(self):
        self.entries.setflags(write=False)

    def at_buses(self, bus_positions: Sequence[int]) -> np.ndarray:
        return self.entries[:, np.asarray(bus_positions, dtype=int)]


class SingularNetworkError(np.linalg.LinAlgError):
    pass


def incidence(case: GridCase) -> np.ndarray:
    """Line x bus incidence with +1 at ``from`` and -1 at ``to``."""
    c = np.zeros((case.n_line, case.n_bus))
    for k, ln in enumerate(case.lines):
        c[k, case.bus_index[ln.from_bus]] = 1.0
        c[k, case.bus_index[ln.to_bus]] = -1.0
    return c


def build_ptdf(case: GridCase, slack_bus: int | None = None) -> PTDFMatrix:
    """Dense PTDF: flow on each line (positive ``from`` -> ``to``) per MW
    injected at each bus and withdrawn at the slack."""
    slack = case.slack_bus if slack_bus is None else slack_bus
    if slack not in case.bus_index:
        raise CaseValidationError(f"slack bus {slack} does not exist")
    cf = incidence(case)
    b = np.array([ln.susceptance for ln in case.lines])
    bf = b[:, None] * cf
    bbus = cf.T @ bf
    s = case.bus_index[slack]
    keep = np.array([k for k in range(case.n_bus) if k != s], dtype=int)
    ptdf = np.zeros((case.n_line, case.n_bus))
    if keep.size:
        reduced = bbus[np.ix_(keep, keep)]
        try:
            # Cholesky fails loudly on a singular (disconnected) reduced matrix
            factor = np.linalg.cholesky(reduced)
        except np.linalg.LinAlgError:
            raise SingularNetworkError("reduced susceptance matrix is singular; check topology") from None
        rhs = bf[:, keep].T
        y = np.linalg.solve(factor, rhs)
        ptdf[:, keep] = np.linalg.solve(factor.T, y).T
    return PTDFMatrix(ptdf, slack)


def dc_flows(ptdf: PTDFMatrix, injections, tol: float = BALANCE_TOL) -> np.ndarray:
    """Line flows for balanced injections; accepts a leading scenario axis."""
    inj = np.asarray(injections, dtype=float)
    imbalance = np.abs(inj.sum(axis=-1))
    if np.any(imbalance > tol):
        raise ValueError(f"injections are not balanced (max imbalance {imbalance.max():.3g} MW)")
    return inj @ ptdf.entries.T

