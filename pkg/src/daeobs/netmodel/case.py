"""Network case data model and readers.

A case describes the static grid: buses with loads and shunts, branches,
generators with their two-axis machine constants, optional renewable
injections, and the MVA base. Two input formats are supported:

* a minimal reader for the MATPOWER-style ``.m`` case tables (``baseMVA``,
  ``bus``, ``gen``, ``branch``), enough for the bundled 9-bus system, with
  machine constants supplied from a JSON side file keyed by generator bus id;
* a native JSON schema carrying the same information plus machine constants
  and renewable injections inline (quantities already in per unit).

All quantities are stored in per unit on the system base; angles in radians.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources

OMEGA_S = 2.0 * 3.141592653589793 * 60.0  # synchronous speed, rad/s


class CaseError(ValueError):
    """Malformed or inconsistent case data."""


@dataclass(frozen=True)
class GeneratorParams:
    """Two-axis transient machine constants (per unit on the system base)."""

    M: float      # rotor inertia, pu*s^2 (= 2H/omega_s)
    D: float      # damping, pu*s (multiplies the speed deviation in rad/s)
    xd: float
    xdp: float
    xq: float
    xqp: float
    Td0: float    # d-axis open-circuit transient time constant, s
    Tq0: float    # q-axis open-circuit transient time constant, s

    def validate(self) -> None:
        if not (self.M > 0 and self.Td0 > 0 and self.Tq0 > 0):
            raise CaseError("machine constants M, Td0, Tq0 must be positive")
        if not (self.xd >= self.xdp > 0):
            raise CaseError("machine reactances must satisfy xd >= xdp > 0")
        if not (self.xq >= self.xqp > 0):
            raise CaseError("machine reactances must satisfy xq >= xqp > 0")

    @staticmethod
    def from_hd(H: float, D_pu: float, **kw) -> "GeneratorParams":
        """Build from inertia H (s) and damping in pu power per pu speed."""
        return GeneratorParams(M=2.0 * H / OMEGA_S, D=D_pu / OMEGA_S, **kw)


@dataclass(frozen=True)
class Bus:
    id: int
    btype: str            # "slack" | "PV" | "PQ"
    pl: float = 0.0       # load, pu
    ql: float = 0.0
    gs: float = 0.0       # shunt admittance, pu at v = 1
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0        # total line charging susceptance, pu
    status: int = 1


@dataclass(frozen=True)
class Generator:
    bus: int
    vset: float
    pg: float = 0.0       # dispatched active power, pu
    machine: GeneratorParams | None = None


@dataclass(frozen=True)
class Renewable:
    bus: int
    pr: float = 0.0       # injected active power, pu
    qr: float = 0.0


@dataclass(frozen=True)
class NetworkCase:
    """Static grid description; construct via a reader or directly in tests."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    renewables: tuple[Renewable, ...] = field(default_factory=tuple)
    name: str = "case"

    def __post_init__(self):
        self.validate()

    # -- index helpers ----------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._bus_pos[bus_id]
        except KeyError:
            raise CaseError(f"unknown bus id {bus_id}") from None

    @property
    def _bus_pos(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def gen_bus_idx(self) -> tuple[int, ...]:
        return tuple(self.bus_index(g.bus) for g in self.generators)

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        slack = [b for b in self.buses if b.btype == "slack"]
        if len(slack) != 1:
            raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
        for b in self.buses:
            if b.btype not in ("slack", "PV", "PQ"):
                raise CaseError(f"bus {b.id}: unknown type {b.btype!r}")
        pos = self._bus_pos
        for br in self.branches:
            if br.from_bus not in pos or br.to_bus not in pos:
                raise CaseError(
                    f"branch {br.from_bus}-{br.to_bus} references an unknown bus"
                )
            if br.status and abs(complex(br.r, br.x)) == 0.0:
                raise CaseError(
                    f"branch {br.from_bus}-{br.to_bus}: zero series impedance"
                )
        for g in self.generators:
            if g.bus not in pos:
                raise CaseError(f"generator references unknown bus {g.bus}")
            if g.machine is not None:
                g.machine.validate()
        for r in self.renewables:
            if r.bus not in pos:
                raise CaseError(f"renewable references unknown bus {r.bus}")

    # -- convenience ------------------------------------------------------
    def branch_between(self, a: int, b: int) -> int:
        """Index of the (single) branch between bus ids a and b."""
        for i, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {a, b}:
                return i
        raise CaseError(f"no branch between buses {a} and {b}")

    def with_branch_status(self, idx: int, status: int) -> "NetworkCase":
        branches = list(self.branches)
        branches[idx] = replace(branches[idx], status=status)
        return replace(self, branches=tuple(branches))

    def with_renewables(self, renewables) -> "NetworkCase":
        return replace(self, renewables=tuple(renewables))

    def load_vector(self):
        """(pl, ql) arrays in bus order."""
        import numpy as np

        return (np.array([b.pl for b in self.buses]),
                np.array([b.ql for b in self.buses]))

    def renewable_vector(self):
        import numpy as np

        pr = np.zeros(self.n_bus)
        qr = np.zeros(self.n_bus)
        for r in self.renewables:
            i = self.bus_index(r.bus)
            pr[i] += r.pr
            qr[i] += r.qr
        return pr, qr


# ---------------------------------------------------------------------------
# MATPOWER-style .m reader (subset: baseMVA, bus, gen, branch matrices)
# ---------------------------------------------------------------------------

_BUS_TYPES = {1: "PQ", 2: "PV", 3: "slack"}


def _parse_matrix(text: str, name: str, line_of: dict[int, int]) -> list[list[float]]:
    m = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.DOTALL)
    if m is None:
        raise CaseError(f"missing mpc.{name} table")
    body = m.group(1)
    start_line = text[: m.start(1)].count("\n") + 1
    rows: list[list[float]] = []
    for off, raw in enumerate(body.split("\n")):
        line = raw.split("%")[0].strip().rstrip(";").strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError:
            raise CaseError(
                f"line {start_line + off}: malformed {name} record: {raw.strip()!r}"
            ) from None
        line_of[len(rows) - 1] = start_line + off
    return rows


def parse_case(text: str, machines: dict[int, GeneratorParams] | None = None,
               name: str = "case") -> NetworkCase:
    """Parse MATPOWER-style case text into a NetworkCase.

    ``machines`` maps generator bus id to machine constants; generators
    without an entry are left with ``machine=None`` (power flow still works,
    the dynamic model assembly will refuse them).
    """
    lines: dict[int, int] = {}
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text)
    if m is None:
        raise CaseError("missing mpc.baseMVA")
    base = float(m.group(1))
    if base <= 0:
        raise CaseError("baseMVA must be positive")

    bus_rows = _parse_matrix(text, "bus", lines)
    gen_rows = _parse_matrix(text, "gen", {})
    br_rows = _parse_matrix(text, "branch", {})

    buses = []
    for row in bus_rows:
        if len(row) < 9:
            raise CaseError(f"bus record too short: {row}")
        btype = _BUS_TYPES.get(int(row[1]))
        if btype is None:
            raise CaseError(f"bus {int(row[0])}: unknown bus type code {int(row[1])}")
        buses.append(Bus(id=int(row[0]), btype=btype,
                         pl=row[2] / base, ql=row[3] / base,
                         gs=row[4] / base, bs=row[5] / base))
    gens = []
    for row in gen_rows:
        if len(row) < 8:
            raise CaseError(f"gen record too short: {row}")
        if int(row[7]) == 0:
            continue
        bus_id = int(row[0])
        gens.append(Generator(bus=bus_id, vset=row[5], pg=row[1] / base,
                              machine=(machines or {}).get(bus_id)))
    branches = []
    for row in br_rows:
        if len(row) < 11:
            raise CaseError(f"branch record too short: {row}")
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]),
                               r=row[2], x=row[3], b=row[4],
                               status=int(row[10])))
    return NetworkCase(base_mva=base, buses=tuple(buses),
                       branches=tuple(branches), generators=tuple(gens),
                       name=name)


# ---------------------------------------------------------------------------
# Native JSON schema (all quantities in pu; machine constants inline)
# ---------------------------------------------------------------------------

def parse_case_json(text: str, name: str = "case") -> NetworkCase:
    """Parse the native JSON case schema (see README for the field list)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"invalid case JSON: {exc}") from exc
    try:
        buses = tuple(Bus(id=int(b["id"]), btype=b["type"],
                          pl=b.get("pl", 0.0), ql=b.get("ql", 0.0),
                          gs=b.get("gs", 0.0), bs=b.get("bs", 0.0))
                      for b in doc["buses"])
        branches = tuple(Branch(from_bus=int(b["from"]), to_bus=int(b["to"]),
                                r=b["r"], x=b["x"], b=b.get("b", 0.0),
                                status=int(b.get("status", 1)))
                         for b in doc["branches"])
        gens = []
        for g in doc["generators"]:
            mach = g.get("machine")
            params = None
            if mach is not None:
                if "H" in mach:
                    mach = dict(mach)
                    H, D = mach.pop("H"), mach.pop("D")
                    params = GeneratorParams.from_hd(H, D, **mach)
                else:
                    params = GeneratorParams(**mach)
            gens.append(Generator(bus=int(g["bus"]), vset=g["vset"],
                                  pg=g.get("pg", 0.0), machine=params))
        renewables = tuple(Renewable(bus=int(r["bus"]), pr=r.get("pr", 0.0),
                                     qr=r.get("qr", 0.0))
                           for r in doc.get("renewables", ()))
    except (KeyError, TypeError) as exc:
        raise CaseError(f"case JSON missing field: {exc}") from exc
    return NetworkCase(base_mva=doc.get("base_mva", 100.0), buses=buses,
                       branches=branches, generators=tuple(gens),
                       renewables=renewables, name=name)


def case_to_json(case: NetworkCase) -> str:
    """Serialize to the native JSON schema (round-trips parse_case_json)."""
    doc = {
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "type": b.btype, "pl": b.pl, "ql": b.ql,
                   "gs": b.gs, "bs": b.bs} for b in case.buses],
        "branches": [{"from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x,
                      "b": b.b, "status": b.status} for b in case.branches],
        "generators": [
            {"bus": g.bus, "vset": g.vset, "pg": g.pg,
             "machine": None if g.machine is None else {
                 "M": g.machine.M, "D": g.machine.D,
                 "xd": g.machine.xd, "xdp": g.machine.xdp,
                 "xq": g.machine.xq, "xqp": g.machine.xqp,
                 "Td0": g.machine.Td0, "Tq0": g.machine.Tq0}}
            for g in case.generators],
        "renewables": [{"bus": r.bus, "pr": r.pr, "qr": r.qr}
                       for r in case.renewables],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_machines_json(text: str) -> dict[int, GeneratorParams]:
    doc = json.loads(text)
    out = {}
    for bus_id, mach in doc["machines"].items():
        mach = dict(mach)
        H, D = mach.pop("H"), mach.pop("D")
        out[int(bus_id)] = GeneratorParams.from_hd(H, D, **mach)
    return out


def load_case9() -> NetworkCase:
    """The bundled 9-bus, 3-machine case with machine constants attached."""
    pkg = resources.files("daeobs.netmodel") / "data"
    machines = load_machines_json((pkg / "case9_machines.json").read_text())
    return parse_case((pkg / "case9.m").read_text(), machines, name="case9")


def load_case(ref: str) -> NetworkCase:
    """Load a case by name ("case9") or by .m/.json file path."""
    if ref == "case9":
        return load_case9()
    from pathlib import Path

    path = Path(ref)
    text = path.read_text()
    if path.suffix == ".json":
        return parse_case_json(text, name=path.stem)
    machines = {}
    side = path.with_name(path.stem + "_machines.json")
    if side.exists():
        machines = load_machines_json(side.read_text())
    return parse_case(text, machines, name=path.stem)
