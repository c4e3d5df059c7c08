"""Stacked semi-explicit DAE model of the multi-machine network.

State ordering: x = [delta, omega, Eqp, Edp | P_G, Q_G, v, theta] with the
machine blocks in generator order and v/theta over all buses. The model is

    Z xdot = A x + F f(x) + B_u u + B_q q + H omega_s

with Z = blkdiag(I_{nd}, 0), A/F block diagonal over the dynamic and
algebraic partitions, u = [T_M; E_fd], and q = [P_R; Q_R; P_L; Q_L] over all
buses. The nonlinearity stack f(x) carries the machine trig terms and the
bus power flow sums; only those flow blocks (and nothing in the constant
matrices) depend on the network topology, so a line outage amounts to
swapping the bus admittance matrix inside the evaluator.

Algebraic row ordering: [stator P (gen), stator Q (gen), P-balance at
generator buses, Q-balance at generator buses, P-balance at the remaining
buses, Q-balance at the remaining buses].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .case import OMEGA_S, CaseError, NetworkCase
from .powerflow import (PowerFlowSolution, bus_admittance, flow_injections,
                        flow_jacobian, solve_power_flow)


class ModelError(ValueError):
    """Inconsistent model assembly or equilibrium."""


@dataclass(frozen=True)
class NdaeDims:
    n_gen: int
    n_bus: int

    @property
    def nd(self) -> int:
        return 4 * self.n_gen

    @property
    def na(self) -> int:
        return 2 * self.n_gen + 2 * self.n_bus

    @property
    def n(self) -> int:
        return self.nd + self.na

    @property
    def nu(self) -> int:
        return 2 * self.n_gen

    @property
    def nq(self) -> int:
        return 4 * self.n_bus

    @property
    def nfd(self) -> int:
        return 3 * self.n_gen

    @property
    def nfa(self) -> int:
        return 5 * self.n_gen + 2 * self.n_bus

    @property
    def nf(self) -> int:
        return self.nfd + self.nfa

    # slices into the state vector
    @property
    def s_delta(self):
        return slice(0, self.n_gen)

    @property
    def s_omega(self):
        return slice(self.n_gen, 2 * self.n_gen)

    @property
    def s_eqp(self):
        return slice(2 * self.n_gen, 3 * self.n_gen)

    @property
    def s_edp(self):
        return slice(3 * self.n_gen, 4 * self.n_gen)

    @property
    def s_pg(self):
        return slice(self.nd, self.nd + self.n_gen)

    @property
    def s_qg(self):
        return slice(self.nd + self.n_gen, self.nd + 2 * self.n_gen)

    @property
    def s_v(self):
        return slice(self.nd + 2 * self.n_gen, self.nd + 2 * self.n_gen + self.n_bus)

    @property
    def s_theta(self):
        return slice(self.nd + 2 * self.n_gen + self.n_bus, self.n)


@dataclass(frozen=True)
class NdaeSystem:
    """Constant matrices plus the topology-dependent nonlinearity evaluator."""

    case: NetworkCase
    dims: NdaeDims
    Z: np.ndarray
    A: np.ndarray
    F: np.ndarray
    Bu: np.ndarray
    Bq: np.ndarray
    Bw: np.ndarray
    H: np.ndarray           # vector multiplying omega_s
    ybus: np.ndarray
    gen_bus: np.ndarray     # bus index per generator
    omega_s: float = OMEGA_S

    @property
    def dyn_mask(self) -> np.ndarray:
        return np.diag(self.Z) > 0.5

    @property
    def q_w(self) -> int:
        return self.Bw.shape[1]

    def with_ybus(self, ybus: np.ndarray) -> "NdaeSystem":
        """Same constant matrices, different network topology inside f."""
        return replace(self, ybus=ybus)

    # -- nonlinearity stack -------------------------------------------------
    def eval_f(self, x: np.ndarray) -> np.ndarray:
        """f(x); accepts a single state (n,) or a batch (N, n)."""
        d = self.dims
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        g = self.gen_bus
        delta = X[:, d.s_delta]
        eqp = X[:, d.s_eqp]
        pg = X[:, d.s_pg]
        v = X[:, d.s_v]
        th = X[:, d.s_theta]
        vg = v[:, g]
        phi = delta - th[:, g]
        sphi, cphi = np.sin(phi), np.cos(phi)
        P, Q = flow_injections(self.ybus, v, th)
        ng = d.n_gen
        load = np.setdiff1d(np.arange(d.n_bus), g)
        out = np.concatenate([
            pg, vg * cphi, vg * sphi,                     # f_d
            eqp * vg * sphi, vg**2 * np.sin(2 * phi),     # f_a stator blocks
            eqp * vg * cphi, vg**2, vg**2 * np.cos(2 * phi),
            P[:, g], Q[:, g], P[:, load], Q[:, load],     # flow blocks
        ], axis=1)
        assert out.shape[1] == d.nf
        return out[0] if single else out

    def eval_f_jac(self, x: np.ndarray) -> np.ndarray:
        """Dense Jacobian of f at a single state x (nf x n)."""
        d = self.dims
        ng, nb = d.n_gen, d.n_bus
        g = self.gen_bus
        load = np.setdiff1d(np.arange(nb), g)
        delta = x[d.s_delta]
        eqp = x[d.s_eqp]
        v = x[d.s_v]
        th = x[d.s_theta]
        vg = v[g]
        phi = delta - th[g]
        s, c = np.sin(phi), np.cos(phi)
        s2, c2 = np.sin(2 * phi), np.cos(2 * phi)
        J = np.zeros((d.nf, d.n))
        r = np.arange(ng)

        def put(rows, cols, vals):
            J[rows, cols] = vals

        row = 0
        # f_d block 1: P_G (linear)
        put(row + r, d.s_pg.start + r, 1.0)
        row += ng
        # f_d block 2: v cos(phi)
        put(row + r, r, -vg * s)                       # d/d delta
        put(row + r, d.s_v.start + g, c)               # d/d v
        put(row + r, d.s_theta.start + g, vg * s)      # d/d theta
        row += ng
        # f_d block 3: v sin(phi)
        put(row + r, r, vg * c)
        put(row + r, d.s_v.start + g, s)
        put(row + r, d.s_theta.start + g, -vg * c)
        row += ng
        # f_a: Eqp v sin(phi)
        put(row + r, r, eqp * vg * c)
        put(row + r, d.s_eqp.start + r, vg * s)
        put(row + r, d.s_v.start + g, eqp * s)
        put(row + r, d.s_theta.start + g, -eqp * vg * c)
        row += ng
        # f_a: v^2 sin(2 phi)
        put(row + r, r, 2 * vg**2 * c2)
        put(row + r, d.s_v.start + g, 2 * vg * s2)
        put(row + r, d.s_theta.start + g, -2 * vg**2 * c2)
        row += ng
        # f_a: Eqp v cos(phi)
        put(row + r, r, -eqp * vg * s)
        put(row + r, d.s_eqp.start + r, vg * c)
        put(row + r, d.s_v.start + g, eqp * c)
        put(row + r, d.s_theta.start + g, eqp * vg * s)
        row += ng
        # f_a: v^2
        put(row + r, d.s_v.start + g, 2 * vg)
        row += ng
        # f_a: v^2 cos(2 phi)
        put(row + r, r, -2 * vg**2 * s2)
        put(row + r, d.s_v.start + g, 2 * vg * c2)
        put(row + r, d.s_theta.start + g, 2 * vg**2 * s2)
        row += ng
        # flow blocks
        dP_dth, dP_dv, dQ_dth, dQ_dv = flow_jacobian(self.ybus, v, th)
        for rows_idx in (g, load):
            J[row:row + len(rows_idx), d.s_v] = dP_dv[rows_idx]
            J[row:row + len(rows_idx), d.s_theta] = dP_dth[rows_idx]
            row += len(rows_idx)
            J[row:row + len(rows_idx), d.s_v] = dQ_dv[rows_idx]
            J[row:row + len(rows_idx), d.s_theta] = dQ_dth[rows_idx]
            row += len(rows_idx)
        # interleave back to [Pg, Qg, Pload, Qload] ordering
        # (loop above produced Pg, Qg then Pload, Qload -- already correct)
        return J

    def residual(self, x: np.ndarray, u: np.ndarray, q: np.ndarray,
                 w: np.ndarray | None = None) -> np.ndarray:
        """Right-hand side A x + F f(x) + B_u u + B_q q + H omega_s (+ B_w w)."""
        r = self.A @ x + self.F @ self.eval_f(x) + self.Bu @ u + self.Bq @ q \
            + self.H * self.omega_s
        if w is not None:
            r = r + self.Bw @ w
        return r


def assemble_ndae(case: NetworkCase) -> NdaeSystem:
    """Build every constant matrix of the stacked DAE for the given case."""
    ng, nb = case.n_gen, case.n_bus
    if ng == 0:
        raise ModelError("case has no generators")
    machines = []
    for gen in case.generators:
        if gen.machine is None:
            raise ModelError(f"generator at bus {gen.bus} has no machine constants")
        machines.append(gen.machine)
    d = NdaeDims(n_gen=ng, n_bus=nb)
    gen_bus = np.array([case.bus_index(g.bus) for g in case.generators])
    if len(set(gen_bus)) != ng:
        raise ModelError("one generator per bus is required by the stacked model")

    M = np.array([m.M for m in machines])
    D = np.array([m.D for m in machines])
    xd = np.array([m.xd for m in machines])
    xdp = np.array([m.xdp for m in machines])
    xq = np.array([m.xq for m in machines])
    xqp = np.array([m.xqp for m in machines])
    Td0 = np.array([m.Td0 for m in machines])
    Tq0 = np.array([m.Tq0 for m in machines])

    Ig = np.eye(ng)
    Ad = np.zeros((d.nd, d.nd))
    Ad[d.s_delta, d.s_omega] = Ig
    Ad[d.s_omega, d.s_omega] = -np.diag(D / M)
    Ad[d.s_eqp, d.s_eqp] = -np.diag(xd / (xdp * Td0))
    Ad[d.s_edp, d.s_edp] = -np.diag(1.0 / Tq0)

    Fd = np.zeros((d.nd, d.nfd))
    Fd[d.s_omega, 0:ng] = -np.diag(1.0 / M)
    Fd[d.s_eqp, ng:2 * ng] = np.diag((xd - xdp) / (xdp * Td0))
    Fd[d.s_edp, 2 * ng:3 * ng] = np.diag((xq - xqp) / (xq * Tq0))

    Bd = np.zeros((d.nd, d.nu))
    Bd[d.s_omega, 0:ng] = np.diag(1.0 / M)
    Bd[d.s_eqp, ng:2 * ng] = np.diag(1.0 / Td0)

    h = np.zeros(d.nd)
    h[d.s_delta] = -1.0
    h[d.s_omega] = D / M

    # algebraic rows: stator P/Q then power balance (gen buses first)
    Aa = np.zeros((d.na, d.na))
    Aa[0:ng, 0:ng] = -Ig                    # stator P rows: -P_G
    Aa[ng:2 * ng, ng:2 * ng] = -Ig          # stator Q rows: -Q_G
    Aa[2 * ng:3 * ng, 0:ng] = -Ig           # P balance at gen buses: -P_G
    Aa[3 * ng:4 * ng, ng:2 * ng] = -Ig      # Q balance at gen buses: -Q_G

    Fa = np.zeros((d.na, d.nfa))
    Fa[0:ng, 0:ng] = np.diag(1.0 / xdp)
    Fa[0:ng, ng:2 * ng] = np.diag((xdp - xq) / (2 * xdp * xq))
    Fa[ng:2 * ng, 2 * ng:3 * ng] = np.diag(1.0 / xdp)
    Fa[ng:2 * ng, 3 * ng:4 * ng] = -np.diag((xdp + xq) / (2 * xdp * xq))
    Fa[ng:2 * ng, 4 * ng:5 * ng] = np.diag((xdp - xq) / (2 * xdp * xq))
    Fa[2 * ng:, 5 * ng:] = np.eye(2 * nb)   # flow blocks enter as identity

    # balance-row positions per bus (P row, Q row) inside the algebraic block
    load_bus = np.setdiff1d(np.arange(nb), gen_bus)
    p_row = np.zeros(nb, dtype=int)
    q_row = np.zeros(nb, dtype=int)
    p_row[gen_bus] = 2 * ng + np.arange(ng)
    q_row[gen_bus] = 3 * ng + np.arange(ng)
    p_row[load_bus] = 4 * ng + np.arange(len(load_bus))
    q_row[load_bus] = 4 * ng + len(load_bus) + np.arange(len(load_bus))

    # q = [P_R; Q_R; P_L; Q_L]; balance rows read -P_R + P_L etc.
    Ba = np.zeros((d.na, d.nq))
    ren_buses = {case.bus_index(r.bus) for r in case.renewables}
    load_buses = {i for i, b in enumerate(case.buses) if b.pl != 0 or b.ql != 0}
    for i in range(nb):
        if i in ren_buses:
            Ba[p_row[i], i] = -1.0
            Ba[q_row[i], nb + i] = -1.0
        if i in load_buses:
            Ba[p_row[i], 2 * nb + i] = 1.0
            Ba[q_row[i], 3 * nb + i] = 1.0

    Z = np.zeros((d.n, d.n))
    Z[:d.nd, :d.nd] = np.eye(d.nd)
    A = np.zeros((d.n, d.n))
    A[:d.nd, :d.nd] = Ad
    A[d.nd:, d.nd:] = Aa
    F = np.zeros((d.n, d.nf))
    F[:d.nd, :d.nfd] = Fd
    F[d.nd:, d.nfd:] = Fa
    Bu = np.vstack([Bd, np.zeros((d.na, d.nu))])
    Bq = np.vstack([np.zeros((d.nd, d.nq)), Ba])
    H = np.concatenate([h, np.zeros(d.na)])

    # disturbance map: w = [w_p (nd); w_m (p placeholder); dP_R (nb); dP_L (nb)]
    # the measurement-noise column count is fixed later by the PMU model via
    # resize_disturbance; default p=0 keeps the blocks adjacent.
    Bw = _build_bw(d, p_row, ren_buses, load_buses, p_meas=0)

    sys = NdaeSystem(case=case, dims=d, Z=Z, A=A, F=F, Bu=Bu, Bq=Bq, Bw=Bw,
                     H=H, ybus=bus_admittance(case), gen_bus=gen_bus)
    _check_blocks(sys)
    return sys


def _build_bw(d: NdaeDims, p_row, ren_buses, load_buses, p_meas: int) -> np.ndarray:
    nb = d.n_bus
    Bw = np.zeros((d.n, d.nd + p_meas + 2 * nb))
    Bw[:d.nd, :d.nd] = np.eye(d.nd)
    for i in range(nb):
        if i in ren_buses:
            Bw[d.nd + p_row[i], d.nd + p_meas + i] = -1.0
        if i in load_buses:
            Bw[d.nd + p_row[i], d.nd + p_meas + nb + i] = 1.0
    return Bw


def resize_disturbance(sys: NdaeSystem, p_meas: int) -> NdaeSystem:
    """Insert p measurement-noise columns (zero rows in B_w) after w_p."""
    d = sys.dims
    nb = d.n_bus
    old = sys.Bw
    Bw = np.zeros((d.n, d.nd + p_meas + 2 * nb))
    Bw[:, :d.nd] = old[:, :d.nd]
    Bw[:, d.nd + p_meas:] = old[:, old.shape[1] - 2 * nb:]
    return replace(sys, Bw=Bw)


def _check_blocks(sys: NdaeSystem) -> None:
    Z = sys.Z
    if not np.array_equal(Z @ Z, Z):
        raise ModelError("Z is not idempotent")
    d = sys.dims
    if np.any(sys.A[:d.nd, d.nd:]) or np.any(sys.A[d.nd:, :d.nd]):
        raise ModelError("A is not block diagonal")
    if np.any(sys.F[:d.nd, d.nfd:]) or np.any(sys.F[d.nd:, :d.nfd]):
        raise ModelError("F is not block diagonal")


@dataclass(frozen=True)
class Equilibrium:
    """Steady state consistent with a converged power flow."""

    x0: np.ndarray
    u_bar: np.ndarray
    q_bar: np.ndarray
    delta: np.ndarray
    eqp: np.ndarray
    edp: np.ndarray
    tm: np.ndarray
    efd: np.ndarray
    residual: float

    @property
    def xd0(self) -> np.ndarray:
        return self.x0[: 4 * len(self.delta)]

    @property
    def xa0(self) -> np.ndarray:
        return self.x0[4 * len(self.delta):]


def init_equilibrium(case: NetworkCase, pf: PowerFlowSolution | None = None,
                     sys: NdaeSystem | None = None,
                     residual_tol: float = 1e-8) -> Equilibrium:
    """Back-solve machine states and inputs so every derivative vanishes.

    The rotor angle comes from the phasor E = V + j x_q I; E'_q, E'_d, T_M
    and E_fd then follow from the steady-state machine equations. The result
    is verified against the assembled DAE residual rather than trusted.
    """
    if sys is None:
        sys = assemble_ndae(case)
    if pf is None:
        pf = solve_power_flow(case)
    d = sys.dims
    g = sys.gen_bus
    mach = [gen.machine for gen in case.generators]
    xd = np.array([m.xd for m in mach])
    xdp = np.array([m.xdp for m in mach])
    xq = np.array([m.xq for m in mach])
    xqp = np.array([m.xqp for m in mach])

    V = pf.v[g] * np.exp(1j * pf.theta[g])
    S = pf.p_gen + 1j * pf.q_gen
    I = np.conj(S / V)
    delta = np.angle(V + 1j * xq * I)
    phi = delta - pf.theta[g]
    vd = pf.v[g] * np.sin(phi)
    vq = pf.v[g] * np.cos(phi)
    rot = np.exp(-1j * (delta - np.pi / 2))
    Idq = I * rot
    i_d, i_q = Idq.real, Idq.imag
    eqp = vq + xdp * i_d
    edp = (xq - xqp) / xq * vd
    tm = pf.p_gen.copy()
    efd = xd / xdp * eqp - (xd - xdp) / xdp * vq

    x0 = np.zeros(d.n)
    x0[d.s_delta] = delta
    x0[d.s_omega] = sys.omega_s
    x0[d.s_eqp] = eqp
    x0[d.s_edp] = edp
    x0[d.s_pg] = pf.p_gen
    x0[d.s_qg] = pf.q_gen
    x0[d.s_v] = pf.v
    x0[d.s_theta] = pf.theta

    u_bar = np.concatenate([tm, efd])
    pl, ql = case.load_vector()
    pr, qr = case.renewable_vector()
    q_bar = np.concatenate([pr, qr, pl, ql])

    res = np.max(np.abs(sys.residual(x0, u_bar, q_bar)))
    if res > residual_tol:
        raise ModelError(
            f"equilibrium residual {res:.3e} exceeds {residual_tol:.1e}; "
            "power flow and machine back-solve are inconsistent")
    return Equilibrium(x0=x0, u_bar=u_bar, q_bar=q_bar, delta=delta, eqp=eqp,
                       edp=edp, tm=tm, efd=efd, residual=res)
