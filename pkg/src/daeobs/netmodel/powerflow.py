"""Bus admittance matrix and Newton-Raphson AC power flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import CaseError, NetworkCase


class PowerFlowError(RuntimeError):
    """Power flow failed to converge."""


def bus_admittance(case: NetworkCase) -> np.ndarray:
    """Complex bus admittance matrix (n_bus x n_bus).

    Out-of-service branches are skipped; bus shunts land on the diagonal.
    """
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        f = case.bus_index(br.from_bus)
        t = case.bus_index(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b
        Y[f, f] += ys + bc
        Y[t, t] += ys + bc
        Y[f, t] -= ys
        Y[t, f] -= ys
    for i, b in enumerate(case.buses):
        Y[i, i] += complex(b.gs, b.bs)
    return Y


def flow_injections(Y: np.ndarray, v: np.ndarray, theta: np.ndarray):
    """Active/reactive power flowing out of each bus into the network.

    P_i = sum_j v_i v_j (G_ij cos th_ij + B_ij sin th_ij), Q analogous.
    Accepts batched v/theta with shape (..., n).
    """
    V = v * np.exp(1j * theta)
    S = V * np.conj(V @ Y.T)
    return S.real, S.imag


def flow_jacobian(Y: np.ndarray, v: np.ndarray, theta: np.ndarray):
    """Partials of the flow injections w.r.t. (theta, v).

    Returns (dP_dth, dP_dv, dQ_dth, dQ_dv), each n x n dense.
    """
    n = len(v)
    G, B = Y.real, Y.imag
    th = theta[:, None] - theta[None, :]
    ct, st = np.cos(th), np.sin(th)
    vv = v[:, None] * v[None, :]
    E = vv * (G * ct + B * st)     # E_ij, sums to P
    F = vv * (G * st - B * ct)     # F_ij, sums to Q
    P = E.sum(axis=1)
    Q = F.sum(axis=1)

    dP_dth = F.copy()
    np.fill_diagonal(dP_dth, -Q + np.diag(F))
    dQ_dth = -E
    np.fill_diagonal(dQ_dth, P - np.diag(E))
    with np.errstate(divide="ignore", invalid="ignore"):
        dP_dv = np.where(v[None, :] != 0.0, E / v[None, :], 0.0)
        dQ_dv = np.where(v[None, :] != 0.0, F / v[None, :], 0.0)
    # diagonal: d/dv_i of v_i v_j(...) keeps the j=i term quadratic
    gv = np.where(v != 0.0, (P + np.diag(E)) / np.where(v == 0, 1, v),
                  np.zeros(n))
    hv = np.where(v != 0.0, (Q + np.diag(F)) / np.where(v == 0, 1, v),
                  np.zeros(n))
    np.fill_diagonal(dP_dv, gv)
    np.fill_diagonal(dQ_dv, hv)
    return dP_dth, dP_dv, dQ_dth, dQ_dv


@dataclass(frozen=True)
class PowerFlowSolution:
    v: np.ndarray          # bus voltage magnitudes, pu
    theta: np.ndarray      # bus angles, rad
    p_inj: np.ndarray      # net active injection per bus (gen + ren - load)
    q_inj: np.ndarray
    p_gen: np.ndarray      # per-generator outputs in case.generators order
    q_gen: np.ndarray
    iterations: int
    mismatch: float


def solve_power_flow(case: NetworkCase, tol: float = 1e-8,
                     max_iter: int = 50) -> PowerFlowSolution:
    """Newton-Raphson power flow from a flat start.

    Raises PowerFlowError with the final mismatch if it does not converge.
    """
    n = case.n_bus
    Y = bus_admittance(case)
    pl, ql = case.load_vector()
    pr, qr = case.renewable_vector()

    btypes = [b.btype for b in case.buses]
    slack = btypes.index("slack")
    pv = [i for i, t in enumerate(btypes) if t == "PV"]
    pq = [i for i, t in enumerate(btypes) if t == "PQ"]
    non_slack = pv + pq

    v = np.ones(n)
    theta = np.zeros(n)
    pg_sched = np.zeros(n)
    for g in case.generators:
        i = case.bus_index(g.bus)
        if i != slack:
            pg_sched[i] += g.pg
        v[i] = g.vset
    p_sched = pg_sched + pr - pl
    q_sched = qr - ql   # PQ buses only; PV/slack reactive power is free

    mismatch = np.inf
    for it in range(1, max_iter + 1):
        P, Q = flow_injections(Y, v, theta)
        dP = p_sched[non_slack] - P[non_slack]
        dQ = q_sched[pq] - Q[pq]
        mismatch = max(np.max(np.abs(dP), initial=0.0),
                       np.max(np.abs(dQ), initial=0.0))
        if mismatch <= tol:
            p_gen, q_gen = _generator_outputs(case, slack, P, Q, pl, ql, pr, qr)
            return PowerFlowSolution(v=v, theta=theta, p_inj=P, q_inj=Q,
                                     p_gen=p_gen, q_gen=q_gen,
                                     iterations=it - 1, mismatch=mismatch)
        dP_dth, dP_dv, dQ_dth, dQ_dv = flow_jacobian(Y, v, theta)
        J = np.block([
            [dP_dth[np.ix_(non_slack, non_slack)], dP_dv[np.ix_(non_slack, pq)]],
            [dQ_dth[np.ix_(pq, non_slack)], dQ_dv[np.ix_(pq, pq)]],
        ])
        try:
            step = np.linalg.solve(J, np.concatenate([dP, dQ]))
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(
                f"singular Jacobian at iteration {it} (mismatch {mismatch:.3e})"
            ) from exc
        theta[non_slack] += step[: len(non_slack)]
        v[pq] += step[len(non_slack):]
        if not np.all(np.isfinite(v)) or np.any(v[pq] <= 0):
            raise PowerFlowError(
                f"iterate left the feasible region at iteration {it} "
                f"(mismatch {mismatch:.3e})")
    raise PowerFlowError(
        f"no convergence in {max_iter} iterations; final mismatch {mismatch:.3e}")


def _generator_outputs(case, slack, P, Q, pl, ql, pr, qr):
    """Back out per-generator P/Q from the solved injections."""
    p_gen = np.zeros(case.n_gen)
    q_gen = np.zeros(case.n_gen)
    bus_gens: dict[int, list[int]] = {}
    for k, g in enumerate(case.generators):
        bus_gens.setdefault(case.bus_index(g.bus), []).append(k)
    for i, ks in bus_gens.items():
        p_total = P[i] - pr[i] + pl[i]
        q_total = Q[i] - qr[i] + ql[i]
        if i == slack:
            share = np.full(len(ks), 1.0 / len(ks))
        else:
            disp = np.array([case.generators[k].pg for k in ks])
            share = disp / disp.sum() if disp.sum() > 0 else np.full(len(ks), 1 / len(ks))
        for s, k in zip(share, ks):
            p_gen[k] = s * p_total
            q_gen[k] = s * q_total
    return p_gen, q_gen


def equilibrium_report_csv(case: NetworkCase, pf: PowerFlowSolution,
                           eq=None) -> str:
    """CSV report of the operating point (bus section, then machine section)."""
    lines = ["section,id,v,theta,P,Q,delta,Eqp,Edp,Tm,Efd"]
    for i, b in enumerate(case.buses):
        lines.append(f"bus,{b.id},{pf.v[i]:.10g},{pf.theta[i]:.10g},"
                     f"{pf.p_inj[i]:.10g},{pf.q_inj[i]:.10g},,,,,")
    if eq is not None:
        ng = case.n_gen
        for k, g in enumerate(case.generators):
            lines.append(
                f"machine,{g.bus},,,{pf.p_gen[k]:.10g},{pf.q_gen[k]:.10g},"
                f"{eq.delta[k]:.10g},{eq.eqp[k]:.10g},{eq.edp[k]:.10g},"
                f"{eq.tm[k]:.10g},{eq.efd[k]:.10g}")
    return "\n".join(lines) + "\n"


def check_solvable(case: NetworkCase) -> None:
    if case.n_bus < 1:
        raise CaseError("empty case")
