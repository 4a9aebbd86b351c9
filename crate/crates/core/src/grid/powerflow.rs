//! Polar Newton–Raphson AC power flow.

use num_complex::Complex;

use super::admittance::{build_admittance, series_admittance, Admittance};
use super::linalg::lu_solve;
use super::{BusKind, GridCase};
use crate::scalar::Real;

/// Nodal injections for one solve. Powers are in MW/MVAr, voltages in p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections<T> {
    /// Active output per generator; the balanced unit's entry is ignored.
    pub gen_p: Vec<T>,
    /// Voltage setpoint per generator.
    pub gen_v: Vec<T>,
    pub gen_on: Vec<bool>,
    pub load_p: Vec<T>,
    pub load_q: Vec<T>,
}

impl<T: Real> Injections<T> {
    /// Every unit online at its case voltage setpoint with the given outputs.
    pub fn nominal(case: &GridCase, gen_p: Vec<T>, load_p: Vec<T>, load_q: Vec<T>) -> Self {
        Injections {
            gen_p,
            gen_v: case.generators.iter().map(|g| T::lit(g.v_set)).collect(),
            gen_on: vec![true; case.n_gen()],
            load_p,
            load_q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for PfOptions<T> {
    fn default() -> Self {
        PfOptions {
            tol: T::lit(1e-8),
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T> {
    pub v_mag: Vec<T>,
    pub v_ang: Vec<T>,
    /// Sending-end flows in MW / MVAr.
    pub line_flow_p: Vec<T>,
    pub line_flow_q: Vec<T>,
    /// Sending-end current magnitude over `i_max`; zero for open lines.
    pub rho: Vec<T>,
    pub slack_p: T,
    pub slack_q: T,
    pub gen_q: Vec<T>,
    pub grid_loss: T,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: T,
}

/// Bus classification for one solve: PV buses without an online unit are
/// treated as PQ.
struct BusTypes {
    slack: usize,
    pv: Vec<usize>,
    pq: Vec<usize>,
}

fn classify<T: Real>(case: &GridCase, inj: &Injections<T>) -> BusTypes {
    let mut slack = 0;
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    for (i, bus) in case.buses.iter().enumerate() {
        match bus.kind {
            BusKind::Slack => slack = i,
            BusKind::Pv
                if case
                    .generators
                    .iter()
                    .zip(&inj.gen_on)
                    .any(|(g, on)| *on && g.bus == bus.id) =>
            {
                pv.push(i)
            }
            _ => pq.push(i),
        }
    }
    BusTypes { slack, pv, pq }
}

/// Complex power injected at every bus, `V ∘ conj(Y V)`.
fn injections<T: Real>(y: &Admittance<T>, vm: &[T], va: &[T]) -> Vec<Complex<T>> {
    let v: Vec<Complex<T>> = vm
        .iter()
        .zip(va)
        .map(|(m, a)| Complex::from_polar(*m, *a))
        .collect();
    let i = y.mul(&v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

/// Specified net injection per bus in p.u.
fn scheduled<T: Real>(case: &GridCase, inj: &Injections<T>) -> (Vec<T>, Vec<T>) {
    let n = case.n_bus();
    let s_base = T::lit(case.s_base);
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for (k, g) in case.generators.iter().enumerate() {
        if inj.gen_on[k] {
            p[case.bus_pos(g.bus)] = p[case.bus_pos(g.bus)] + inj.gen_p[k] / s_base;
        }
    }
    for (k, l) in case.loads.iter().enumerate() {
        let b = case.bus_pos(l.bus);
        p[b] = p[b] - inj.load_p[k] / s_base;
        q[b] = q[b] - inj.load_q[k] / s_base;
    }
    (p, q)
}

/// Solve the AC power flow by polar Newton–Raphson.
///
/// Starts from `warm` voltages when given, flat otherwise; PV and slack
/// magnitudes are always reset to their setpoints. Non-convergence is not an
/// error: the returned solution carries `converged = false` and the final
/// mismatch.
pub fn solve_power_flow<T: Real>(
    case: &GridCase,
    inj: &Injections<T>,
    line_status: &[bool],
    opts: &PfOptions<T>,
    warm: Option<&PowerFlowSolution<T>>,
) -> PowerFlowSolution<T> {
    assert!(opts.tol > T::zero(), "tolerance must be positive");
    assert_eq!(inj.gen_p.len(), case.n_gen());
    assert_eq!(inj.load_p.len(), case.n_load());
    let n = case.n_bus();
    let y = build_admittance::<T>(case, line_status);
    let types = classify(case, inj);
    let (p_spec, q_spec) = scheduled(case, inj);

    let (mut vm, mut va) = match warm {
        Some(w) if w.converged && w.v_mag.len() == n => (w.v_mag.clone(), w.v_ang.clone()),
        _ => (vec![T::one(); n], vec![T::zero(); n]),
    };
    va[types.slack] = T::zero();
    for (k, g) in case.generators.iter().enumerate() {
        let b = case.bus_pos(g.bus);
        if b == types.slack || (inj.gen_on[k] && types.pv.contains(&b)) {
            vm[b] = inj.gen_v[k];
        }
    }

    let pvpq: Vec<usize> = types.pv.iter().chain(&types.pq).copied().collect();
    let n_ang = pvpq.len();
    let dim = n_ang + types.pq.len();
    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = T::infinity();
    let connected = case.is_connected(line_status);

    for it in 0..=opts.max_iter {
        let s = injections(&y, &vm, &va);
        let mut f = Vec::with_capacity(dim);
        f.extend(pvpq.iter().map(|&i| p_spec[i] - s[i].re));
        f.extend(types.pq.iter().map(|&i| q_spec[i] - s[i].im));
        max_mismatch = f.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !max_mismatch.is_finite() {
            break;
        }
        iterations = it;
        if max_mismatch <= opts.tol {
            converged = connected;
            break;
        }
        if it == opts.max_iter || !connected {
            break;
        }
        let mut jac = jacobian(&y, &vm, &va, &s, &pvpq, &types.pq);
        if !lu_solve(&mut jac, &mut f, dim) {
            break;
        }
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] = va[i] + f[k];
        }
        for (k, &i) in types.pq.iter().enumerate() {
            vm[i] = vm[i] + f[n_ang + k];
        }
    }

    finish(
        case,
        inj,
        line_status,
        &y,
        vm,
        va,
        &types,
        converged,
        iterations,
        max_mismatch,
    )
}

/// Dense Jacobian of the `[P(pvpq); Q(pq)]` mismatch with respect to
/// `[θ(pvpq); |V|(pq)]`, row-major.
fn jacobian<T: Real>(
    y: &Admittance<T>,
    vm: &[T],
    va: &[T],
    s: &[Complex<T>],
    pvpq: &[usize],
    pq: &[usize],
) -> Vec<T> {
    let n = vm.len();
    let n_ang = pvpq.len();
    let dim = n_ang + pq.len();
    // column lookup: bus -> (angle column, magnitude column)
    let mut ang_col = vec![usize::MAX; n];
    let mut mag_col = vec![usize::MAX; n];
    for (k, &i) in pvpq.iter().enumerate() {
        ang_col[i] = k;
    }
    for (k, &i) in pq.iter().enumerate() {
        mag_col[i] = n_ang + k;
    }
    let mut jac = vec![T::zero(); dim * dim];
    let rows_p = pvpq.iter().enumerate().map(|(r, &i)| (r, i, true));
    let rows_q = pq.iter().enumerate().map(|(r, &i)| (n_ang + r, i, false));
    for (r, i, is_p) in rows_p.chain(rows_q) {
        let (pi, qi) = (s[i].re, s[i].im);
        for &(k, yik) in y.row(i) {
            let (g, b) = (yik.re, yik.im);
            if k == i {
                let (d_ang, d_mag) = if is_p {
                    (-qi - b * vm[i] * vm[i], pi / vm[i] + g * vm[i])
                } else {
                    (pi - g * vm[i] * vm[i], qi / vm[i] - b * vm[i])
                };
                if ang_col[i] != usize::MAX {
                    jac[r * dim + ang_col[i]] = d_ang;
                }
                if mag_col[i] != usize::MAX {
                    jac[r * dim + mag_col[i]] = d_mag;
                }
            } else {
                let th = va[i] - va[k];
                let (c, sn) = (th.cos(), th.sin());
                let (d_ang, d_mag) = if is_p {
                    (vm[i] * vm[k] * (g * sn - b * c), vm[i] * (g * c + b * sn))
                } else {
                    (-vm[i] * vm[k] * (g * c + b * sn), vm[i] * (g * sn - b * c))
                };
                if ang_col[k] != usize::MAX {
                    jac[r * dim + ang_col[k]] = d_ang;
                }
                if mag_col[k] != usize::MAX {
                    jac[r * dim + mag_col[k]] = d_mag;
                }
            }
        }
    }
    jac
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    case: &GridCase,
    inj: &Injections<T>,
    line_status: &[bool],
    y: &Admittance<T>,
    vm: Vec<T>,
    va: Vec<T>,
    types: &BusTypes,
    converged: bool,
    iterations: usize,
    max_mismatch: T,
) -> PowerFlowSolution<T> {
    let s_base = T::lit(case.s_base);
    let s = injections(y, &vm, &va);
    let v: Vec<Complex<T>> = vm
        .iter()
        .zip(&va)
        .map(|(m, a)| Complex::from_polar(*m, *a))
        .collect();

    let n_line = case.n_line();
    let mut line_flow_p = vec![T::zero(); n_line];
    let mut line_flow_q = vec![T::zero(); n_line];
    let mut rho = vec![T::zero(); n_line];
    let mut grid_loss = T::zero();
    for (l, line) in case.lines.iter().enumerate() {
        if !line_status[l] {
            continue;
        }
        let (f, t) = (case.bus_pos(line.from_bus), case.bus_pos(line.to_bus));
        let ys = series_admittance::<T>(line.r, line.x);
        let sh = Complex::new(T::zero(), T::lit(line.b / 2.0));
        let i_f = (v[f] - v[t]) * ys + v[f] * sh;
        let i_t = (v[t] - v[f]) * ys + v[t] * sh;
        let s_f = v[f] * i_f.conj();
        let s_t = v[t] * i_t.conj();
        line_flow_p[l] = s_f.re * s_base;
        line_flow_q[l] = s_f.im * s_base;
        rho[l] = i_f.norm() / T::lit(line.i_max);
        grid_loss = grid_loss + (s_f.re + s_t.re) * s_base;
    }

    // bus-level load totals in MW / MVAr
    let mut bus_load_p = vec![T::zero(); case.n_bus()];
    let mut bus_load_q = vec![T::zero(); case.n_bus()];
    for (k, l) in case.loads.iter().enumerate() {
        let b = case.bus_pos(l.bus);
        bus_load_p[b] = bus_load_p[b] + inj.load_p[k];
        bus_load_q[b] = bus_load_q[b] + inj.load_q[k];
    }

    let mut gen_q = vec![T::zero(); case.n_gen()];
    let mut slack_p = T::zero();
    let mut slack_q = T::zero();
    for b in 0..case.n_bus() {
        let is_slack = b == types.slack;
        if !is_slack && !types.pv.contains(&b) {
            continue;
        }
        let bus_id = case.buses[b].id;
        let q_total = s[b].im * s_base + bus_load_q[b];
        if is_slack {
            // other online units on the slack bus keep their scheduled P
            let others: T = case
                .generators
                .iter()
                .enumerate()
                .filter(|(k, g)| g.bus == bus_id && inj.gen_on[*k] && *k != case.balanced_id())
                .map(|(k, _)| inj.gen_p[k])
                .sum();
            slack_p = s[b].re * s_base + bus_load_p[b] - others;
        }
        let online: Vec<usize> = (0..case.n_gen())
            .filter(|&k| case.generators[k].bus == bus_id && inj.gen_on[k])
            .collect();
        let span: T = online
            .iter()
            .map(|&k| T::lit(case.generators[k].q_max - case.generators[k].q_min))
            .sum();
        for &k in &online {
            let share = T::lit(case.generators[k].q_max - case.generators[k].q_min) / span;
            gen_q[k] = q_total * share;
        }
        if is_slack {
            slack_q = gen_q[case.balanced_id()];
        }
    }

    PowerFlowSolution {
        v_mag: vm,
        v_ang: va,
        line_flow_p,
        line_flow_q,
        rho,
        slack_p,
        slack_q,
        gen_q,
        grid_loss,
        converged,
        iterations,
        max_mismatch,
    }
}

/// Max-norm of the PV/PQ mismatch of `sol` against the scheduled injections.
pub fn mismatch_norm<T: Real>(
    case: &GridCase,
    inj: &Injections<T>,
    line_status: &[bool],
    sol: &PowerFlowSolution<T>,
) -> T {
    let y = build_admittance::<T>(case, line_status);
    let types = classify(case, inj);
    let (p_spec, q_spec) = scheduled(case, inj);
    let s = injections(&y, &sol.v_mag, &sol.v_ang);
    let dp = types
        .pv
        .iter()
        .chain(&types.pq)
        .map(|&i| (p_spec[i] - s[i].re).abs());
    let dq = types.pq.iter().map(|&i| (q_spec[i] - s[i].im).abs());
    dp.chain(dq).fold(T::zero(), |m, v| m.max(v))
}
