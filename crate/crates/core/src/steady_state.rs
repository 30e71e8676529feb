//! Closed-loop equilibrium by damped Newton iteration.
//!
//! Unknowns per inverter are the phase δ, the corrections Ω and e, and the
//! commanded voltage V. Residuals are the three consensus derivatives and the
//! voltage output map. Phases are only defined up to a common rotation within
//! each group of inverters coupled electrically or through phase consensus,
//! so the first phase of each group is pinned to zero and that inverter's
//! phase equation, which is implied by the others, is dropped.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::controller::{
    output_frequency, output_voltage, state_derivative, IbrParams, IbrState, Measurements, NeighborSnapshot,
    NeighborValue,
};
use crate::engine::GainPolicy;
use crate::error::SteadyStateError;
use crate::network::{build_admittance, solve_island, NewtonOptions};
use crate::topology::{NmgTopology, UnionFind};
use crate::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    pub gains: GainPolicy,
    pub voltage_dapi: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub network: NewtonOptions,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            gains: GainPolicy::default(),
            voltage_dapi: true,
            tolerance: 1e-9,
            max_iterations: 100,
            network: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyIbr {
    pub p: f64,
    pub q: f64,
    pub f_hz: f64,
    pub v: f64,
    /// rad, relative to the pinned reference of its group.
    pub delta: f64,
    pub omega_sec: f64,
    pub e_sec: f64,
}

struct Problem<'a> {
    topology: &'a NmgTopology,
    params: &'a [IbrParams],
    closed: &'a [bool],
    opts: &'a SteadyStateOptions,
    ibr_bus: Vec<usize>,
    island_of: Vec<usize>,
    islands: Vec<Vec<usize>>,
    /// Pinned-phase inverters.
    reference: Vec<bool>,
    nominal_voltage: f64,
    /// Neighbors per inverter: index and gains.
    links: Vec<Vec<(usize, f64, f64, f64)>>,
}

struct Point {
    delta: Vec<f64>,
    omega_sec: Vec<f64>,
    e_sec: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn unpack(&self, x: &[f64]) -> Point {
        let n = self.params.len();
        let mut it = x.iter().copied();
        let mut delta = vec![0.0; n];
        for i in 0..n {
            if !self.reference[i] {
                delta[i] = it.next().expect("length checked");
            }
        }
        let omega_sec = (0..n).map(|_| it.next().expect("length checked")).collect();
        let e_sec = if self.opts.voltage_dapi {
            (0..n).map(|_| it.next().expect("length checked")).collect()
        } else {
            vec![0.0; n]
        };
        let v = (0..n).map(|_| it.next().expect("length checked")).collect();
        Point { delta, omega_sec, e_sec, v }
    }

    fn powers(&self, pt: &Point) -> Result<(Vec<f64>, Vec<f64>), SteadyStateError> {
        let n = self.params.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for isl in &self.islands {
            let adm = build_admittance(self.topology, self.closed, isl, self.nominal_voltage)?;
            let sources: Vec<Option<Complex64>> = isl
                .iter()
                .map(|&b| self.ibr_bus.iter().position(|&x| x == b).map(|i| Complex64::from_polar(pt.v[i], pt.delta[i])))
                .collect();
            let sol = solve_island(&adm, &sources, &self.opts.network)?;
            for (local, &b) in isl.iter().enumerate() {
                if let Some(i) = self.ibr_bus.iter().position(|&x| x == b) {
                    p[i] = sol.injections[local].re;
                    q[i] = sol.injections[local].im;
                }
            }
        }
        Ok((p, q))
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, SteadyStateError> {
        let n = self.params.len();
        let pt = self.unpack(x);
        let (p, q) = self.powers(&pt)?;
        let mut r = Vec::with_capacity(x.len());
        let mut r_omega = Vec::with_capacity(n);
        let mut r_e = Vec::with_capacity(n);
        let mut r_v = Vec::with_capacity(n);
        for i in 0..n {
            let s = IbrState { delta: pt.delta[i], omega_sec: pt.omega_sec[i], e_sec: pt.e_sec[i] };
            let neighbors = self.links[i]
                .iter()
                .map(|&(j, a, b, d)| {
                    let nb = NeighborValue {
                        index: j,
                        omega_sec: pt.omega_sec[j],
                        q_ratio: if b != 0.0 { q[j] / self.params[j].q_star } else { 0.0 },
                        delta: pt.delta[j],
                        local_ok: false,
                        a,
                        b,
                        d,
                    };
                    self.opts.gains.dynamic_weights(&nb, self.island_of[i] == self.island_of[j])
                })
                .collect();
            let snap = NeighborSnapshot { neighbors, snapshot_time: 0.0 };
            let v_out = output_voltage(&self.params[i], &s, q[i], None);
            let meas = Measurements { p: p[i], q: q[i], omega: output_frequency(&self.params[i], &s, p[i]), v: pt.v[i] };
            let d = state_derivative(&self.params[i], &s, &meas, &snap, !self.opts.voltage_dapi);
            if !self.reference[i] {
                r.push(d.delta);
            }
            r_omega.push(d.omega_sec * self.params[i].k);
            if self.opts.voltage_dapi {
                r_e.push(d.e_sec * self.params[i].kappa);
            }
            r_v.push(pt.v[i] - v_out);
        }
        r.extend(r_omega);
        r.extend(r_e);
        r.extend(r_v);
        Ok(r)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Equilibrium of the closed loop for fixed breaker positions and setpoints.
pub fn solve_steady_state(
    topology: &NmgTopology,
    params: &[IbrParams],
    closed: &[bool],
    opts: &SteadyStateOptions,
) -> Result<Vec<SteadyIbr>, SteadyStateError> {
    let n = topology.ibr_ids().len();
    if params.len() != n {
        return Err(SteadyStateError::ParamMismatch { params: params.len(), ibrs: n });
    }
    let ibr_bus: Vec<usize> = topology.ibr_buses().into_iter().map(|b| b.expect("IBR attached to a bus")).collect();
    let islands = topology.island_indices(closed);
    let mut bus_island = vec![0; topology.buses.len()];
    for (k, isl) in islands.iter().enumerate() {
        for &b in isl {
            bus_island[b] = k;
        }
    }
    let island_of: Vec<usize> = ibr_bus.iter().map(|&b| bus_island[b]).collect();

    let mut links = vec![Vec::new(); n];
    for l in &topology.comm.links {
        if let (Some(i), Some(j)) = (topology.ibr_index(&l.i), topology.ibr_index(&l.j)) {
            if l.gains.is_active() && i != j {
                links[i].push((j, l.gains.a, l.gains.b, l.gains.d));
                links[j].push((i, l.gains.a, l.gains.b, l.gains.d));
            }
        }
    }

    // rotation groups: electrical islands joined by effective phase links
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in 0..n {
            if island_of[i] == island_of[j] {
                uf.union(i, j);
            }
        }
        for &(j, a, b, d) in &links[i] {
            let nb = NeighborValue { index: j, omega_sec: 0.0, q_ratio: 0.0, delta: 0.0, local_ok: false, a, b, d };
            if opts.gains.dynamic_weights(&nb, island_of[i] == island_of[j]).d != 0.0 {
                uf.union(i, j);
            }
        }
    }
    let mut reference = vec![false; n];
    for g in uf.groups() {
        reference[g[0]] = true;
    }

    let nominal_voltage =
        if n == 0 { crate::nominal_peak_phase_voltage() } else { params.iter().map(|p| p.v_star).sum::<f64>() / n as f64 };
    let prob = Problem {
        topology,
        params,
        closed,
        opts,
        ibr_bus,
        island_of,
        islands,
        reference: reference.clone(),
        nominal_voltage,
        links,
    };

    let mut x: Vec<f64> = Vec::new();
    x.extend(reference.iter().filter(|r| !**r).map(|_| 0.0));
    x.extend(std::iter::repeat(0.0).take(n));
    if opts.voltage_dapi {
        x.extend(std::iter::repeat(0.0).take(n));
    }
    x.extend(params.iter().map(|p| p.v_star));
    let dim = x.len();

    let mut r = prob.residual(&x)?;
    let mut res = norm_inf(&r);
    let mut iterations = 0;
    while res > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(SteadyStateError::NotConverged { iterations, residual: res });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let h = 1e-7 * x[c].abs().max(1e-3);
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let rp = prob.residual(&xp)?;
            let rm = prob.residual(&xm)?;
            for row in 0..dim {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let step = jac
            .lu()
            .solve(&(-DVector::from_vec(r.clone())))
            .ok_or(SteadyStateError::NotConverged { iterations, residual: res })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            let tr = prob.residual(&trial)?;
            let tres = norm_inf(&tr);
            if tres < res || lambda < 1e-4 {
                x = trial;
                r = tr;
                res = tres;
                break;
            }
            lambda *= 0.5;
        }
    }

    let pt = prob.unpack(&x);
    let (p, q) = prob.powers(&pt)?;
    Ok((0..n)
        .map(|i| {
            let s = IbrState { delta: pt.delta[i], omega_sec: pt.omega_sec[i], e_sec: pt.e_sec[i] };
            SteadyIbr {
                p: p[i],
                q: q[i],
                f_hz: output_frequency(&params[i], &s, p[i]) / TWO_PI,
                v: pt.v[i],
                delta: pt.delta[i],
                omega_sec: pt.omega_sec[i],
                e_sec: pt.e_sec[i],
            }
        })
        .collect())
}
