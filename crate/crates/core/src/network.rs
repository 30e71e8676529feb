//! Quasi-stationary phasor network: admittance assembly and per-island solves.
//!
//! Inverter buses are ideal voltage sources `V∠δ`. Remaining buses are solved
//! from nodal current balance, linearly when every load is constant impedance
//! and by Newton iteration when constant-power loads are present. Powers use
//! `S = V·conj(I)` on the single-phase-equivalent phasors with the generator
//! sign convention for source injections.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::NetworkError;
use crate::topology::{LoadModel, LoadSpec, NmgTopology};

/// Below this fraction of nominal voltage a constant-power load is converted to
/// constant impedance, which keeps soft-start from zero voltage solvable.
pub const LOW_VOLTAGE_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Current-mismatch tolerance in per unit of the island's load base.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 50 }
    }
}

/// Dense nodal admittance matrix of one island.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    /// Topology bus indices, in matrix order.
    pub buses: Vec<usize>,
    pub y: DMatrix<Complex64>,
    /// Nominal complex power of constant-power loads per matrix bus; these
    /// loads are not stamped into `y`.
    pub constant_power: Vec<Complex64>,
    pub nominal_voltage: f64,
}

impl AdmittanceMatrix {
    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn local_index(&self, bus: usize) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }
}

/// Shunt admittance drawing `(p, q)` at `v_nominal`.
pub fn load_admittance(p: f64, q: f64, v_nominal: f64) -> Complex64 {
    Complex64::new(p, -q) / (v_nominal * v_nominal)
}

/// Complex power drawn by `load` at voltage magnitude `v`.
pub fn load_power(load: &LoadSpec, v: f64, v_nominal: f64) -> Complex64 {
    let s_nom = Complex64::new(load.p_nominal, load.q_nominal);
    match load.model {
        LoadModel::ConstantImpedance => s_nom * (v * v) / (v_nominal * v_nominal),
        LoadModel::ConstantPower => {
            let v_thr = LOW_VOLTAGE_FRACTION * v_nominal;
            if v >= v_thr {
                s_nom
            } else {
                s_nom * (v * v) / (v_thr * v_thr)
            }
        }
    }
}

pub(crate) fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(r, x)
}

/// Assemble the island Y-bus from conducting line series admittances and
/// constant-impedance load shunts.
pub fn build_admittance(
    topology: &NmgTopology,
    closed: &[bool],
    island: &[usize],
    nominal_voltage: f64,
) -> Result<AdmittanceMatrix, NetworkError> {
    let n = island.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut constant_power = vec![Complex64::new(0.0, 0.0); n];
    let local = |bus: usize| island.iter().position(|&b| b == bus);

    for (k, &bus) in island.iter().enumerate() {
        if let Some(load) = &topology.buses[bus].load {
            match load.model {
                LoadModel::ConstantImpedance => {
                    y[(k, k)] += load_admittance(load.p_nominal, load.q_nominal, nominal_voltage);
                }
                LoadModel::ConstantPower => {
                    constant_power[k] = Complex64::new(load.p_nominal, load.q_nominal);
                }
            }
        }
    }

    for (l, line) in topology.lines.iter().enumerate() {
        if !topology.line_conducts(l, closed) {
            continue;
        }
        let (Some(a), Some(b)) = (
            topology.bus_index(&line.from_bus).and_then(local),
            topology.bus_index(&line.to_bus).and_then(local),
        ) else {
            continue;
        };
        if line.resistance == 0.0 && line.reactance == 0.0 {
            return Err(NetworkError::ZeroImpedance(line.id.0.clone()));
        }
        let ys = series_admittance(line.resistance, line.reactance);
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }

    Ok(AdmittanceMatrix { buses: island.to_vec(), y, constant_power, nominal_voltage })
}

/// Voltages and source injections of one island, in admittance-matrix order.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandSolution {
    pub voltages: Vec<Complex64>,
    /// Complex power delivered by the source at each bus; zero at non-source
    /// buses.
    pub injections: Vec<Complex64>,
}

fn cp_current(s_nom: Complex64, v: Complex64, v_nominal: f64) -> Complex64 {
    // current drawn by a constant-power load, with low-voltage conversion
    let v_thr = LOW_VOLTAGE_FRACTION * v_nominal;
    if s_nom == Complex64::new(0.0, 0.0) {
        return Complex64::new(0.0, 0.0);
    }
    if v.norm() >= v_thr {
        (s_nom / v).conj()
    } else {
        s_nom.conj() * v / (v_thr * v_thr)
    }
}

/// Solve one island given source phasors per matrix bus (`None` for buses
/// without an inverter).
pub fn solve_island(
    adm: &AdmittanceMatrix,
    sources: &[Option<Complex64>],
    options: &NewtonOptions,
) -> Result<IslandSolution, NetworkError> {
    let n = adm.len();
    assert_eq!(sources.len(), n, "one source slot per island bus");
    let zero = Complex64::new(0.0, 0.0);

    let src: Vec<usize> = (0..n).filter(|&k| sources[k].is_some()).collect();
    let unk: Vec<usize> = (0..n).filter(|&k| sources[k].is_none()).collect();

    if src.is_empty() {
        // row sums of Y are the load shunts
        let loaded = (0..n).any(|k| {
            let shunt: Complex64 = (0..n).map(|j| adm.y[(k, j)]).sum();
            shunt.norm() > 1e-12 * adm.y[(k, k)].norm() || adm.constant_power[k] != zero
        });
        if loaded {
            return Err(NetworkError::NoSource);
        }
        return Ok(IslandSolution { voltages: vec![zero; n], injections: vec![zero; n] });
    }

    let mut v: Vec<Complex64> = sources.iter().map(|s| s.unwrap_or(zero)).collect();

    if !unk.is_empty() {
        let m = unk.len();
        let y_uu = DMatrix::from_fn(m, m, |r, c| adm.y[(unk[r], unk[c])]);
        let rhs = DVector::from_fn(m, |r, _| {
            -src.iter().map(|&s| adm.y[(unk[r], s)] * v[s]).sum::<Complex64>()
        });
        let has_cp = unk.iter().any(|&k| adm.constant_power[k] != zero);

        // linear solve; with constant-power loads treated as nominal impedance
        // this is also the Newton starting point
        let mut y0 = y_uu.clone();
        if has_cp {
            for (r, &k) in unk.iter().enumerate() {
                let s = adm.constant_power[k];
                y0[(r, r)] += s.conj() / (adm.nominal_voltage * adm.nominal_voltage);
            }
        }
        let v0 = y0.lu().solve(&rhs).ok_or(NetworkError::Singular)?;
        for (r, &k) in unk.iter().enumerate() {
            v[k] = v0[r];
        }

        if has_cp {
            newton_constant_power(adm, &unk, &y_uu, &rhs, &mut v, options)?;
        }
    }

    let mut injections = vec![zero; n];
    for &k in &src {
        let i_net: Complex64 = (0..n).map(|j| adm.y[(k, j)] * v[j]).sum();
        let load = cp_current(adm.constant_power[k], v[k], adm.nominal_voltage);
        injections[k] = v[k] * (i_net + load).conj();
    }
    Ok(IslandSolution { voltages: v, injections })
}

fn newton_constant_power(
    adm: &AdmittanceMatrix,
    unk: &[usize],
    y_uu: &DMatrix<Complex64>,
    rhs: &DVector<Complex64>,
    v: &mut [Complex64],
    options: &NewtonOptions,
) -> Result<(), NetworkError> {
    let m = unk.len();
    let v_nom = adm.nominal_voltage;
    let v_thr = LOW_VOLTAGE_FRACTION * v_nom;
    let s_base: f64 = adm.constant_power.iter().map(|s| s.norm()).sum::<f64>().max(1.0);
    let i_base = s_base / v_nom;

    let mismatch = |v: &[Complex64]| -> DVector<Complex64> {
        DVector::from_fn(m, |r, _| {
            let k = unk[r];
            let lin: Complex64 = (0..m).map(|c| y_uu[(r, c)] * v[unk[c]]).sum();
            lin - rhs[r] + cp_current(adm.constant_power[k], v[k], v_nom)
        })
    };

    let mut f = mismatch(v);
    for _ in 0..options.max_iterations {
        let worst = f.iter().map(|c| c.norm()).fold(0.0, f64::max) / i_base;
        if worst < options.tolerance {
            return Ok(());
        }
        // F(V) = A·V + B·conj(V) locally; real Jacobian in (Re V, Im V).
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for r in 0..m {
            for c in 0..m {
                let mut a = y_uu[(r, c)];
                let mut b = Complex64::new(0.0, 0.0);
                if r == c {
                    let k = unk[r];
                    let s = adm.constant_power[k];
                    if v[k].norm() >= v_thr {
                        b = -s.conj() / (v[k].conj() * v[k].conj());
                    } else {
                        a += s.conj() / (v_thr * v_thr);
                    }
                }
                jac[(r, c)] = a.re + b.re;
                jac[(r, m + c)] = -a.im + b.im;
                jac[(m + r, c)] = a.im + b.im;
                jac[(m + r, m + c)] = a.re - b.re;
            }
        }
        let neg_f = DVector::from_fn(2 * m, |i, _| if i < m { -f[i].re } else { -f[i - m].im });
        let dx = jac.lu().solve(&neg_f).ok_or(NetworkError::Singular)?;
        for r in 0..m {
            v[unk[r]] += Complex64::new(dx[r], dx[m + r]);
        }
        f = mismatch(v);
    }
    let worst = f.iter().map(|c| c.norm()).fold(0.0, f64::max) / i_base;
    if worst < options.tolerance {
        Ok(())
    } else {
        Err(NetworkError::NewtonDiverged { iterations: options.max_iterations, mismatch: worst })
    }
}

/// Power bookkeeping of one solved island, computed from the line and load
/// lists rather than from the admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    pub injected: f64,
    pub consumed: f64,
    pub losses: f64,
}

impl PowerBalance {
    pub fn residual(&self) -> f64 {
        self.injected - self.consumed - self.losses
    }

    /// Residual relative to consumed power, with a 1 W floor so a de-energized
    /// island compares against an absolute scale.
    pub fn relative_residual(&self) -> f64 {
        self.residual().abs() / self.consumed.abs().max(1.0)
    }
}

pub fn power_balance(
    topology: &NmgTopology,
    closed: &[bool],
    adm: &AdmittanceMatrix,
    sol: &IslandSolution,
) -> PowerBalance {
    let injected: f64 = sol.injections.iter().map(|s| s.re).sum();
    let consumed: f64 = adm
        .buses
        .iter()
        .enumerate()
        .filter_map(|(k, &bus)| {
            topology.buses[bus]
                .load
                .as_ref()
                .map(|load| load_power(load, sol.voltages[k].norm(), adm.nominal_voltage).re)
        })
        .sum();
    let mut losses = 0.0;
    for (l, line) in topology.lines.iter().enumerate() {
        if !topology.line_conducts(l, closed) {
            continue;
        }
        let a = topology.bus_index(&line.from_bus).and_then(|b| adm.local_index(b));
        let b = topology.bus_index(&line.to_bus).and_then(|b| adm.local_index(b));
        if let (Some(a), Some(b)) = (a, b) {
            let i = (sol.voltages[a] - sol.voltages[b]) * series_admittance(line.resistance, line.reactance);
            losses += i.norm_sqr() * line.resistance;
        }
    }
    PowerBalance { injected, consumed, losses }
}
