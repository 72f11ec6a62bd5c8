//! Steady-state AC power flow for radial feeders.
//!
//! The solver is a backward/forward current sweep over the BFS tree. The
//! bus-injection mismatch used for convergence and reported in
//! [`PfSolution::max_mismatch`] is the polar form of the nodal equations,
//! evaluated by [`residual`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Network, OltcSpec};

/// Voltage magnitude below which a sweep iterate is treated as collapse.
const COLLAPSE_PU: f64 = 0.5;

/// Nodal injections in p.u. on the network's MVA base. Root entries are
/// ignored by the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Root voltage for a tap position: `v_ref + tap * step`.
pub fn root_voltage_from_tap(tap: i32, oltc: &OltcSpec, v_ref: f64) -> Result<f64> {
    if !oltc.contains(tap) {
        return Err(Error::TapOutOfRange {
            tap,
            half: oltc.half_range(),
        });
    }
    Ok(v_ref + tap as f64 * oltc.step_pu)
}

/// Combines loads and device outputs into nodal injections (p.u.).
///
/// `loads_p`/`loads_q` are per bus (MW/MVAr), `pv_p`/`pv_q` per PV unit and
/// `sc_on` per capacitor, all in the order of the network's device lists.
pub fn assemble_injections(
    net: &Network,
    loads_p: &[f64],
    loads_q: &[f64],
    pv_p: &[f64],
    pv_q: &[f64],
    sc_on: &[bool],
) -> Result<Injections> {
    let n = net.bus_count();
    check_len("active loads", n, loads_p.len())?;
    check_len("reactive loads", n, loads_q.len())?;
    check_len("PV active output", net.pvs.len(), pv_p.len())?;
    check_len("PV reactive output", net.pvs.len(), pv_q.len())?;
    check_len("SC status", net.scs.len(), sc_on.len())?;

    let mut p: Vec<f64> = loads_p.iter().map(|&x| -x).collect();
    let mut q: Vec<f64> = loads_q.iter().map(|&x| -x).collect();
    for (k, pv) in net.pvs.iter().enumerate() {
        p[pv.bus] += pv_p[k];
        q[pv.bus] += pv_q[k];
    }
    for (k, sc) in net.scs.iter().enumerate() {
        if sc_on[k] {
            q[sc.bus] += sc.q_mvar;
        }
    }
    let base = net.base_mva;
    for x in p.iter_mut().chain(q.iter_mut()) {
        *x /= base;
    }
    Ok(Injections { p, q })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

pub fn solve_powerflow(net: &Network, inj: &Injections, v_root: f64) -> Result<PfSolution> {
    solve_powerflow_with(net, inj, v_root, &PfConfig::default())
}

pub fn solve_powerflow_with(
    net: &Network,
    inj: &Injections,
    v_root: f64,
    cfg: &PfConfig,
) -> Result<PfSolution> {
    let n = net.bus_count();
    check_len("active injections", n, inj.p.len())?;
    check_len("reactive injections", n, inj.q.len())?;
    if !(0.8..=1.2).contains(&v_root) {
        return Err(Error::RootVoltage(v_root));
    }
    if inj.p.iter().chain(inj.q.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("injections"));
    }

    let tree = net.tree();
    let z: Vec<Complex64> = net
        .branches
        .iter()
        .map(|b| Complex64::new(b.r_pu, b.x_pu))
        .collect();
    let s: Vec<Complex64> = (0..n).map(|i| Complex64::new(inj.p[i], inj.q[i])).collect();

    let mut v = vec![Complex64::new(v_root, 0.0); n];
    let mut current = vec![Complex64::new(0.0, 0.0); n];
    let mut mismatch = f64::INFINITY;

    for it in 1..=cfg.max_iterations {
        // Backward: branch current into each bus' subtree, from parent side.
        for i in 0..n {
            current[i] = if i == 0 { Complex64::new(0.0, 0.0) } else { -(s[i] / v[i]).conj() };
        }
        for &i in tree.order.iter().rev() {
            if let Some((parent, _)) = tree.parent[i] {
                let c = current[i];
                current[parent] += c;
            }
        }
        // Forward: voltage drop along each branch.
        for &i in tree.order.iter().skip(1) {
            let (parent, k) = tree.parent[i].expect("non-root bus has a parent");
            v[i] = v[parent] - z[k] * current[i];
            if v[i].norm() < COLLAPSE_PU || !v[i].norm().is_finite() {
                return Err(Error::Divergence { bus: i, v: v[i].norm() });
            }
        }

        let sol = PfSolution {
            v_mag: v.iter().map(|x| x.norm()).collect(),
            v_ang: v.iter().map(|x| x.arg()).collect(),
            iterations: it,
            max_mismatch: 0.0,
        };
        mismatch = residual(net, &sol, inj);
        if mismatch <= cfg.tolerance {
            return Ok(PfSolution {
                max_mismatch: mismatch,
                ..sol
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        mismatch,
    })
}

/// Largest absolute mismatch of the polar bus-injection equations over all
/// non-root buses:
///
/// `P_i = V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)` and
/// `Q_i = V_i Σ_j V_j (G_ij sin θ_ij − B_ij cos θ_ij)`.
pub fn residual(net: &Network, sol: &PfSolution, inj: &Injections) -> f64 {
    let n = net.bus_count();
    // Sparse admittance: diagonal plus one off-diagonal pair per branch.
    let mut g_diag = vec![0.0; n];
    let mut b_diag = vec![0.0; n];
    let mut p_calc = vec![0.0; n];
    let mut q_calc = vec![0.0; n];
    for br in &net.branches {
        let den = br.r_pu * br.r_pu + br.x_pu * br.x_pu;
        let (g, b) = (br.r_pu / den, -br.x_pu / den);
        g_diag[br.from] += g;
        b_diag[br.from] += b;
        g_diag[br.to] += g;
        b_diag[br.to] += b;
        // Off-diagonal entries are -y.
        for (i, j) in [(br.from, br.to), (br.to, br.from)] {
            let th = sol.v_ang[i] - sol.v_ang[j];
            let (sin, cos) = th.sin_cos();
            let vv = sol.v_mag[i] * sol.v_mag[j];
            p_calc[i] += vv * (-g * cos + -b * sin);
            q_calc[i] += vv * (-g * sin - -b * cos);
        }
    }
    let mut worst: f64 = 0.0;
    for i in 1..n {
        let v2 = sol.v_mag[i] * sol.v_mag[i];
        let p = p_calc[i] + v2 * g_diag[i];
        let q = q_calc[i] - v2 * b_diag[i];
        worst = worst.max((p - inj.p[i]).abs()).max((q - inj.q[i]).abs());
    }
    worst
}
