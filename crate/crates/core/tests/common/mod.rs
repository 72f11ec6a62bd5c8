//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use voltctl::grid::{CaseBranch, CaseBus, CaseFile, Network, OltcSpec, ScSpec};
use voltctl::powerflow::Injections;
use voltctl::schedule::DaySchedule;

/// Random radial feeder with `n` buses: bus 0 is the root, every other bus
/// hangs off a random earlier one, branch direction and listing order are
/// shuffled.
pub fn random_radial<R: Rng>(rng: &mut R, n: usize) -> Network {
    let mut branches: Vec<CaseBranch> = (1..n)
        .map(|i| {
            let parent = rng.random_range(0..i);
            let (from, to) = if rng.random_bool(0.5) { (parent, i) } else { (i, parent) };
            CaseBranch {
                from,
                to,
                r_pu: rng.random_range(0.002..0.03),
                x_pu: rng.random_range(0.002..0.03),
            }
        })
        .collect();
    for i in (1..branches.len()).rev() {
        branches.swap(i, rng.random_range(0..=i));
    }
    Network::from_case(CaseFile {
        name: "random".into(),
        base_mva: 1.0,
        base_kv: 12.66,
        v_ref: 1.0,
        v_min: 0.95,
        v_max: 1.05,
        buses: (0..n)
            .map(|id| CaseBus {
                id,
                region: 0,
                p_mw: 0.0,
                q_mvar: 0.0,
            })
            .collect(),
        branches,
        oltc: OltcSpec::default(),
        scs: Vec::new(),
        pvs: Vec::new(),
        regions: 1,
    })
}

/// Random injections in p.u.; mostly load, with some generation.
pub fn random_injections<R: Rng>(rng: &mut R, n: usize) -> Injections {
    let mut inj = Injections::zeros(n);
    for i in 1..n {
        inj.p[i] = rng.random_range(-0.15..0.05);
        inj.q[i] = rng.random_range(-0.1..0.05);
    }
    inj
}

pub fn ybus(net: &Network) -> DMatrix<Complex64> {
    let n = net.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &net.branches {
        let yk = Complex64::new(1.0, 0.0) / Complex64::new(br.r_pu, br.x_pu);
        y[(br.from, br.from)] += yk;
        y[(br.to, br.to)] += yk;
        y[(br.from, br.to)] -= yk;
        y[(br.to, br.from)] -= yk;
    }
    y
}

/// Full Newton-Raphson on the polar nodal balance equations with the root
/// as slack. Returns (|V|, angle) or `None` without convergence.
pub fn newton(net: &Network, inj: &Injections, v_root: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = net.buses.len();
    let y = ybus(net);
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    vm[0] = v_root;
    let m = n - 1;
    let calc = |vm: &[f64], va: &[f64]| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let t = va[i] - va[k];
                p[i] += vm[i] * vm[k] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin());
                q[i] += vm[i] * vm[k] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos());
            }
        }
        (p, q)
    };
    for _ in 0..50 {
        let (p, q) = calc(&vm, &va);
        let mut f = DVector::zeros(2 * m);
        for i in 1..n {
            f[i - 1] = inj.p[i] - p[i];
            f[m + i - 1] = inj.q[i] - q[i];
        }
        if f.amax() < 1e-13 {
            return Some((vm, va));
        }
        // Jacobian of (P, Q) w.r.t. (angle, |V|) over non-root buses.
        let mut j = DMatrix::zeros(2 * m, 2 * m);
        for i in 1..n {
            for k in 1..n {
                let (r, c) = (i - 1, k - 1);
                if i == k {
                    j[(r, c)] = -q[i] - b[(i, i)] * vm[i] * vm[i];
                    j[(r, m + c)] = p[i] / vm[i] + g[(i, i)] * vm[i];
                    j[(m + r, c)] = p[i] - g[(i, i)] * vm[i] * vm[i];
                    j[(m + r, m + c)] = q[i] / vm[i] - b[(i, i)] * vm[i];
                } else {
                    let t = va[i] - va[k];
                    let (s, co) = t.sin_cos();
                    j[(r, c)] = vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * co);
                    j[(r, m + c)] = vm[i] * (g[(i, k)] * co + b[(i, k)] * s);
                    j[(m + r, c)] = -vm[i] * vm[k] * (g[(i, k)] * co + b[(i, k)] * s);
                    j[(m + r, m + c)] = vm[i] * (g[(i, k)] * s - b[(i, k)] * co);
                }
            }
        }
        let dx = j.lu().solve(&f)?;
        for i in 1..n {
            va[i] += dx[i - 1];
            vm[i] += dx[m + i - 1];
        }
    }
    None
}

/// Rule-by-rule grid-code check written directly from the definitions.
pub fn brute_force_valid(s: &DaySchedule, oltc: &OltcSpec, scs: &[ScSpec], carried: i32) -> bool {
    if s.oltc_taps.len() != 24 || s.sc_intervals.len() != scs.len() {
        return false;
    }
    let half = (oltc.positions / 2) as i32;
    if s.oltc_taps.iter().any(|t| *t < -half || *t > half) {
        return false;
    }
    let mut changes = usize::from(s.oltc_taps[0] != carried);
    for t in 1..24 {
        if s.oltc_taps[t] != s.oltc_taps[t - 1] {
            changes += 1;
        }
    }
    if changes > oltc.daily_change_limit {
        return false;
    }
    for (iv, sc) in s.sc_intervals.iter().zip(scs) {
        if let Some((on, off)) = *iv {
            // Every ON hour must be inside the window, and the interval non-empty.
            if on >= off {
                return false;
            }
            if !(on..off).all(|h| h >= sc.window.0 && h < sc.window.1) {
                return false;
            }
        }
    }
    true
}

/// Schedules near the validity boundary: few or many tap changes, taps
/// occasionally out of range, intervals around the windows.
pub fn fuzz_schedule<R: Rng>(rng: &mut R, oltc: &OltcSpec, n_sc: usize) -> DaySchedule {
    let half = (oltc.positions / 2) as i32;
    let changes = rng.random_range(0..=oltc.daily_change_limit + 2);
    let mut taps = vec![rng.random_range(-half..=half); 24];
    for _ in 0..changes {
        let h = rng.random_range(0..24);
        let v = if rng.random_bool(0.03) {
            if rng.random_bool(0.5) { half + 1 } else { -half - 1 }
        } else {
            rng.random_range(-half..=half)
        };
        for t in taps.iter_mut().skip(h) {
            *t = v;
        }
    }
    let sc = (0..n_sc)
        .map(|_| {
            if rng.random_bool(0.3) {
                None
            } else {
                let on = rng.random_range(0..25);
                let off = rng.random_range(0..26);
                Some((on, off))
            }
        })
        .collect();
    DaySchedule {
        oltc_taps: taps,
        sc_intervals: sc,
    }
}
