//! Reference implementations and random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;
use voltvar::{Bus, FeederNetwork, Line, VarLimits};

/// Random tree: bus `k` hangs off a uniformly chosen earlier bus.
pub fn random_tree(rng: &mut StdRng, n: usize) -> FeederNetwork {
    let lines = (1..=n)
        .map(|k| {
            Line::new(
                rng.gen_range(0..k),
                k,
                rng.gen_range(0.002..0.05),
                rng.gen_range(0.002..0.05),
            )
        })
        .collect();
    FeederNetwork::new(random_buses(rng, n), lines, 1.0).unwrap()
}

/// Random tree plus `extra` chords between distinct buses.
pub fn random_meshed(rng: &mut StdRng, n: usize, extra: usize) -> FeederNetwork {
    let mut lines: Vec<Line> = (1..=n)
        .map(|k| {
            Line::new(
                rng.gen_range(0..k),
                k,
                rng.gen_range(0.002..0.05),
                rng.gen_range(0.002..0.05),
            )
        })
        .collect();
    while lines.len() < n + extra {
        let a = rng.gen_range(0..=n);
        let b = rng.gen_range(0..=n);
        if a != b {
            lines.push(Line::new(a, b, rng.gen_range(0.002..0.05), rng.gen_range(0.002..0.05)));
        }
    }
    FeederNetwork::new(random_buses(rng, n), lines, 1.0).unwrap()
}

fn random_buses(rng: &mut StdRng, n: usize) -> Vec<Bus> {
    let mut buses = vec![Bus::new(0)];
    for id in 1..=n {
        let mut b = Bus::new(id);
        b.p = -rng.gen_range(0.0..0.3);
        b.qc = rng.gen_range(0.0..0.15);
        b.q_min = -rng.gen_range(0.0..0.3);
        b.q_max = rng.gen_range(0.0..0.3);
        b.c = rng.gen_range(0.0..1.0);
        buses.push(b);
    }
    buses
}

/// Reduced reactance Laplacian summed line by line.
pub fn laplacian_direct(net: &FeederNetwork) -> DMatrix<f64> {
    let n = net.n();
    let mut full = DMatrix::zeros(n + 1, n + 1);
    for l in net.lines() {
        let y = 1.0 / l.x;
        full[(l.from, l.from)] += y;
        full[(l.to, l.to)] += y;
        full[(l.from, l.to)] -= y;
        full[(l.to, l.from)] -= y;
    }
    full.view((1, 1), (n, n)).into_owned()
}

/// Solves the branch equations of a radial feeder directly: per-bus balance of
/// line flows and `V_from - V_to = r P + x Q` per line, as one dense system.
pub fn lindistflow_branch_solve(net: &FeederNetwork, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let n = net.n();
    let lines = net.lines();
    assert_eq!(lines.len(), n, "radial feeders only");
    let dim = 3 * n;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    // Unknowns: P (0..n), Q (n..2n), V of buses 1..=n (2n..3n).
    let v_col = |bus: usize| 2 * n + bus - 1;
    for (l, line) in lines.iter().enumerate() {
        for (bus, sign) in [(line.from, 1.0), (line.to, -1.0)] {
            if bus > 0 {
                a[(bus - 1, l)] += sign;
                a[(n + bus - 1, n + l)] += sign;
            }
        }
        let row = 2 * n + l;
        a[(row, l)] = -line.r;
        a[(row, n + l)] = -line.x;
        if line.from > 0 {
            a[(row, v_col(line.from))] += 1.0;
        } else {
            rhs[row] -= net.v0();
        }
        if line.to > 0 {
            a[(row, v_col(line.to))] -= 1.0;
        } else {
            rhs[row] += net.v0();
        }
    }
    for j in 0..n {
        rhs[j] = p[j];
        rhs[n + j] = q[j];
    }
    let sol = a.lu().solve(&rhs).expect("branch system is nonsingular");
    sol.rows(2 * n, n).into_owned()
}

/// Exhaustive active-set search for `min 1/2 q'Hq + h'q` over a box.
pub fn brute_force_box_qp(hess: &DMatrix<f64>, h: &DVector<f64>, lim: &VarLimits) -> DVector<f64> {
    let n = h.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut q = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == 2).collect();
        for j in 0..n {
            match state[j] {
                0 => q[j] = lim.q_min[j],
                1 => q[j] = lim.q_max[j],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let h_ff = DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -(h[i]
                    + (0..n)
                        .filter(|j| state[*j] != 2)
                        .map(|j| hess[(i, j)] * q[j])
                        .sum::<f64>())
            });
            let Some(chol) = h_ff.cholesky() else { continue };
            let sol = chol.solve(&rhs);
            if free
                .iter()
                .enumerate()
                .any(|(a, &i)| sol[a] < lim.q_min[i] - 1e-14 || sol[a] > lim.q_max[i] + 1e-14)
            {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                q[i] = sol[a].clamp(lim.q_min[i], lim.q_max[i]);
            }
        }
        let val = 0.5 * (q.transpose() * hess * &q)[(0, 0)] + h.dot(&q);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, q));
        }
    }
    best.expect("box is nonempty").1
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w = a * &v;
        let next = w.norm();
        v = w / next;
        if (next - lambda).abs() <= 1e-14 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}
