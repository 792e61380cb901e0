//! Textbook one-dimensional TMLE for the average treatment effect: clever
//! covariate `A/g − (1−A)/(1−g)` used as is, no normalization.

pub struct ClassicResult {
    pub estimate: f64,
    pub qbar0: Vec<f64>,
    pub qbar1: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub iterations: usize,
    pub solved: bool,
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Newton on `Σ h (y − expit(off + ε h)) = 0`.
fn solve_epsilon(y: &[f64], off: &[f64], h: &[f64]) -> f64 {
    let mut eps = 0.0;
    for _ in 0..200 {
        let (mut s, mut info) = (0.0, 0.0);
        for i in 0..y.len() {
            let p = expit(off[i] + eps * h[i]);
            s += h[i] * (y[i] - p);
            info += h[i] * h[i] * p * (1.0 - p);
        }
        let step = s / info;
        eps += step;
        if step.abs() < 1e-15 * (1.0 + eps.abs()) {
            break;
        }
    }
    eps
}

/// Mean and `n − 1` standard deviation of the ATE influence curve.
pub fn eic_moments(a: &[u8], y: &[f64], q0: &[f64], q1: &[f64], g: &[f64]) -> (f64, f64) {
    let n = y.len();
    let psi = (0..n).map(|i| q1[i] - q0[i]).sum::<f64>() / n as f64;
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let (h, q) = if a[i] == 1 { (1.0 / g[i], q1[i]) } else { (-1.0 / (1.0 - g[i]), q0[i]) };
            h * (y[i] - q) + q1[i] - q0[i] - psi
        })
        .collect();
    let m = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    (m, sd)
}

pub fn ate_tmle(a: &[u8], y: &[f64], q0: &[f64], q1: &[f64], g: &[f64], q_lo: f64, q_hi: f64) -> ClassicResult {
    let n = y.len();
    let mut q0 = q0.to_vec();
    let mut q1 = q1.to_vec();
    let h1: Vec<f64> = g.iter().map(|g| 1.0 / g).collect();
    let h0: Vec<f64> = g.iter().map(|g| -1.0 / (1.0 - g)).collect();
    let h_obs: Vec<f64> = (0..n).map(|i| if a[i] == 1 { h1[i] } else { h0[i] }).collect();
    let mut epsilons = Vec::new();
    let mut solved = false;
    let mut last_eps = f64::INFINITY;
    for _ in 0..=100 {
        let (m, sd) = eic_moments(a, y, &q0, &q1, g);
        if m == 0.0 || m.abs() < sd / n as f64 {
            solved = true;
            break;
        }
        if last_eps.abs() < 1e-12 || epsilons.len() == 100 {
            break;
        }
        let off: Vec<f64> = (0..n).map(|i| logit(if a[i] == 1 { q1[i] } else { q0[i] })).collect();
        let eps = solve_epsilon(y, &off, &h_obs);
        for i in 0..n {
            q1[i] = expit(logit(q1[i]) + eps * h1[i]).clamp(q_lo, q_hi);
            q0[i] = expit(logit(q0[i]) + eps * h0[i]).clamp(q_lo, q_hi);
        }
        epsilons.push(eps);
        last_eps = eps;
    }
    let estimate = (0..n).map(|i| q1[i] - q0[i]).sum::<f64>() / n as f64;
    ClassicResult { estimate, iterations: epsilons.len(), qbar0: q0, qbar1: q1, epsilons, solved }
}
