//! Reference computations written independently of the library code paths
//! they check: explicit index loops, scalar recursions and a hand-rolled SVD.

#![allow(dead_code)]

use plasticity_core::cbp::UtilityKind;
use plasticity_core::net::{Activation, Network};

/// Activation and derivative formulas written out again for the oracles.
pub fn act(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Tanh => z.tanh(),
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { slope } => {
            if z > 0.0 {
                z
            } else {
                slope * z
            }
        }
        Activation::Elu { alpha } => {
            if z > 0.0 {
                z
            } else {
                alpha * (z.exp() - 1.0)
            }
        }
        Activation::Swish => z / (1.0 + (-z).exp()),
        Activation::Linear => z,
    }
}

/// Forward pass by explicit triple loop; returns post-activations per layer.
pub fn naive_forward(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = x.to_vec();
    for layer in net.layers() {
        let mut next = vec![0.0; layer.fan_out()];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut z = layer.bias[o];
            for i in 0..layer.fan_in() {
                z += layer.weights[o * layer.fan_in() + i] * cur[i];
            }
            *slot = act(layer.activation, z);
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

/// Central finite-difference gradient of `loss(net)` with respect to every
/// weight and bias, in the same layout as `Gradients`.
pub fn fd_gradients(
    net: &Network,
    h: f64,
    loss: impl Fn(&Network) -> f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut probe = net.clone();
    let mut gw = Vec::new();
    let mut gb = Vec::new();
    for l in 0..net.layers().len() {
        let mut lw = vec![0.0; net.layers()[l].weights.len()];
        for (j, g) in lw.iter_mut().enumerate() {
            let orig = probe.layers()[l].weights[j];
            probe.layers_mut()[l].weights[j] = orig + h;
            let plus = loss(&probe);
            probe.layers_mut()[l].weights[j] = orig - h;
            let minus = loss(&probe);
            probe.layers_mut()[l].weights[j] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        let mut lb = vec![0.0; net.layers()[l].bias.len()];
        for (j, g) in lb.iter_mut().enumerate() {
            let orig = probe.layers()[l].bias[j];
            probe.layers_mut()[l].bias[j] = orig + h;
            let plus = loss(&probe);
            probe.layers_mut()[l].bias[j] = orig - h;
            let minus = loss(&probe);
            probe.layers_mut()[l].bias[j] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        gw.push(lw);
        gb.push(lb);
    }
    (gw, gb)
}

/// Singular values by one-sided Jacobi rotations on the columns of `a`
/// (`rows × cols`, row-major).
pub fn jacobi_singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| a[r * cols + c]).collect())
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|v| v * v).sum();
                let beta: f64 = u[q].iter().map(|v| v * v).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let up = u[p][k];
                    let uq = u[q][k];
                    u[p][k] = c * up - s * uq;
                    u[q][k] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    u.iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// `exp(H)` of normalized singular values, dropping values below `1e-12·max`.
pub fn entropy_rank(sv: &[f64]) -> f64 {
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let mut total = 0.0;
    for &s in sv {
        if s > 1e-12 * max {
            total += s;
        }
    }
    let mut h = 0.0;
    for &s in sv {
        if s > 1e-12 * max {
            let p = s / total;
            h -= p * p.ln();
        }
    }
    h.exp()
}

/// Scalar state of one unit in the utility recursions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitTrace {
    pub f: f64,
    pub f_hat: f64,
    pub u: f64,
    pub u_hat: f64,
    pub age: u64,
}

/// One step of the utility recursions for a single unit. `out_abs` is
/// `Σ_k |w_out|`, `in_abs` is `Σ_j |w_in|`, `draw` is the uniform sample used
/// by the random kind.
pub fn utility_step(
    s: &mut UnitTrace,
    kind: UtilityKind,
    eta: f64,
    h: f64,
    out_abs: f64,
    in_abs: f64,
    draw: f64,
) {
    s.age += 1;
    let corr = 1.0 - eta.powf(s.age as f64);
    let f_prev = s.f;
    s.f = eta * f_prev + (1.0 - eta) * h;
    s.f_hat = f_prev / corr;
    if kind == UtilityKind::Random {
        s.u = draw;
        s.u_hat = draw;
        return;
    }
    let y = match kind {
        UtilityKind::WeightMagnitude => out_abs,
        UtilityKind::Contribution => h.abs() * out_abs,
        UtilityKind::MeanCorrectedContribution => (h - s.f_hat).abs() * out_abs,
        UtilityKind::Adaptation => 1.0 / in_abs,
        UtilityKind::Overall => (h - s.f_hat).abs() * out_abs / in_abs,
        UtilityKind::Random => unreachable!(),
    };
    let u_prev = s.u;
    s.u = eta * u_prev + (1.0 - eta) * y;
    s.u_hat = u_prev / corr;
}

/// Relative error with an absolute floor so that tiny components compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}
