//! Reference math for cross-branch attention, latent injection and the two
//! noise-prediction losses. Plain loops in a fixed order; nothing here is
//! differentiable or trained.

use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of token features.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::dims("token matrices need at least one column"));
        }
        if values.len() != rows * cols {
            return Err(Error::dims(format!("{} values for a {rows}x{cols} matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token matrix has non-finite values"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Flat float tensor with its logical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl NoiseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::dims(format!("shape {shape:?} does not hold {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise tensor has non-finite values"));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How squared norms are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Numerically stable softmax of one row (max-subtracted).
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Attention weights `softmax(q kᵀ / √d)`, one row per query.
pub fn attention_weights(q: &TokenMatrix, k: &TokenMatrix) -> Result<TokenMatrix> {
    if q.cols != k.cols {
        return Err(Error::dims(format!("query width {} != key width {}", q.cols, k.cols)));
    }
    if k.rows == 0 {
        return Err(Error::dims("attention needs at least one key"));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Vec::with_capacity(q.rows * k.rows);
    for i in 0..q.rows {
        let logits: Vec<f64> = (0..k.rows)
            .map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        out.extend(softmax_row(&logits));
    }
    Ok(TokenMatrix {
        rows: q.rows,
        cols: k.rows,
        values: out,
    })
}

/// `softmax(q kᵀ / √d) v`.
pub fn mcaa_attention(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Result<TokenMatrix> {
    if k.rows != v.rows {
        return Err(Error::dims(format!("{} keys but {} values", k.rows, v.rows)));
    }
    let w = attention_weights(q, k)?;
    let mut out = TokenMatrix::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        for j in 0..k.rows {
            let a = w.get(i, j);
            for c in 0..v.cols {
                out.values[i * v.cols + c] += a * v.get(j, c);
            }
        }
    }
    Ok(out)
}

/// `z_mr + attn`, elementwise.
pub fn mr_inject(z_mr: &TokenMatrix, attn_albedo: &TokenMatrix) -> Result<TokenMatrix> {
    if z_mr.rows != attn_albedo.rows || z_mr.cols != attn_albedo.cols {
        return Err(Error::dims("latent and attention shapes differ"));
    }
    Ok(TokenMatrix {
        rows: z_mr.rows,
        cols: z_mr.cols,
        values: z_mr.values.iter().zip(&attn_albedo.values).map(|(a, b)| a + b).collect(),
    })
}

fn squared_error(a: &NoiseTensor, b: &NoiseTensor, reduction: Reduction) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::dims(format!("shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    if a.is_empty() {
        return Err(Error::dims("empty noise tensor"));
    }
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(match reduction {
        Reduction::Mean => s / a.len() as f64,
        Reduction::Sum => s,
    })
}

/// `MSE(eps, eps_mr) + MSE(eps, eps_albedo)`.
pub fn loss_l1(eps: &NoiseTensor, eps_mr: &NoiseTensor, eps_albedo: &NoiseTensor) -> Result<f64> {
    loss_l1_with(eps, eps_mr, eps_albedo, Reduction::Mean)
}

pub fn loss_l1_with(eps: &NoiseTensor, eps_mr: &NoiseTensor, eps_albedo: &NoiseTensor, reduction: Reduction) -> Result<f64> {
    Ok(squared_error(eps, eps_mr, reduction)? + squared_error(eps, eps_albedo, reduction)?)
}

pub const DEFAULT_ALPHA: f64 = 2.0;

/// `alpha * MSE(eps, eps_albedo)`.
pub fn loss_l2(eps: &NoiseTensor, eps_albedo: &NoiseTensor, alpha: f64) -> Result<f64> {
    loss_l2_with(eps, eps_albedo, alpha, Reduction::Mean)
}

pub fn loss_l2_with(eps: &NoiseTensor, eps_albedo: &NoiseTensor, alpha: f64, reduction: Reduction) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok(alpha * squared_error(eps, eps_albedo, reduction)?)
}

/// Analytic gradient of [`loss_l2`] (mean reduction) with respect to
/// `eps_albedo`: `2 alpha (eps_albedo - eps) / n`.
pub fn loss_l2_grad(eps: &NoiseTensor, eps_albedo: &NoiseTensor, alpha: f64) -> Result<Vec<f64>> {
    if eps.shape != eps_albedo.shape {
        return Err(Error::dims("shapes differ"));
    }
    let n = eps.len() as f64;
    Ok(eps
        .values
        .iter()
        .zip(&eps_albedo.values)
        .map(|(e, a)| 2.0 * alpha * (a - e) / n)
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestCheck {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

/// Runs the kernel invariants on seeded random inputs.
pub fn selftest(seed: u64) -> Vec<SelftestCheck> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mat = |r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        TokenMatrix::new(r, c, (0..r * c).map(|_| rng.random_range(-3.0..3.0)).collect()).expect("finite")
    };
    let mut checks = Vec::new();
    let mut push = |name: &str, worst: f64, tolerance: f64| {
        checks.push(SelftestCheck {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
        })
    };

    let (mut row_sum, mut hull, mut shift) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let q = mat(8, 16, &mut rng);
        let k = mat(6, 16, &mut rng);
        let v = mat(6, 5, &mut rng);
        let w = attention_weights(&q, &k).expect("shapes");
        for i in 0..w.rows() {
            row_sum = row_sum.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let out = mcaa_attention(&q, &k, &v).expect("shapes");
        for c in 0..v.cols() {
            let lo = (0..v.rows()).map(|j| v.get(j, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..v.rows()).map(|j| v.get(j, c)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..out.rows() {
                let x = out.get(i, c);
                hull = hull.max(lo - x).max(x - hi);
            }
        }
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        for (a, b) in softmax_row(&logits).iter().zip(softmax_row(&shifted)) {
            shift = shift.max((a - b).abs());
        }
    }
    push("softmax_row_sum", row_sum, 1e-9);
    push("attention_convex_hull", hull.max(0.0), 1e-9);
    push("softmax_shift_invariance", shift, 1e-12);

    let noise = |rng: &mut rand_chacha::ChaCha8Rng| {
        NoiseTensor::new(vec![4, 8], (0..32).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("finite")
    };
    let (mut split, mut linear, mut grad) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (e, a, b) = (noise(&mut rng), noise(&mut rng), noise(&mut rng));
        let l1 = loss_l1(&e, &a, &b).expect("shapes");
        let parts = loss_l2(&e, &a, 1.0).expect("shapes") + loss_l2(&e, &b, 1.0).expect("shapes");
        split = split.max((l1 - parts).abs());
        linear = linear.max((loss_l2(&e, &b, 2.0).unwrap() - 2.0 * loss_l2(&e, &b, 1.0).unwrap()).abs());
        let g = loss_l2_grad(&e, &b, DEFAULT_ALPHA).expect("shapes");
        for (idx, gi) in g.iter().enumerate() {
            grad = grad.max((finite_difference(&e, &b, DEFAULT_ALPHA, idx, 1e-4) - gi).abs());
        }
    }
    push("l1_equals_sum_of_l2", split, 1e-9);
    push("l2_alpha_linearity", linear, 0.0);
    push("l2_gradient_central_difference", grad, 1e-5);
    checks
}

/// Central difference of [`loss_l2`] along one element of `eps_albedo`.
pub fn finite_difference(eps: &NoiseTensor, eps_albedo: &NoiseTensor, alpha: f64, index: usize, h: f64) -> f64 {
    let mut plus = eps_albedo.clone();
    let mut minus = eps_albedo.clone();
    plus.values[index] += h;
    minus.values[index] -= h;
    (loss_l2(eps, &plus, alpha).expect("shapes") - loss_l2(eps, &minus, alpha).expect("shapes")) / (2.0 * h)
}
