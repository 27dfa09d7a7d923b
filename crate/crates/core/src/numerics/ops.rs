use super::{Dual, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_COEF: f64 = 0.044_715;
// sqrt(2/pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

fn require_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `a[m×k] · b[k×n]`
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×n] · b[k×n]ᵀ`
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for t in 0..k {
            let brow = &b[t * n..(t + 1) * n];
            out[i * k + t] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[m×k]ᵀ · b[m×n]`
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[t * n..(t + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let n = g.cols();
    let mut out = vec![0.0; n];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Dual> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let out = Tensor::new(vec![m, n], mm(a.data(), b.data(), m, k, n))?;
    let (a, b) = (a.clone(), b.clone());
    Ok(Dual::new(out, move |g| {
        let da = mm_nt(g.data(), b.data(), m, n, k);
        let db = mm_tn(a.data(), g.data(), m, k, n);
        vec![
            Tensor::new(vec![m, k], da).unwrap(),
            Tensor::new(vec![k, n], db).unwrap(),
        ]
    }))
}

/// Affine map `x·w + bias` with the bias broadcast over rows.
/// Gradients: `[dx, dw, dbias]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Dual> {
    require_matrix("linear", x)?;
    require_matrix("linear", w)?;
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    if w.rows() != k || bias.len() != n {
        return Err(Error::Shape {
            op: "linear",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let mut out = mm(x.data(), w.data(), m, k, n);
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let out = Tensor::new(vec![m, n], out)?;
    let (x, w) = (x.clone(), w.clone());
    let bias_shape = bias.shape().to_vec();
    Ok(Dual::new(out, move |g| {
        let dx = mm_nt(g.data(), w.data(), m, n, k);
        let dw = mm_tn(x.data(), g.data(), m, k, n);
        vec![
            Tensor::new(vec![m, k], dx).unwrap(),
            Tensor::new(vec![k, n], dw).unwrap(),
            Tensor::new(bias_shape.clone(), column_sums(g)).unwrap(),
        ]
    }))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Dual> {
    require_same("add", a, b)?;
    let out = a.zip_map(b, |x, y| x + y);
    Ok(Dual::new(out, |g| vec![g.clone(), g.clone()]))
}

/// Adds `bias[n]` to every row of `x[m×n]`.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Dual> {
    let n = x.cols();
    if bias.len() != n {
        return Err(Error::Shape {
            op: "add_row_bias",
            left: x.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let bias_shape = bias.shape().to_vec();
    Ok(Dual::new(out, move |g| {
        vec![
            g.clone(),
            Tensor::new(bias_shape.clone(), column_sums(g)).unwrap(),
        ]
    }))
}

pub fn scale(x: &Tensor, s: f64) -> Dual {
    Dual::new(x.map(|v| v * s), move |g| vec![g.map(|v| v * s)])
}

/// Elementwise product with a constant tensor (e.g. a dropout mask).
pub fn mul_const(x: &Tensor, c: &Tensor) -> Result<Dual> {
    require_same("mul_const", x, c)?;
    let out = x.zip_map(c, |a, b| a * b);
    let c = c.clone();
    Ok(Dual::new(out, move |g| vec![g.zip_map(&c, |a, b| a * b)]))
}

pub fn tanh(x: &Tensor) -> Dual {
    let y = x.map(f64::tanh);
    let saved = y.clone();
    Dual::new(y, move |g| vec![g.zip_map(&saved, |gi, yi| gi * (1.0 - yi * yi))])
}

fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_SCALE * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_SCALE * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let du = GELU_SCALE * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Tanh-approximation GELU and the exact derivative of that approximation.
pub fn gelu(x: &Tensor) -> Dual {
    let out = x.map(gelu_scalar);
    let x = x.clone();
    Dual::new(out, move |g| vec![g.zip_map(&x, |gi, xi| gi * gelu_derivative(xi))])
}

fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax_rows(x: &Tensor) -> Result<Dual> {
    require_matrix("softmax_rows", x)?;
    let mut s = x.zeros_like();
    for i in 0..x.rows() {
        softmax_row_into(x.row(i), s.row_mut(i));
    }
    let saved = s.clone();
    Ok(Dual::new(s, move |g| {
        let mut dx = g.zeros_like();
        for i in 0..g.rows() {
            let (gr, sr) = (g.row(i), saved.row(i));
            let inner: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
            for ((d, &gi), &si) in dx.row_mut(i).iter_mut().zip(gr).zip(sr) {
                *d = si * (gi - inner);
            }
        }
        vec![dx]
    }))
}

/// Per-row normalization to zero mean and unit variance, then `gain ⊙ · + bias`.
/// Gradients: `[dx, dgain, dbias]`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Dual> {
    require_matrix("layer_norm", x)?;
    let (m, n) = (x.rows(), x.cols());
    if gain.len() != n || bias.len() != n {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::validation("layer_norm eps must be positive"));
    }
    let mut xhat = x.zeros_like();
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std[i] = r;
        for (h, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *h = (v - mean) * r;
        }
    }
    let mut out = xhat.clone();
    for i in 0..m {
        for ((o, g), b) in out.row_mut(i).iter_mut().zip(gain.data()).zip(bias.data()) {
            *o = *o * g + b;
        }
    }
    let gain = gain.clone();
    let param_shape = bias.shape().to_vec();
    Ok(Dual::new(out, move |g| {
        let mut dx = g.zeros_like();
        let mut dgain = vec![0.0; n];
        let mut dbias = vec![0.0; n];
        let mut dxhat = vec![0.0; n];
        for i in 0..m {
            let (gr, hr) = (g.row(i), xhat.row(i));
            for j in 0..n {
                dgain[j] += gr[j] * hr[j];
                dbias[j] += gr[j];
                dxhat[j] = gr[j] * gain.data()[j];
            }
            let sum_d: f64 = dxhat.iter().sum();
            let sum_dh: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
            let scale = inv_std[i] / n as f64;
            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                *d = scale * (n as f64 * dxhat[j] - sum_d - hr[j] * sum_dh);
            }
        }
        vec![
            dx,
            Tensor::new(param_shape.clone(), dgain).unwrap(),
            Tensor::new(param_shape.clone(), dbias).unwrap(),
        ]
    }))
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// Mean over the batch of `-Σ_k targets[k]·log_softmax(logits)[k]`.
///
/// Targets may be soft (any distribution per row). The loss is linear in the
/// targets. Gradients: `[dlogits, dtargets]`.
pub fn cross_entropy_soft(logits: &Tensor, targets: &Tensor) -> Result<Dual> {
    require_matrix("cross_entropy_soft", logits)?;
    require_same("cross_entropy_soft", logits, targets)?;
    for i in 0..targets.rows() {
        let row = targets.row(i);
        if row.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::validation(format!(
                "target row {i} has entries outside [0, 1]"
            )));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "target row {i} sums to {total}, expected 1"
            )));
        }
    }
    let b = logits.rows();
    let mut log_probs = logits.zeros_like();
    let mut loss = 0.0;
    for i in 0..b {
        let ls = log_softmax_row(logits.row(i));
        loss -= ls.iter().zip(targets.row(i)).map(|(l, t)| l * t).sum::<f64>();
        log_probs.row_mut(i).copy_from_slice(&ls);
    }
    loss /= b as f64;
    let targets = targets.clone();
    Ok(Dual::new(Tensor::scalar(loss), move |g| {
        let scale = g.data()[0] / b as f64;
        let mut dz = log_probs.zeros_like();
        for i in 0..b {
            let t = targets.row(i);
            let mass: f64 = t.iter().sum();
            for ((d, &lp), &ti) in dz.row_mut(i).iter_mut().zip(log_probs.row(i)).zip(t) {
                *d = scale * (mass * lp.exp() - ti);
            }
        }
        let dt = log_probs.map(|lp| -scale * lp);
        vec![dz, dt]
    }))
}

/// Mean squared error. Gradients: `[dpred, dtarget]`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Dual> {
    require_same("mse", pred, target)?;
    let n = pred.len() as f64;
    let diff = pred.zip_map(target, |p, t| p - t);
    let loss = diff.sum_squares() / n;
    Ok(Dual::new(Tensor::scalar(loss), move |g| {
        let dp = diff.map(|d| 2.0 * d * g.data()[0] / n);
        let dt = dp.map(|v| -v);
        vec![dp, dt]
    }))
}

/// Row lookup `table[ids[i]]`. Gradient: `[dtable]` (scatter-add).
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Dual> {
    require_matrix("gather_rows", table)?;
    let vocab = table.rows();
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::validation(format!(
            "token id {bad} out of range for table with {vocab} rows"
        )));
    }
    if ids.is_empty() {
        return Err(Error::validation("gather_rows needs at least one id"));
    }
    let out = table.select_rows(ids);
    let ids = ids.to_vec();
    let table_shape = table.shape().to_vec();
    Ok(Dual::new(out, move |g| {
        let mut dt = Tensor::zeros(&table_shape);
        for (i, &id) in ids.iter().enumerate() {
            for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                *d += v;
            }
        }
        vec![dt]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_dual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    fn random_distribution_rows(b: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(&[b, c]);
        for i in 0..b {
            let row: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            for (o, v) in t.row_mut(i).iter_mut().zip(&row) {
                *o = v / s;
            }
        }
        t
    }

    #[test]
    fn matmul_identity_and_dot() {
        let id = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&id, &b).unwrap().output, b);

        let r = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let c = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(matmul(&r, &c).unwrap().output.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_gradient() {
        let report = check_dual(
            |x| matmul(&x[0], &x[1]),
            &[random(&[3, 4], 1), random(&[4, 2], 2)],
            &[0, 1],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn linear_gradient() {
        let report = check_dual(
            |x| linear(&x[0], &x[1], &x[2]),
            &[random(&[3, 4], 3), random(&[4, 5], 4), random(&[5], 5)],
            &[0, 1, 2],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let s = softmax_rows(&Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap()).unwrap();
        for &v in s.output.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Tensor::from_rows(&[[1000.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.output.data()[0], 1.0);
        assert!(s.output.data()[1] >= 0.0 && s.output.data()[1] < 1e-300);
        assert!(s.output.is_finite());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = random(&[6, 9], 11).map(|v| v * 20.0);
        let s = softmax_rows(&x).unwrap().output;
        for i in 0..s.rows() {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn softmax_gradient() {
        let report =
            check_dual(|x| softmax_rows(&x[0]), &[random(&[2, 5], 6)], &[0], 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_bias() {
        let x = Tensor::from_rows(&[[5.0, 5.0, 5.0, 5.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), LAYER_NORM_EPS)
            .unwrap();
        assert_eq!(y.output.data(), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_normalized_row_is_fixed_up_to_eps() {
        let x = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-12).unwrap();
        assert!((y.output.data()[0] - 1.0).abs() < 1e-11);
        assert!((y.output.data()[1] + 1.0).abs() < 1e-11);
    }

    #[test]
    fn layer_norm_gradient_all_inputs() {
        let report = check_dual(
            |x| layer_norm(&x[0], &x[1], &x[2], LAYER_NORM_EPS),
            &[random(&[4, 8], 7), random(&[8], 8), random(&[8], 9)],
            &[0, 1, 2],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(&Tensor::scalar(0.0)).output.data()[0], 0.0);
        assert!((gelu(&Tensor::scalar(10.0)).output.data()[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_and_tanh_gradients() {
        let x = random(&[10], 10);
        let r = check_dual(|x| Ok(gelu(&x[0])), &[x.clone()], &[0], 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = check_dual(|x| Ok(tanh(&x[0])), &[x], &[0], 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn cross_entropy_uniform_logits_one_hot() {
        let c = 5;
        let logits = Tensor::zeros(&[1, c]);
        let mut t = Tensor::zeros(&[1, c]);
        t.data_mut()[2] = 1.0;
        let l = cross_entropy_soft(&logits, &t).unwrap().output.data()[0];
        assert!((l - (c as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_linear_in_targets() {
        let z = random(&[3, 4], 12);
        let p = random_distribution_rows(3, 4, 13);
        let q = random_distribution_rows(3, 4, 14);
        let lam = 0.5;
        let mixed = p.zip_map(&q, |a, b| lam * a + (1.0 - lam) * b);
        let l = |t: &Tensor| cross_entropy_soft(&z, t).unwrap().output.data()[0];
        assert!((l(&mixed) - (lam * l(&p) + (1.0 - lam) * l(&q))).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        let z = Tensor::zeros(&[1, 2]);
        let t = Tensor::from_rows(&[[0.7, 0.7]]).unwrap();
        assert!(matches!(cross_entropy_soft(&z, &t), Err(Error::Validation(_))));
    }

    #[test]
    fn cross_entropy_gradient() {
        let targets = random_distribution_rows(3, 4, 16);
        let r = check_dual(
            |x| cross_entropy_soft(&x[0], &x[1]),
            &[random(&[3, 4], 15), targets],
            &[0],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn mse_values_and_gradient() {
        let p = Tensor::from_rows(&[[1.0]]).unwrap();
        let t = Tensor::from_rows(&[[3.0]]).unwrap();
        assert_eq!(mse(&p, &t).unwrap().output.data()[0], 4.0);
        assert_eq!(mse(&p, &p).unwrap().output.data()[0], 0.0);
        assert!(mse(&p, &Tensor::zeros(&[2, 1])).is_err());
        let r = check_dual(
            |x| mse(&x[0], &x[1]),
            &[random(&[5, 1], 17), random(&[5, 1], 18)],
            &[0, 1],
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let table = random(&[5, 3], 19);
        let r = check_dual(|x| gather_rows(&x[0], &[4, 1, 4]), &[table.clone()], &[0], 1e-5, 1e-9)
            .unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(gather_rows(&table, &[5]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let a = random(&[3, 4], 20);
        let b = random(&[4, 2], 21);
        let d = matmul(&a, &b).unwrap();
        for g in d.backward(&Tensor::zeros(&[3, 2])) {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
        let d = layer_norm(&a, &random(&[4], 22), &random(&[4], 23), LAYER_NORM_EPS).unwrap();
        for g in d.backward(&Tensor::zeros(&[3, 4])) {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }
}
