//! Finite-difference suite behind `mixf gradcheck`.

use mixf::data::{PAD, SEP};
use mixf::mixup::{self, MixPlan};
use mixf::model::{self, BatchLabels, EncodedBatch, HeadKind, ModelConfig, Parameters};
use mixf::numerics::{self as nx, check_dual, grad_check, Dual, GradCheckReport, Tensor};
use mixf::trainer;
use mixf::{rng, Result};
use rand::Rng;
use serde::Serialize;

pub const STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct ComponentResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    /// Which input held the worst entry, for a failing component.
    pub worst_input: usize,
}

impl ComponentResult {
    fn from_report(name: &str, report: &GradCheckReport) -> Self {
        let worst_input = report
            .inputs
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map_or(0, |c| c.input);
        ComponentResult {
            name: name.to_string(),
            max_rel_error: report.max_rel_error,
            tol: report.tol,
            passed: report.passed(),
            worst_input,
        }
    }
}

type OpCase = (&'static str, Vec<Tensor>, Vec<usize>, fn(&[Tensor]) -> Result<Dual>);

fn random(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn soft_targets(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = random(r, &[rows, cols]).map(|v| v.abs() + 0.1);
    for i in 0..rows {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn op_cases() -> Vec<OpCase> {
    let mut r = rng::stream(7, "gradcheck", 0);
    let r = &mut r;
    vec![
        ("matmul", vec![random(r, &[3, 4]), random(r, &[4, 2])], vec![0, 1], |x| nx::matmul(&x[0], &x[1])),
        (
            "linear",
            vec![random(r, &[3, 4]), random(r, &[4, 5]), random(r, &[5])],
            vec![0, 1, 2],
            |x| nx::linear(&x[0], &x[1], &x[2]),
        ),
        ("add", vec![random(r, &[2, 3]), random(r, &[2, 3])], vec![0, 1], |x| nx::add(&x[0], &x[1])),
        (
            "add_row_bias",
            vec![random(r, &[3, 4]), random(r, &[4])],
            vec![0, 1],
            |x| nx::add_row_bias(&x[0], &x[1]),
        ),
        ("scale", vec![random(r, &[2, 3])], vec![0], |x| Ok(nx::scale(&x[0], -1.7))),
        (
            "mul_const",
            vec![random(r, &[2, 3]), random(r, &[2, 3])],
            vec![0],
            |x| nx::mul_const(&x[0], &x[1]),
        ),
        ("tanh", vec![random(r, &[3, 3]).map(|v| 2.0 * v)], vec![0], |x| Ok(nx::tanh(&x[0]))),
        ("gelu", vec![random(r, &[3, 3]).map(|v| 3.0 * v)], vec![0], |x| Ok(nx::gelu(&x[0]))),
        ("softmax_rows", vec![random(r, &[3, 5]).map(|v| 2.0 * v)], vec![0], |x| nx::softmax_rows(&x[0])),
        (
            "layer_norm",
            vec![random(r, &[3, 6]), random(r, &[6]).map(|v| v + 1.5), random(r, &[6])],
            vec![0, 1, 2],
            |x| nx::layer_norm(&x[0], &x[1], &x[2], nx::LAYER_NORM_EPS),
        ),
        (
            "cross_entropy_soft",
            vec![random(r, &[4, 3]).map(|v| 2.0 * v), soft_targets(r, 4, 3)],
            vec![0],
            |x| nx::cross_entropy_soft(&x[0], &x[1]),
        ),
        ("mse", vec![random(r, &[4, 1]), random(r, &[4, 1])], vec![0, 1], |x| nx::mse(&x[0], &x[1])),
        ("gather_rows", vec![random(r, &[4, 3])], vec![0], |x| nx::gather_rows(&x[0], &[2, 0, 2, 3, 1])),
    ]
}

/// Names of all components, in suite order.
pub fn component_names() -> Vec<&'static str> {
    let mut names: Vec<&str> = op_cases().iter().map(|c| c.0).collect();
    names.extend(["mixup_routing", "model_step", "model_step_regression"]);
    names
}

fn corrupted(d: Dual) -> Dual {
    let out = d.output.clone();
    Dual::new(out, move |g| {
        let mut grads = d.backward(g);
        grads[0].data_mut()[0] += 0.5;
        grads
    })
}

/// Tiny encoder used for the full-step check: width 8, two heads, one layer,
/// sequences of 4, batches of 2, no dropout.
pub fn tiny_config(head: HeadKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 7,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        max_len: 4,
        head,
        dropout_rate: 0.0,
        seed: 11,
    }
}

fn tiny_batch(labels: BatchLabels) -> EncodedBatch {
    EncodedBatch {
        batch_size: 2,
        seq_len: 4,
        token_ids: vec![2, 4, 5, SEP, 2, 6, SEP, PAD],
        mask: vec![1, 1, 1, 1, 1, 1, 1, 0],
        labels,
    }
}

/// Perturbs biases and gains away from their initial constants so every
/// parameter has a generic gradient.
fn jitter(params: &Parameters) -> Parameters {
    let mut r = rng::stream(3, "gradcheck-jitter", 0);
    let mut p = params.clone();
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    p
}

fn model_step(head: HeadKind, corrupt: bool) -> Result<GradCheckReport> {
    let config = tiny_config(head.clone());
    let labels = match head {
        HeadKind::Classification { n_classes } => {
            let mut t = Tensor::zeros(&[2, n_classes]);
            t.row_mut(0)[1] = 1.0;
            t.row_mut(1)[0] = 1.0;
            BatchLabels::Classes { ids: vec![1, 0], targets: t }
        }
        HeadKind::Regression => BatchLabels::Scores(Tensor::new(vec![2, 1], vec![0.7, -0.4])?),
    };
    let batch = tiny_batch(labels);
    let params = jitter(&model::init_params(&config)?);
    let plan = MixPlan::new(0.3, vec![1, 0])?;
    let f = |ts: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        let p = params.with_tensors(ts)?;
        let mut unused = rng::stream(0, "unused", 0);
        let (loss, grads) = trainer::step_with_plan(&config, &p, &batch, Some(&plan), &mut unused)?;
        let mut g = grads.to_tensors();
        if corrupt {
            g[0].data_mut()[0] += 0.5;
        }
        Ok((loss, g))
    };
    grad_check(f, &params.to_tensors(), STEP, MODEL_TOL)
}

/// Runs every component. `corrupt` names one whose analytic gradient gets a
/// deliberate error, to show the harness notices.
pub fn run_suite(corrupt: Option<&str>) -> Result<Vec<ComponentResult>> {
    if let Some(name) = corrupt {
        if !component_names().contains(&name) {
            return Err(mixf::Error::validation(format!(
                "unknown gradcheck component '{name}'; expected one of {}",
                component_names().join(", ")
            )));
        }
    }
    let mut results = Vec::new();
    for (name, inputs, wrt, op) in op_cases() {
        let bad = corrupt == Some(name);
        let report = check_dual(
            |x| {
                let d = op(x)?;
                Ok(if bad { corrupted(d) } else { d })
            },
            &inputs,
            &wrt,
            STEP,
            OP_TOL,
        )?;
        results.push(ComponentResult::from_report(name, &report));
    }

    let mut r = rng::stream(7, "gradcheck", 1);
    let h = random(&mut r, &[4, 3]);
    let plan = MixPlan::new(0.3, vec![2, 0, 3, 1])?;
    let bad = corrupt == Some("mixup_routing");
    let report = check_dual(
        |x| {
            let d = mixup::mix_representations(&x[0], &plan)?;
            Ok(if bad { corrupted(d) } else { d })
        },
        &[h],
        &[0],
        STEP,
        OP_TOL,
    )?;
    results.push(ComponentResult::from_report("mixup_routing", &report));

    let report = model_step(HeadKind::Classification { n_classes: 2 }, corrupt == Some("model_step"))?;
    results.push(ComponentResult::from_report("model_step", &report));
    let report = model_step(HeadKind::Regression, corrupt == Some("model_step_regression"))?;
    results.push(ComponentResult::from_report("model_step_regression", &report));
    Ok(results)
}
