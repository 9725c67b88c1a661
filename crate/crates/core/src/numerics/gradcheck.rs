//! Central finite-difference gradient checks.
//!
//! The numerical side never touches the backward pass: it only evaluates
//! the forward loss at perturbed parameter values.

use rand::seq::SliceRandom;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Upper bound on checked coordinates; all are checked when fewer exist.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            max_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor index, flat coordinate, analytic, numeric) of the worst case.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn sample_coords(sizes: &[usize], max_coords: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |k| (t, k)))
        .collect();
    if all.len() > max_coords {
        let mut r = rng::seeded(seed);
        all.shuffle(&mut r);
        all.truncate(max_coords);
        all.sort_unstable();
    }
    all
}

fn compare(
    coords: &[(usize, usize)],
    analytic: &[Vec<f64>],
    mut loss_at: impl FnMut(usize, usize, f64) -> Result<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for &(t, k) in coords {
        let plus = loss_at(t, k, h)?;
        let minus = loss_at(t, k, -h)?;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[t][k];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((t, k, a, numeric));
        }
    }
    Ok(report)
}

/// Checks `d loss / d inputs` for a loss built from plain tensors.
pub fn check_tensors<F>(inputs: &[Tensor], loss_fn: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_tensor(v).into_data()).collect();
    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let coords = sample_coords(&sizes, config.max_coords, config.seed);
    let mut work = inputs.to_vec();
    compare(
        &coords,
        &analytic,
        |t, k, delta| {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + delta;
            let mut g = Graph::new();
            let vars: Vec<Var> = work.iter().map(|x| g.constant(x.clone())).collect();
            let out = loss_fn(&mut g, &vars).map(|l| g.value(l).item());
            work[t].data_mut()[k] = orig;
            out
        },
        config.h,
    )
}

/// Checks gradients of every trainable entry of a parameter store.
pub fn check_params<F>(store: &ParamStore, loss_fn: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let loss = loss_fn(&mut g, &bound)?;
    g.backward(loss)?;
    let analytic = store.collect_grads(&g, &bound);
    let sizes: Vec<usize> = store
        .entries()
        .iter()
        .map(|e| if e.trainable { e.value.len() } else { 0 })
        .collect();
    let coords = sample_coords(&sizes, config.max_coords, config.seed);
    let mut work = store.clone();
    compare(
        &coords,
        &analytic,
        |t, k, delta| {
            let id = work.id_at(t);
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + delta;
            let mut g = Graph::new();
            let bound = work.bind(&mut g);
            let out = loss_fn(&mut g, &bound).map(|l| g.value(l).item());
            work.get_mut(id).data_mut()[k] = orig;
            out
        },
        config.h,
    )
}
