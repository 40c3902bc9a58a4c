//! Browser demo: train a tiny classifier on a synthetic dataset, generate
//! counterfactuals, explore how the perceptibility threshold and gap
//! tolerance change the sparsity metrics, and draw critical-difference
//! diagrams from a pasted score table.
//!
//! The logic lives in plain functions returning JSON strings so it can be
//! tested natively; the `wasm_bindgen` layer only converts errors.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tscf_core::cf::{Budget, CfContext, CfRequest, Counterfactual, Method, MethodSpec, ReferencePool, TsevoConfig};
use tscf_core::classifier::{argmax, train, Architecture, ClassifierModel, TrainConfig};
use tscf_core::harness::{aggregate_rankings, friedman_nemenyi, select_target, svg, Direction};
use tscf_core::metrics::{
    num_segments, perceptible_mask, proximity, sparsity_l0, thresh_l0, PlausibilityConfig, PlausibilityIndex,
    SparsityConfig,
};
use tscf_core::{synthetic, Dataset, Error, Result};

fn to_js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[derive(Serialize)]
struct View {
    method: String,
    status: String,
    valid: bool,
    label: usize,
    target: usize,
    l1: f64,
    l0: f64,
    thresh_l0: f64,
    num_seg: usize,
    tolerance_steps: usize,
    dist_class: Option<f64>,
    svg: String,
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    model: ClassifierModel,
    pool: ReferencePool,
    plaus: Option<PlausibilityIndex>,
    last: RefCell<Option<(usize, Counterfactual)>>,
}

impl Demo {
    pub fn build(seed: u64) -> Result<Demo> {
        let data = synthetic::planted_bump(seed, 40, 20, 50);
        let mut cfg = TrainConfig {
            epochs: 40,
            seed,
            ..TrainConfig::default()
        };
        cfg.fcn.filters = [8, 16, 8];
        let model = train(Architecture::Fcn, &data, &cfg)?;
        let pool = ReferencePool::new(&model, &data.train)?;
        let plaus = PlausibilityIndex::build(&model, &data.train, &PlausibilityConfig::default()).ok();
        Ok(Demo {
            data,
            model,
            pool,
            plaus,
            last: RefCell::new(None),
        })
    }

    /// Generates a counterfactual for test instance `index` and keeps it for
    /// [`Demo::view`].
    pub fn generate(&self, index: usize, method: &str, tau: f64, tolerance: f64) -> Result<String> {
        let method: Method = method.parse()?;
        let spec = match method {
            // keep the browser responsive
            Method::Tsevo => MethodSpec::Tsevo(TsevoConfig {
                population: 30,
                generations: 40,
                ..TsevoConfig::default()
            }),
            m => MethodSpec::default_for(m),
        };
        let inst = self
            .data
            .test
            .get(index)
            .ok_or_else(|| Error::Config(format!("index {index} out of range")))?;
        let gen = spec.prepare(&self.model, &self.data.train, 0)?;
        let probs = self.model.predict_proba(&inst.series)?;
        let req = CfRequest::new(inst.series.clone(), argmax(&probs), select_target(&probs))?;
        let ctx = CfContext {
            model: &self.model,
            pool: &self.pool,
            seed: index as u64,
            budget: Budget::new(30.0),
        };
        let cf = gen.generate(&req, &ctx)?;
        *self.last.borrow_mut() = Some((index, cf));
        self.view(tau, tolerance)
    }

    /// Recomputes the sparsity metrics and overlay of the last
    /// counterfactual under a new threshold and tolerance.
    pub fn view(&self, tau: f64, tolerance: f64) -> Result<String> {
        let last = self.last.borrow();
        let (index, cf) = last
            .as_ref()
            .ok_or_else(|| Error::Config("generate a counterfactual first".into()))?;
        let cfg = sparsity(tau, tolerance)?;
        let (x, xh) = (&cf.original, &cf.perturbed);
        let mask = perceptible_mask(x, xh, &cfg)?;
        let dist_class = match &self.plaus {
            Some(p) => p.dist_class(&self.model.latent(xh)?.0, cf.target).ok().map(|r| r.value),
            None => None,
        };
        let title = format!("test #{index}: {} (target {})", cf.method, cf.target);
        Ok(json(&View {
            method: cf.method.clone(),
            status: format!("{:?}", cf.status),
            valid: cf.valid,
            label: self.data.test[*index].label,
            target: cf.target,
            l1: proximity(x, xh)?.l1,
            l0: sparsity_l0(x, xh)?,
            thresh_l0: thresh_l0(x, xh, &cfg)?,
            num_seg: num_segments(x, xh, &cfg)?,
            tolerance_steps: cfg.tolerance_steps(x.steps()),
            dist_class,
            svg: svg::overlay_plot(&title, x, xh, &mask),
        }))
    }
}

fn sparsity(tau: f64, tolerance: f64) -> Result<SparsityConfig> {
    let cfg = SparsityConfig {
        tau,
        tolerance_frac: tolerance,
        global_range: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Demo::build(u64::from(seed)).map_err(to_js)
    }

    #[wasm_bindgen(js_name = testSize)]
    pub fn test_size(&self) -> usize {
        self.data.test.len()
    }

    #[wasm_bindgen(js_name = testAccuracy)]
    pub fn test_accuracy(&self) -> f64 {
        self.model.test_accuracy.unwrap_or(f64::NAN)
    }

    #[wasm_bindgen(js_name = explain)]
    pub fn explain_js(&self, index: usize, method: &str, tau: f64, tolerance: f64) -> std::result::Result<String, JsError> {
        self.generate(index, method, tau, tolerance).map_err(to_js)
    }

    #[wasm_bindgen(js_name = rescore)]
    pub fn rescore_js(&self, tau: f64, tolerance: f64) -> std::result::Result<String, JsError> {
        self.view(tau, tolerance).map_err(to_js)
    }
}

/// Builds a CD diagram from a score table: the first line names the
/// methods, every further line holds one block's scores (comma-separated,
/// empty for missing). Lower is better unless `higher_better`.
pub fn cd_from_table(table: &str, alpha: f64, higher_better: bool) -> Result<String> {
    let mut lines = table.lines().map(str::trim).filter(|l| !l.is_empty());
    let methods: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("empty score table".into()))?
        .split(',')
        .map(|m| m.trim().to_string())
        .collect();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<Option<f64>> = line
            .split(',')
            .map(|v| {
                let v = v.trim();
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("row {}: bad number {v:?}", i + 2)))
                }
            })
            .collect::<Result<_>>()?;
        values.push(row);
    }
    let blocks: Vec<String> = (1..=values.len()).map(|b| format!("block {b}")).collect();
    let dir = if higher_better { Direction::HigherIsBetter } else { Direction::LowerIsBetter };
    let ranks = aggregate_rankings("score", &methods, &blocks, &values, dir)?;
    let cd = friedman_nemenyi(&ranks.ranks, alpha)?;
    let title = format!("p = {:.4}, CD = {:.3}", cd.p_value, cd.cd);
    Ok(svg::cd_diagram(&title, &methods, &cd))
}

#[wasm_bindgen(js_name = cdDiagram)]
pub fn cd_diagram_js(table: &str, alpha: f64, higher_better: bool) -> std::result::Result<String, JsError> {
    cd_from_table(table, alpha, higher_better).map_err(to_js)
}
