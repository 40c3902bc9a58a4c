mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::linear_sum_model;
use tscf_core::cf::{CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, MethodSpec, ReferencePool};
use tscf_core::harness::{run_method, Aggregate, InstanceRecord, Outcome, RunContext, Summary};
use tscf_core::{LabeledInstance, TimeSeries};

const STEPS: usize = 8;

/// Instance `i` is the constant series `i - 9.5`; the linear model
/// labels it by sign.
fn instances(n: usize) -> Vec<LabeledInstance> {
    (0..n)
        .map(|i| {
            let v = i as f64 - 9.5;
            LabeledInstance {
                series: TimeSeries::univariate(vec![v; STEPS]).unwrap(),
                label: usize::from(v > 0.0),
            }
        })
        .collect()
}

fn index_of(x: &TimeSeries) -> usize {
    (x.values()[0] + 9.5).round() as usize
}

/// Negates the series, which flips the linear model's decision. Instances
/// listed in `panic_on` panic, those in `slow` sleep past the timeout.
struct Scripted {
    panic_on: Vec<usize>,
    slow: Vec<usize>,
}

impl CfGenerator for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }
    fn config(&self) -> serde_json::Value {
        serde_json::json!({})
    }
    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> tscf_core::Result<Counterfactual> {
        let i = index_of(&req.instance);
        if self.panic_on.contains(&i) {
            panic!("scripted failure on {i}");
        }
        if self.slow.contains(&i) {
            std::thread::sleep(Duration::from_millis(15));
        }
        let perturbed = TimeSeries::univariate(req.instance.values().iter().map(|v| -v).collect()).unwrap();
        let valid = ctx.model.predict_label(&perturbed)? == req.target;
        Ok(Counterfactual {
            original: req.instance.clone(),
            perturbed,
            target: req.target,
            valid,
            gen_time: ctx.budget.elapsed(),
            method: self.name().into(),
            status: if valid { CfStatus::Ok } else { CfStatus::NoCfFound },
            trace: None,
        })
    }
}

fn without_times(mut records: Vec<InstanceRecord>) -> Vec<InstanceRecord> {
    for r in &mut records {
        r.gen_time = 0.0;
        if let Some(m) = r.metrics.as_mut() {
            m.gen_time = 0.0;
        }
    }
    records
}

#[test]
fn worker_count_does_not_change_records() {
    let model = linear_sum_model(STEPS, 1.0, 0.0);
    let test = instances(20);
    let pool = ReferencePool::new(&model, &test).unwrap();
    let indices: Vec<usize> = (0..20).collect();
    let nun = MethodSpec::NunCf.prepare(&model, &test, 0).unwrap();
    let scripted = Scripted {
        panic_on: vec![],
        slow: vec![],
    };
    for gen in [nun.as_ref(), &scripted as &dyn CfGenerator] {
        let mut runs = Vec::new();
        for workers in [1, 2, 7] {
            let mut ctx = RunContext::new(&model, &pool, &test);
            ctx.workers = workers;
            ctx.global_seed = 3;
            let (records, aborted) = run_method(&ctx, gen, &indices);
            assert!(!aborted);
            runs.push(without_times(records));
        }
        assert_eq!(runs[0], runs[1], "{}", gen.name());
        assert_eq!(runs[0], runs[2], "{}", gen.name());
        assert!(runs[0].iter().all(InstanceRecord::valid), "{}", gen.name());
    }
}

#[test]
fn panics_become_failed_records() {
    let model = linear_sum_model(STEPS, 1.0, 0.0);
    let test = instances(6);
    let pool = ReferencePool::new(&model, &test).unwrap();
    let gen = Scripted {
        panic_on: vec![2, 3],
        slow: vec![],
    };
    for workers in [1, 3] {
        let mut ctx = RunContext::new(&model, &pool, &test);
        ctx.workers = workers;
        let (records, aborted) = run_method(&ctx, &gen, &[0, 1, 2, 3, 4, 5]);
        assert!(!aborted);
        assert_eq!(records.len(), 6);
        for r in &records {
            if r.index == 2 || r.index == 3 {
                assert_eq!(r.outcome, Outcome::Failed);
                assert!(r.error.as_deref().unwrap().contains("scripted failure"), "{:?}", r.error);
                assert!(r.metrics.is_none() && !r.valid());
            } else {
                assert_eq!(r.outcome, Outcome::Ok);
            }
        }
    }
}

#[test]
fn abort_needs_an_unbroken_timeout_streak() {
    let model = linear_sum_model(STEPS, 1.0, 0.0);
    let test = instances(20);
    let pool = ReferencePool::new(&model, &test).unwrap();
    let indices: Vec<usize> = (0..20).collect();
    let mut ctx = RunContext::new(&model, &pool, &test);
    ctx.timeout_s = 0.005;

    // nine timeouts, one fast success, nine timeouts
    let broken = Scripted {
        panic_on: vec![],
        slow: (0..19).filter(|&i| i != 9).collect(),
    };
    let (records, aborted) = run_method(&ctx, &broken, &indices[..19]);
    assert!(!aborted);
    assert_eq!(records.len(), 19);
    assert_eq!(records.iter().filter(|r| r.outcome == Outcome::TimedOut).count(), 18);
    assert!(records.iter().filter(|r| r.outcome == Outcome::TimedOut).all(|r| !r.valid()));

    let unbroken = Scripted {
        panic_on: vec![],
        slow: (3..20).collect(),
    };
    let (records, aborted) = run_method(&ctx, &unbroken, &indices);
    assert!(aborted);
    assert_eq!(records.len(), 13);
}

fn agg(dataset: &str, method: &str, validity: f64, aborted: bool, skipped: bool) -> Aggregate {
    Aggregate {
        dataset: dataset.into(),
        model: "fcn".into(),
        method: method.into(),
        attempted: 10,
        valid: (validity * 10.0) as usize,
        timeouts: 0,
        failures: 0,
        aborted,
        skipped: skipped.then(|| "not applicable".into()),
        validity: Some(validity),
        metrics: BTreeMap::new(),
        consist_bc: None,
        consist_bv: None,
    }
}

fn validity_ranks(s: &Summary) -> Vec<Vec<f64>> {
    s.ranking("validity").expect("validity is ranked").table.ranks.clone()
}

#[test]
fn summary_handles_skipped_and_aborted_methods() {
    let aggs = vec![
        agg("a", "m1", 0.9, false, false),
        agg("a", "m2", 0.5, false, false),
        agg("a", "m3", 1.0, true, false),
        agg("a", "m4", 0.0, false, true),
        agg("b", "m1", 0.4, false, false),
        agg("b", "m2", 0.8, false, false),
        agg("b", "m3", 0.6, false, false),
        agg("b", "m4", 0.0, false, true),
    ];
    let s = Summary::new(aggs.clone(), vec![], vec![], 0.05, false).unwrap();
    assert_eq!(s.methods, ["m1", "m2", "m3"]);
    // m3 aborted in block a, so it ranks last there despite its validity
    assert_eq!(validity_ranks(&s), [vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]]);

    let s = Summary::new(aggs, vec![], vec![], 0.05, true).unwrap();
    assert_eq!(s.methods, ["m1", "m2"]);
    assert_eq!(validity_ranks(&s), [vec![1.0, 2.0], vec![2.0, 1.0]]);

    let only_skipped = vec![agg("a", "m4", 0.0, false, true)];
    assert!(Summary::new(only_skipped, vec![], vec![], 0.05, false).is_err());
}

#[test]
fn loading_a_missing_results_tree_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = Summary::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no results found"), "{err}");
}
