mod common;

use common::{explain, fcn};
use tscf_core::cf::{
    nun, Budget, CfContext, CfRequest, CfStatus, ComteConfig, Method, MethodSpec, ReferencePool, SetsConfig, TsevoConfig,
    WachterConfig,
};
use tscf_core::classifier::argmax;
use tscf_core::harness::select_target;
use tscf_core::synthetic;

#[test]
fn native_guide_copies_one_window_from_the_nun() {
    let ds = synthetic::gunpoint_like(0);
    let model = fcn(&ds, 0, [8, 16, 8], 30);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    let spec = MethodSpec::default_for(Method::NativeGuide);
    for i in 0..10 {
        let x = &ds.test[i].series;
        let cf = explain(&spec, &model, &pool, &ds.train, x, 0);
        assert!(cf.valid);
        let guide = nun(&pool, x, cf.target).unwrap();
        let (xv, pv, gv) = (x.values(), cf.perturbed.values(), guide.values());
        let changed: Vec<usize> = (0..xv.len()).filter(|&s| xv[s] != pv[s]).collect();
        let (first, last) = (changed[0], *changed.last().unwrap());
        for s in 0..xv.len() {
            let expect = if (first..=last).contains(&s) { gv[s] } else { xv[s] };
            assert_eq!(pv[s], expect, "instance {i} step {s}");
        }
    }
}

#[test]
fn comte_swaps_few_channels_on_decisive_data() {
    let ds = synthetic::decisive_channel(0, 4, 2, 40, 20, 40).unwrap();
    let model = fcn(&ds, 0, [8, 16, 8], 30);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    // the loss is flat in the subset size up to sigma, so sigma bounds the swap
    let spec = MethodSpec::Comte(ComteConfig {
        sigma: 2,
        ..ComteConfig::default()
    });
    let mut valid = 0;
    for i in 0..10 {
        let cf = explain(&spec, &model, &pool, &ds.train, &ds.test[i].series, i as u64);
        let swapped = (0..4).filter(|&c| cf.original.channel(c) != cf.perturbed.channel(c)).count();
        if cf.valid {
            valid += 1;
            assert!(swapped <= 2, "instance {i} swapped {swapped} channels");
        }
    }
    assert!(valid >= 8, "{valid}/10 valid");
}

#[test]
fn comte_rejects_univariate_models() {
    let ds = synthetic::planted_bump(0, 10, 4, 20);
    let model = fcn(&ds, 0, [4, 4, 4], 1);
    let Err(err) = MethodSpec::Comte(ComteConfig::default()).prepare(&model, &ds.train, 0) else {
        panic!("comte accepted a univariate model");
    };
    assert!(err.to_string().contains("multivariate"));
}

#[test]
fn sets_counterfactuals_are_valid_or_reported_missing() {
    let ds = synthetic::planted_motif(0, 40, 20, 30);
    let model = fcn(&ds, 0, [8, 16, 8], 30);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    let spec = MethodSpec::Sets(SetsConfig::default());
    for i in 0..ds.test.len() {
        let cf = explain(&spec, &model, &pool, &ds.train, &ds.test[i].series, 0);
        match cf.status {
            CfStatus::Ok => assert!(cf.valid),
            CfStatus::NoCfFound => {}
            CfStatus::TimedOut => panic!("no budget was set"),
        }
    }
}

#[test]
fn tsevo_is_deterministic_per_seed() {
    let ds = synthetic::planted_bump(1, 30, 6, 40);
    let model = fcn(&ds, 0, [4, 8, 4], 20);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    let spec = MethodSpec::Tsevo(TsevoConfig {
        population: 20,
        generations: 15,
        ..TsevoConfig::default()
    });
    let x = &ds.test[0].series;
    let a = explain(&spec, &model, &pool, &ds.train, x, 3);
    let b = explain(&spec, &model, &pool, &ds.train, x, 3);
    assert_eq!(a.perturbed, b.perturbed);
    assert!(a.valid);
}

#[test]
fn wachter_records_trace_when_asked() {
    let ds = synthetic::planted_bump(2, 30, 6, 40);
    let model = fcn(&ds, 0, [4, 8, 4], 20);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    let spec = MethodSpec::Wachter(WachterConfig {
        trace: true,
        ..WachterConfig::default()
    });
    let cf = explain(&spec, &model, &pool, &ds.train, &ds.test[0].series, 0);
    let trace = cf.trace.expect("trace requested");
    assert!(!trace.is_empty() && trace.iter().all(|v| v.is_finite()));
    let plain = explain(&MethodSpec::Wachter(WachterConfig::default()), &model, &pool, &ds.train, &ds.test[0].series, 0);
    assert!(plain.trace.is_none());
}

#[test]
fn iterative_methods_honour_an_expired_budget() {
    let ds = synthetic::planted_bump(0, 30, 6, 40);
    let model = fcn(&ds, 0, [4, 8, 4], 30);
    let pool = ReferencePool::new(&model, &ds.train).unwrap();
    let x = &ds.test[0].series;
    let probs = model.predict_proba(x).unwrap();
    let req = CfRequest::new(x.clone(), argmax(&probs), select_target(&probs)).unwrap();
    for method in [Method::Wachter, Method::Tsevo] {
        let gen = MethodSpec::default_for(method).prepare(&model, &ds.train, 0).unwrap();
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::new(1e-9),
        };
        std::thread::sleep(std::time::Duration::from_millis(2));
        let cf = gen.generate(&req, &ctx).unwrap();
        assert_eq!(cf.status, CfStatus::TimedOut, "{method}");
    }
}

#[test]
fn method_configs_round_trip_through_json() {
    for method in Method::ALL {
        let spec = MethodSpec::default_for(method);
        let text = serde_json::to_string(&spec).unwrap();
        let back: MethodSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.method().tag().parse::<Method>().unwrap(), method);
    }
}
