use serde_json::Value;
use tscf_demo::{cd_from_table, Demo};

fn field(json: &str, name: &str) -> Value {
    serde_json::from_str::<Value>(json).unwrap()[name].clone()
}

#[test]
fn generate_then_rescore() {
    let demo = Demo::build(0).unwrap();
    assert!(demo.view(0.0025, 0.01).is_err(), "nothing generated yet");
    let first = demo.generate(0, "nun_cf", 0.0025, 0.01).unwrap();
    assert_eq!(field(&first, "valid"), Value::Bool(true));
    assert!(field(&first, "svg").as_str().unwrap().starts_with("<svg"));
    let coarse = demo.view(0.2, 0.01).unwrap();
    let (fine, coarse) = (
        field(&first, "thresh_l0").as_f64().unwrap(),
        field(&coarse, "thresh_l0").as_f64().unwrap(),
    );
    assert!(coarse <= fine);
    assert!(demo.generate(0, "comte", 0.0025, 0.01).is_err(), "univariate data");
    assert!(demo.generate(999, "nun_cf", 0.0025, 0.01).is_err());
}

#[test]
fn cd_table_parsing() {
    let svg = cd_from_table("a,b,c\n1,2,3\n1,3,2\n2,1,3\n", 0.05, false).unwrap();
    assert!(svg.contains("CD = "));
    assert!(cd_from_table("a,b\n1,x\n2,3", 0.05, false).is_err());
    assert!(cd_from_table("", 0.05, false).is_err());
}
