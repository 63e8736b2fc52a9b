use cbir_demo::{ndcg_json, pool_json, Demo2d};
use serde_json::Value;

#[test]
fn pooling_explorer_reports_each_pooling() {
    let req = r#"{"height":2,"width":2,"channels":3,"data":[1,0,0, 0,2,0, 0,0,3, 1,1,1],"poolings":["avg","max","gem:1","bogus"]}"#;
    let out: Value = serde_json::from_str(&pool_json(req).unwrap()).unwrap();
    let out = out.as_array().unwrap();
    assert_eq!(out.len(), 4);
    assert_eq!(out[0]["descriptor"], out[2]["descriptor"]);
    let max: Vec<f64> = out[1]["descriptor"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let n = (1.0f64 + 4.0 + 9.0).sqrt();
    for (got, want) in max.iter().zip([1.0 / n, 2.0 / n, 3.0 / n]) {
        assert!((got - want).abs() < 1e-6);
    }
    assert!(out[3]["error"].is_string());
    assert!(pool_json(r#"{"height":2,"width":2,"channels":3,"data":[1]}"#).is_err());
}

#[test]
fn ndcg_calculator() {
    let v: Value = serde_json::from_str(&ndcg_json(r#"{"relevant":[true,false,true,false],"total":3,"k":4}"#).unwrap()).unwrap();
    let want = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2() + 1.0 / 4f64.log2());
    assert!((v["ndcg"].as_f64().unwrap() - want).abs() < 1e-12);
    assert!(ndcg_json(r#"{"relevant":[true],"k":0}"#).is_err());
}

#[test]
fn feedback_loop_improves_and_exposes_metric() {
    let mut demo = Demo2d::new(7, 120).unwrap();
    let points = demo.points();
    assert!(points[0].target);
    let base = demo.refine("itml").unwrap();
    assert_eq!(base.ranking.len(), 119);
    assert_eq!(base.metric, Some([1.0, 0.0, 0.0, 1.0]));
    for &i in base.ranking.iter().take(15) {
        demo.mark(i, points[i].target).unwrap();
    }
    for method in ["itml", "kde", "svm"] {
        let r = demo.refine(method).unwrap();
        assert_eq!(r.ranking.len(), 119, "{method}");
        assert!(r.ndcg >= 0.0 && r.ndcg <= 1.0);
    }
    let itml = demo.refine("itml").unwrap();
    let m = itml.metric.unwrap();
    assert!((m[1] - m[2]).abs() < 1e-9);
    assert!(m[0] * m[3] - m[1] * m[2] > 0.0);
    assert!(itml.ndcg >= base.ndcg, "{} < {}", itml.ndcg, base.ndcg);
    assert!(demo.refine("lda").is_err());
    assert!(demo.mark(5000, true).is_err());
}
