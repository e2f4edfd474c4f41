//! Triage workflow in-process: submit synthetic cases, inspect the queue,
//! review the top case, then optionally serve the same state over HTTP.
//!
//! cargo run --release -p nailguard-service --example triage -- [store_dir] [--serve ADDR]

use std::path::PathBuf;
use std::sync::Arc;

use nailguard::explain::{encode_png, AttributionMethod};
use nailguard::models::Classifier;
use nailguard::synthdata::{render, SynthSpec};
use nailguard_service::{router, CaseStore, Decision, ReviewRequest, SeverityWeights, SystemClock, Triage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let store_dir = args.first().filter(|a| !a.starts_with("--")).map(PathBuf::from);
    let serve_addr = args.iter().position(|a| a == "--serve").and_then(|i| args.get(i + 1)).cloned();

    let store = match &store_dir {
        Some(dir) => CaseStore::open(dir)?,
        None => CaseStore::in_memory(),
    };
    let mut triage = Triage::new(store, Arc::new(SystemClock), SeverityWeights::default());
    // An untrained head; swap in `Classifier::load` for a real checkpoint.
    let mut model = Classifier::tiny(0);
    for (i, w) in model.head.weights.iter_mut().enumerate() {
        *w = ((i * 7) % 5) as f64 * 0.02 - 0.04;
    }
    triage.register("tiny", Arc::new(model));
    triage.activate("tiny")?;

    let spec = SynthSpec { image_size: 96, ..SynthSpec::default() };
    for category in 0..6 {
        let png = encode_png(&render(&spec, category, 0))?;
        let case = triage.submit(&png)?;
        println!("case {} priority {:.3}", case.case_id, case.priority_score);
    }

    let queue = triage.pending_queue();
    println!("pending queue: {:?}", queue.iter().map(|c| c.case_id).collect::<Vec<_>>());
    let top = queue.first().ok_or("empty queue")?;
    let png = triage.explanation(top.case_id, AttributionMethod::Gradcam, None)?;
    println!("gradcam overlay for case {}: {} bytes", top.case_id, png.len());
    let reviewed = triage.review(
        top.case_id,
        ReviewRequest { decision: Decision::Override, override_category: Some("Blue Finger".into()), note: None },
    )?;
    println!("case {} is now {:?}", reviewed.case_id, reviewed.status);

    if let Some(addr) = serve_addr {
        let app = router(Arc::new(triage), None);
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(nailguard_service::serve(app, addr.parse()?))?;
    }
    Ok(())
}
