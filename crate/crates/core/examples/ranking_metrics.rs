//! Scoring ranked lists directly with the standard metrics.

use recbench::metrics::{
    coverage, evaluate_standard, hit_rate_at_k, map_at_k, mrr_at_k, ndcg_at_k, GroundTruth,
    RankedList,
};

fn main() -> recbench::error::Result<()> {
    let preds = RankedList::new("alice", ["a", "b", "c"].map(Into::into));
    let truth = GroundTruth::new("alice", ["a", "c"].map(Into::into))?;
    println!("HR@3   {}", hit_rate_at_k(&preds, &truth, 3)?);
    println!("MRR@3  {}", mrr_at_k(&preds, &truth, 3)?);
    println!("NDCG@3 {:.5}", ndcg_at_k(&preds, &truth, 3)?);
    println!("MAP@3  {:.5}", map_at_k(&preds, &truth, 3)?);

    let all_preds = vec![preds, RankedList::new("bob", ["d", "a"].map(Into::into))];
    let all_truths = vec![truth, GroundTruth::new("bob", ["e"].map(Into::into))?];
    let report = evaluate_standard(&all_preds, &all_truths, 3, 6)?;
    println!("{report:#?}");
    println!(
        "coverage of a 6-item catalog {:.3}",
        coverage(&all_preds, 6)?
    );
    Ok(())
}
