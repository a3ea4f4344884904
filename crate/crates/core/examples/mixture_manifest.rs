//! Plan a training manifest from a shard inventory and a weight table.

use corpus_curate::mixture::{
    plan_mixture, validate_mixture, DomainInventory, MixtureSpec, ShardInfo,
};

fn main() -> corpus_curate::Result<()> {
    let sizes = [
        ("web_zh", 8, 900),
        ("web_en", 6, 700),
        ("kid_zh", 3, 120),
        ("kid_en", 3, 110),
        ("code", 4, 400),
        ("other", 2, 300),
    ];
    let shards = sizes.iter().flat_map(|&(bucket, n, tokens)| {
        (0..n).map(move |i| ShardInfo {
            id: format!("{bucket}-{i:02}"),
            bucket: bucket.to_string(),
            tokens,
        })
    });
    let inventory = DomainInventory::from_shards(shards)?;

    let spec = MixtureSpec::default_with_budget(20_000)?;
    println!("children's share of the weights: {:.2}", spec.kid_share());

    let manifest = plan_mixture(&inventory, &spec, 7)?;
    let report = validate_mixture(&manifest, &spec, 0.01);
    for d in &report.domains {
        println!("{:7} want {:.3} got {:.3}", d.domain, d.weight, d.share);
    }
    println!(
        "{} entries, max deviation {:.4}, pass={}",
        manifest.entries.len(),
        report.max_deviation,
        report.pass
    );
    Ok(())
}
