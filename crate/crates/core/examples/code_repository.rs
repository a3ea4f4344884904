//! Order a repository's files so dependencies come first, concatenate them
//! into one document, and split it back.

use corpus_curate::code::{assemble_repo, split_repo_document, CodeFilterConfig, Repository};

fn main() -> corpus_curate::Result<()> {
    let files = vec![
        (
            "main.py".to_string(),
            "from app.core import run\n\nrun()\n".to_string(),
        ),
        (
            "app/core.py".to_string(),
            "from app.util import clamp\n\ndef run():\n    print(clamp(5, 0, 3))\n".to_string(),
        ),
        (
            "app/util.py".to_string(),
            "def clamp(x, lo, hi):\n    return max(lo, min(x, hi))\n".to_string(),
        ),
        ("app/__init__.py".to_string(), String::new()),
        ("assets/logo.png".to_string(), "\u{89}PNG".to_string()),
    ];
    let repo = Repository::new("demo", 120, files)?;

    let (doc, graph, stats) = assemble_repo(repo, &CodeFilterConfig::default())?;
    println!("edges: {:?}", graph.edges());
    println!(
        "kept {} of {} files, {} tokens",
        stats.docs_out, stats.docs_in, doc.token_count
    );

    let order: Vec<String> = split_repo_document(&doc.text)
        .unwrap()
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    println!("order: {order:?}");
    Ok(())
}
