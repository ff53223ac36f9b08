//! Writes a seeded synthetic corpus TSV and, optionally, a matching
//! contextual layer file.
//!
//! cargo run --example synthetic_corpus -- <corpus.tsv> [abstracts] [seed] [contextual.bin dim]

use std::io::Write;

use abbrev_core::corpus::tokenize_abstract;
use abbrev_core::synthetic::{generate, synthetic_contextual, SyntheticConfig};

fn main() -> abbrev_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first() else {
        eprintln!("usage: synthetic_corpus <corpus.tsv> [abstracts] [seed] [contextual.bin dim]");
        std::process::exit(1);
    };
    let parse = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(abstracts), Ok(seed)) = (parse(1, 200), parse(2, 0)) else {
        eprintln!("abstracts and seed must be non-negative integers");
        std::process::exit(1);
    };
    let corpus = generate(&SyntheticConfig {
        abstracts: abstracts as usize,
        seed,
        ..SyntheticConfig::default()
    });
    abbrev_core::atomic::write_atomic(out, |w| {
        for r in &corpus.records {
            writeln!(w, "{}\t{}", r.id, r.text)?;
        }
        Ok(())
    })?;
    if let Some(path) = args.get(3) {
        let dim = args.get(4).and_then(|d| d.parse().ok()).unwrap_or(8);
        let sentences: Vec<Vec<String>> = corpus
            .records
            .iter()
            .flat_map(tokenize_abstract)
            .map(|s| s.tokens)
            .collect();
        synthetic_contextual(&sentences, dim, seed)?.save(path)?;
    }
    Ok(())
}
