//! Generates the planted-motif corpus, splits it five ways and shows how the
//! motif scan separates the classes.
//!
//! ```bash
//! cargo run --example corpus
//! ```

use seqadv::corpus::{generate_corpus, motif_scan_score, split, CorpusSpec, SplitSpec, Subset};

fn main() -> seqadv::Result<()> {
    let spec = CorpusSpec {
        size: 400,
        seed: 11,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let motifs = spec.resolve_motifs();
    for (k, m) in motifs.iter().enumerate() {
        println!("motif {k}: {m:?}");
    }

    let first = corpus.iter().find(|e| e.is_malware()).expect("corpus has malware");
    println!("example {} (malware): {:?}", first.id, first.sequence.indices());

    let splits = split(&corpus, &SplitSpec::default(), spec.seed)?;
    for subset in Subset::ALL {
        let part = splits.select(&corpus, subset)?;
        let malware = part.iter().filter(|e| e.is_malware()).count();
        let hits = part
            .iter()
            .filter(|e| (motif_scan_score(e.sequence.indices(), &motifs) > 0.5) == e.is_malware())
            .count();
        println!(
            "{:<15} {:>4} examples, {:>3} malware, motif scan agrees on {hits}",
            subset.name(),
            part.len(),
            malware
        );
    }
    Ok(())
}
