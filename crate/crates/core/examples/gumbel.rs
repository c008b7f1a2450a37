//! Gumbel-Softmax samples at several temperatures, and the hard symbol that
//! shares their noise.
//!
//! ```bash
//! cargo run --example gumbel
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqadv::attack::{gumbel_softmax, sample_api, sample_gumbel_noise};

fn main() -> seqadv::Result<()> {
    let pi = [0.05, 0.15, 0.5, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    for _ in 0..3 {
        let z = sample_gumbel_noise(pi.len(), &mut rng);
        let hard = sample_api(&pi, &z);
        print!("hard {hard} |");
        for temp in [10.0, 1.0, 0.1] {
            let y = gumbel_softmax(&pi, &z, temp)?;
            let shown: Vec<String> = y.iter().map(|v| format!("{v:.3}")).collect();
            print!(" t={temp}: [{}]", shown.join(" "));
        }
        println!();
    }

    let draws = 20_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let z = sample_gumbel_noise(pi.len(), &mut rng);
        counts[sample_api(&pi, &z)] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        println!("symbol {k}: pi {:.2}, empirical {:.3}", pi[k], *c as f64 / draws as f64);
    }
    Ok(())
}
