//! Train on a whitespace-tokenized text file, save the checkpoint, reload
//! it and score held-out text with a frozen vocabulary.
//!
//!     cargo run --release --example text_corpus -- corpus.txt [model.scvi]

use scvi::corpus::{load_corpus, split, OovPolicy, VocabPolicy};
use scvi::persist::{load_model, save_model};
use scvi::train::{Algorithm, Trainer, TrainConfig};

const FALLBACK: &str = "the cat sat on the mat\nthe dog sat on the log\na cat saw a dog\nthe dog saw the cat on the mat\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = std::env::temp_dir();
    let path = match args.next() {
        Some(p) => p.into(),
        None => {
            let p = dir.join("scvi_text_corpus.txt");
            std::fs::write(&p, FALLBACK.repeat(25))?;
            p
        }
    };
    let model_path = args.next().map(Into::into).unwrap_or_else(|| dir.join("scvi_text_corpus.scvi"));

    let (corpus, report) = load_corpus(&path, &VocabPolicy::Build)?;
    println!(
        "{} sequences, {} tokens, V = {} ({} empty lines skipped)",
        corpus.len(),
        corpus.token_count(),
        corpus.vocab_size(),
        report.skipped_empty_lines
    );
    let (train_set, test_set) = split(&corpus, 0.9, 0)?;

    let config = TrainConfig {
        algorithm: Algorithm::ScviHdpHmm,
        states: 8,
        kappa: 0.6,
        minibatch: 10,
        large_batch: 20,
        passes: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&train_set, &test_set.sequences, &config)?;
    trainer.run(|r| {
        println!("pass {:4.1}  held-out LL {:.4}  K_eff {}", r.pass, r.heldout_ll, r.k_effective);
        Ok(())
    })?;
    save_model(&model_path, &trainer.into_checkpoint())?;

    let ck = load_model(&model_path)?;
    let policy = VocabPolicy::Frozen { vocab: ck.vocab.clone(), oov: OovPolicy::Unk };
    let (heldout, _) = load_corpus(&path, &policy)?;
    let ll = ck.model.predictive_log_likelihood(&heldout.sequences)?;
    println!("reloaded {} ({} states): LL on full file {ll:.4}", model_path.display(), ck.model.states());
    Ok(())
}
