//! Prints the verdict grammar, samples from it, and checks candidate outputs
//! against both the grammar and the strict parser.

use flowprompt::grammar::{accepts, emit_gbnf, parse_verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let spec = emit_gbnf();
    println!("{}", spec.gbnf_text);

    let grammar = spec.compile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("samples:");
    for _ in 0..5 {
        let s = grammar.sample(&mut rng);
        let v = parse_verdict(&s)?;
        println!("  {}  -> {} {}", s.trim_end(), v.prediction.as_str(), v.p_attack);
    }

    let candidates = [
        r#"{"prediction":"attack","p_attack":0.8731}"#,
        r#"{"prediction": "benign", "p_attack": 0.02}"#,
        r#"{"prediction":"attack","p_attack":1.5}"#,
        r#"{"prediction":"Attack","p_attack":0.9}"#,
        r#"OK: {"prediction":"benign","p_attack":0.1}"#,
    ];
    println!("\ncandidates:");
    for c in candidates {
        let verdict = match parse_verdict(c) {
            Ok(v) => format!("ok, canonical {}", v.canonical_json()),
            Err(e) => format!("rejected: {e}"),
        };
        println!("  grammar={:<5} {c}\n      {verdict}", accepts(&spec, c));
    }
    Ok(())
}
