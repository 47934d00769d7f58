//! Renders synthetic flows to text and builds zero-shot and few-shot prompts.

use flowprompt::flags::{fit_rarity_table, FlagThresholds};
use flowprompt::prompt::{build_prompt, select_exemplars, PromptMode, PromptTemplate};
use flowprompt::render::{FlowRenderer, RenderPolicy};
use flowprompt::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let data = generate(&SynthConfig {
        n_train: 400,
        n_test: 40,
        ..Default::default()
    });
    let thresholds = FlagThresholds::default();
    let rarity = fit_rarity_table(&data.train, &thresholds)?;
    let renderer = FlowRenderer::new(thresholds, rarity, RenderPolicy::default());

    for rec in data.test.iter().take(3) {
        let (text, flags) = renderer.render(rec)?;
        println!("[{} {}] {} flags, {} chars", rec.id, rec.label, flags.count(), text.char_count);
        println!("  {}", text.text);
    }

    let template = PromptTemplate::default();
    let (target, pool) = data.test.split_first().expect("non-empty");
    let (flow, _) = renderer.render(target)?;
    println!("\n--- zero-shot ---\n{}", build_prompt(PromptMode::ZeroShot, &flow, &template, &[])?);

    let dev: Vec<_> = pool.iter().collect();
    let exemplars = select_exemplars(&dev, 1, 42, &renderer)?;
    let mode = PromptMode::FewShot { k_per_class: 1 };
    println!("--- {mode} ---\n{}", build_prompt(mode, &flow, &template, &exemplars)?);
    Ok(())
}
