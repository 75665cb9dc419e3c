//! Render one utterance under each of the four prompt templates.

use selftalk::features::{Contour, FeatureDescriptors, Level, Span};
use selftalk::prompt::{self, PromptContext, Shot, Template, UtteranceBlock};
use selftalk::Class;

fn main() -> selftalk::Result<()> {
    let current = UtteranceBlock {
        history: vec!["fifteen thirty".into(), "out".into(), "come on".into()],
        text: "why do I keep doing that".into(),
        descriptors: Some(FeatureDescriptors {
            pitch_variance: Level::High,
            pitch_mean: Level::Midium,
            intensity_mean: Level::High,
            pitch_range: Span::Wide,
            intensity_range: Span::Midium,
            contour: Contour::GradualFall,
        }),
        duration_s: 1.42,
    };
    let shot = Shot {
        block: UtteranceBlock { history: vec![], text: "let's go".into(), descriptors: current.descriptors, duration_s: 0.6 },
        label: Class::PositiveSelfTalk,
    };

    for template in Template::ALL {
        let shots = if template.is_few_shot() { vec![shot.clone()] } else { vec![] };
        let text = prompt::render(&PromptContext { template, current: current.clone(), shots })?;
        println!("===== {template} ({} chars)\n{text}", text.len());
    }
    Ok(())
}
