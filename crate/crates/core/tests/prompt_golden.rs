use selftalk::features::{Contour, FeatureDescriptors, Level, Span};
use selftalk::prompt::{render, PromptContext, Shot, Template, UtteranceBlock};
use selftalk::Class;

fn golden(t: Template) -> String {
    let path = format!("{}/tests/golden/{}.txt", env!("CARGO_MANIFEST_DIR"), t.as_str());
    std::fs::read_to_string(path).unwrap()
}

fn query() -> UtteranceBlock {
    UtteranceBlock {
        history: (1..=11).map(|i| format!("h{i:02}")).collect(),
        text: "come on come on".into(),
        descriptors: Some(FeatureDescriptors {
            pitch_variance: Level::High,
            pitch_mean: Level::Low,
            intensity_mean: Level::High,
            pitch_range: Span::Wide,
            intensity_range: Span::Wide,
            contour: Contour::SuddenRise,
        }),
        duration_s: 0.928813,
    }
}

fn shots() -> Vec<Shot> {
    vec![
        Shot {
            block: UtteranceBlock {
                history: vec!["deuce".into(), "fifteen love".into()],
                text: "my serve is terrible".into(),
                descriptors: Some(FeatureDescriptors {
                    pitch_variance: Level::Low,
                    pitch_mean: Level::Midium,
                    intensity_mean: Level::Low,
                    pitch_range: Span::Narrow,
                    intensity_range: Span::Midium,
                    contour: Contour::GradualFall,
                }),
                duration_s: 1.5,
            },
            label: Class::NegativeSelfTalk,
        },
        Shot {
            block: UtteranceBlock {
                history: vec![],
                text: "nice shot".into(),
                descriptors: Some(FeatureDescriptors {
                    pitch_variance: Level::Midium,
                    pitch_mean: Level::High,
                    intensity_mean: Level::High,
                    pitch_range: Span::Midium,
                    intensity_range: Span::Wide,
                    contour: Contour::Steady,
                }),
                duration_s: 0.3,
            },
            label: Class::PositiveSelfTalk,
        },
    ]
}

#[allow(dead_code)]
pub fn check_all() -> Vec<(Template, bool)> {
    Template::ALL
        .into_iter()
        .map(|t| {
            let shots = if t.is_few_shot() { shots() } else { vec![] };
            let got = render(&PromptContext { template: t, current: query(), shots }).unwrap();
            (t, got == golden(t))
        })
        .collect()
}

#[test]
fn prompts_match_golden_files() {
    for t in Template::ALL {
        let shots = if t.is_few_shot() { shots() } else { vec![] };
        let got = render(&PromptContext { template: t, current: query(), shots }).unwrap();
        assert_eq!(got, golden(t), "template {t}");
    }
}

#[test]
fn eleventh_oldest_history_item_is_dropped() {
    let got = render(&PromptContext { template: Template::TextZero, current: query(), shots: vec![] }).unwrap();
    assert!(got.contains("\"h02\", \"h03\""));
    assert!(!got.contains("\"h01\""));
}
