//! Template and query texts are pinned by checksum. The hashes were computed
//! from an independent extraction of the published prompt tables, so any edit
//! to an asset file shows up here.

use sha2::{Digest, Sha256};
use winoforge_core::prompt::{
    query_text, render_evaluation_prompt, render_generation_prompt, template_text, QueryKind, Role, TemplateKind,
};
use winoforge_core::schema::{BiasTag, Category, Resolution, WscInstance};

fn sha(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

const GENERATION: [(TemplateKind, &str); 5] = [
    (TemplateKind::Toe, "dc5c052924918ca03206a506eb60abd3d1905926b344e77fc0cfabeb7d4718d3"),
    (TemplateKind::Tot, "9591b63938d9ef5d29be9593988e1ea5897477b203c5ceb34da93877e0a29a60"),
    (TemplateKind::Coe, "c1f7569482cbfdb09e403b375e0c865854a8e622684a674a2b7d9a547ef86929"),
    (TemplateKind::Cot, "2e4c45d62aa33a2225ee5432f11294329ec0d1c1e94bbd165bdac6705187a081"),
    (TemplateKind::ScCot, "236246357cc11c32e689e11dc3b863e5e20c52550b25fe8f4c13cd003fda4be1"),
];

const EVALUATION: [(TemplateKind, &str); 5] = [
    (TemplateKind::Toe, "86121680f83217f768c41c1c17bcbb3b36c3d15326a8640f763f0858ed0cf3dd"),
    (TemplateKind::Tot, "5a57b8b4f3602f5e8db2265b407a7294c610fd382e004888eac7172654085c63"),
    (TemplateKind::Coe, "8e8cc968732b5dbd9809b2ab9485366270d059ab6a3a99e3bbdde90c0851fb69"),
    (TemplateKind::Cot, "c10cd2cf1dd1c89c20aa9025b1d48ed61a96d85df551e52d4e9d8d364b697631"),
    (TemplateKind::ScCot, "927bc0009351cadab479b22fd5abc26a5aeb0267df57504be90f591b429f8640"),
];

#[test]
fn generation_templates_match_checksums() {
    for (kind, want) in GENERATION {
        assert_eq!(sha(template_text(kind, Role::Generation)), want, "{kind}");
    }
}

#[test]
fn evaluation_templates_match_checksums() {
    for (kind, want) in EVALUATION {
        assert_eq!(sha(template_text(kind, Role::Evaluation)), want, "{kind}");
    }
}

#[test]
fn query_texts_match_checksums() {
    let want = [
        (QueryKind::Wdq, "873cdcd312b283689e5907916ebce761ce89fbe0b77edb0c3f6777280c80eb19"),
        (QueryKind::Wiq, "039baa7a65d82b5192f5927852337062651e995790e6811ccf9337048e33fbd1"),
        (QueryKind::Ambiguous, "5a582a99d7fbf63ea117f6ad22998dc9a196dd346793af7a88cf0f5e3ede58f7"),
        (QueryKind::Offensive(BiasTag::Race), "b88af621df0ee1c0127b2623adc97cbd8bf144e61fd39ebb6c3d1b5b22687dce"),
        (QueryKind::Offensive(BiasTag::Religion), "91627119b3ab97b98c09a6cef4a06423c6febcfa8b23191c5e20feb53ab49c64"),
        (QueryKind::Offensive(BiasTag::Sex), "21720f6f894d7660a57166b227687c08cc7a4d19d23032a319ec942341e4a7f2"),
        (QueryKind::Offensive(BiasTag::Appearance), "de7e490088f45ecb6f1d4059dc308c3498ab3e984423d118414c7b820a37a8da"),
        (QueryKind::Offensive(BiasTag::Socioeconomic), "1a0f9105eb4d1f13e484e7b0958868ce955dcfc9130303f3f4e73cb60bd9dac2"),
    ];
    for (q, h) in want {
        assert_eq!(sha(query_text(q).unwrap()), h, "{q}");
    }
}

#[test]
fn nt_has_no_preamble() {
    assert_eq!(template_text(TemplateKind::Nt, Role::Generation), "");
    assert_eq!(template_text(TemplateKind::Nt, Role::Evaluation), "");
}

#[test]
fn rendered_prompts_start_with_the_preamble_verbatim() {
    for (kind, _) in GENERATION {
        let p = render_generation_prompt(kind, QueryKind::Wdq, 3, &[]).unwrap();
        assert!(p.starts_with(template_text(kind, Role::Generation).trim_end()), "{kind}");
    }
    let inst = WscInstance {
        id: "t".into(),
        sentence: "The trophy doesn't fit into the brown suitcase because it's too large.".into(),
        candidate_a: "The trophy".into(),
        candidate_b: "the brown suitcase".into(),
        pronoun: "it".into(),
        gold: Resolution::FirstEntity,
        category: Category::Traditional,
        generator_model: "m".into(),
        pair_id: None,
        special_word: None,
    };
    for (kind, _) in EVALUATION {
        let p = render_evaluation_prompt(kind, &inst, &[]).unwrap();
        assert!(p.starts_with(template_text(kind, Role::Evaluation).trim_end()), "{kind}");
    }
}

#[test]
fn literal_openings() {
    let toe = template_text(TemplateKind::Toe, Role::Generation);
    assert!(toe.starts_with("Envision a scenario where three separate experts"));
    let sc = template_text(TemplateKind::ScCot, Role::Evaluation);
    assert!(sc.contains("repeat the prompt/answer three times and then do a majority vote"));
    let coe = template_text(TemplateKind::Coe, Role::Evaluation);
    assert!(coe.starts_with("Imagine three expert linguists collaboratively answering a question."));
}
