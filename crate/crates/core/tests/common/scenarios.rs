//! Prompt scenarios shared by the golden-file tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rarex_core::corpus::{ConceptType, EntityMention, Lang, REInstance};
use rarex_core::label::RelationLabel;
use rarex_core::prompt::{assemble_prompt, render_demonstration, CoTStyle, DemoOrder, RenderedPrompt, Templates};

pub fn instance(
    id: &str,
    sentence: &str,
    e1: (&str, ConceptType),
    e2: (&str, ConceptType),
    gold: RelationLabel,
) -> REInstance {
    let located = |(surface, t): (&str, ConceptType)| {
        EntityMention::locate(sentence, surface, t).unwrap_or_else(|| panic!("`{surface}` not in `{sentence}`"))
    };
    REInstance { id: id.into(), lang: Lang::En, sentence: sentence.into(), e1: located(e1), e2: located(e2), gold }
}

pub const STATIC_FEW_SHOT_REASONING: &str = r#"Let's think step by step:
Identify the types of entities: Urinalysis is a test; trace glucose is a medical problem.
Determine the relationship between the entities by analysing the sentence: The test (urinalysis) reveals the medical problem (trace glucose)
Since the test reveals the medical finding, the relation is:"#;

pub const SQP_REASONING: &str = r#"## Analyzing the Relationship

The sentence states: "Further testing revealed hyperparathyroidism as evidenced by an elevated PTH."

**Questions to explore the relationship:**

* **TrIP:** Did the further testing improve the elevated PTH?

* **TrWP:** Did the further testing worsen the elevated PTH?

* **TrCP:** Did the further testing cause the elevated PTH?

* **TrAP:** Was the further testing administered for the elevated PTH?

* **TrNAP:** Was the further testing not administered due to the elevated PTH?

* **TeRP:** Did the further testing reveal the elevated PTH?

* **TeCP:** Did the further testing investigate the elevated PTH?

* **PIP:** Does an elevated PTH indicate hyperparathyroidism?

**Answers:**

* **TrIP:** No. The sentence doesn't mention any improvement in PTH levels.

* **TrWP:** No. The sentence doesn't mention any worsening of PTH levels.

* **TrCP:** No. The sentence doesn't suggest that the further testing caused the elevated PTH.

* **TrAP:**  It's likely that the further testing was done to investigate the elevated PTH, but the sentence doesn't explicitly state it.

* **TrNAP:** No. The sentence suggests the testing was done because of the elevated PTH.

* **TeRP:** Yes. The sentence explicitly states that the further testing "revealed" the elevated PTH.

* **TeCP:** Yes. The sentence suggests the testing was conducted to investigate the elevated PTH.

* **PIP:** Yes. Hyperparathyroidism is characterized by an overproduction of parathyroid hormone (PTH), leading to elevated PTH levels.

**Conclusion:**

Based on the answers, the relationship between further testing and an elevated PTH can be categorized as **TEST REVEALS MEDICAL PROBLEM**. The further testing revealed the elevated PTH, which in turn indicated the underlying medical problem of hyperparathyroidism."#;

pub const GOLD_LABEL_REASONING: &str = r#"In the sentence "5. Dulcolax 10 to 20 mg PR b.i.d. p.r.n. constipation," the relationship between "Dulcolax" and "constipation" is categorised as "TREATMENT IS ADMINISTERED FOR MEDICAL PROBLEM" because Dulcolax is a medication specifically used to treat constipation.
1. **Dulcolax**: This is a brand name for a laxative that contains the active ingredient bisacodyl. It is designed to stimulate bowel movements and is commonly prescribed or recommended for individuals suffering from constipation.
2. **Constipation**: This is a medical condition characterised by infrequent bowel movements or difficulty in passing stool. It can be uncomfortable and is considered a health issue that often requires treatment.
3. **Treatment Administration**: The notation "10 to 20 mg PR b.i.d. p.r.n." indicates the dosage and frequency of administering Dulcolax -- specifically, that it should be taken rectally (PR) twice a day (b.i.d.) as needed (p.r.n.) to manage the medical problem of constipation.
Therefore, the statement illustrates that Dulcolax serves as a therapeutic agent aimed at resolving or alleviating the medical issue of constipation, clearly defining the relationship as one where a treatment is provided for a specific medical problem."#;

pub fn urinalysis_protein() -> REInstance {
    instance(
        "test-urinalysis",
        "Urinalysis was positive for protein.",
        ("Urinalysis", ConceptType::Test),
        ("positive for protein", ConceptType::Problem),
        RelationLabel::TeRP,
    )
}

pub fn urinalysis_glucose() -> REInstance {
    instance(
        "demo-urinalysis",
        "Urinalysis revealed trace glucose, no ketones, no red cells, no white cells and less than one epithelial cell.",
        ("Urinalysis", ConceptType::Test),
        ("trace glucose", ConceptType::Problem),
        RelationLabel::TeRP,
    )
}

pub fn further_testing() -> REInstance {
    instance(
        "demo-pth",
        "Further testing revealed hyperparathyroidism as evidenced by an elevated PTH .",
        ("Further testing", ConceptType::Test),
        ("an elevated PTH", ConceptType::Problem),
        RelationLabel::TeRP,
    )
}

pub fn work_up() -> REInstance {
    instance(
        "test-workup",
        "Work up was begun for the possible myeloproliferative / myelodysplastic disorder associated with the hyper-eosinophilic syndrome .",
        ("Work up", ConceptType::Test),
        ("the hyper-eosinophilic syndrome", ConceptType::Problem),
        RelationLabel::TeCP,
    )
}

pub fn dulcolax_demo() -> REInstance {
    instance(
        "demo-dulcolax",
        "5. Dulcolax 10 to 20 mg PR b.i.d. p.r.n. constipation.",
        ("Dulcolax", ConceptType::Treatment),
        ("constipation", ConceptType::Problem),
        RelationLabel::TrAP,
    )
}

pub fn dulcolax_test() -> REInstance {
    instance(
        "test-dulcolax",
        "Peri-Colace , two capsules PO b.i.d.; Dulcolax , 10 mg. PR q.day , p.r.n. constipation.",
        ("Dulcolax", ConceptType::Treatment),
        ("constipation", ConceptType::Problem),
        RelationLabel::TrAP,
    )
}

pub fn beta_blocker_demo() -> REInstance {
    instance(
        "demo-beta-blocker",
        "Hypertension was managed with beta blocker and ACE inhibitor and Integrilin was continued post MI for 18 hours .",
        ("beta blocker", ConceptType::Treatment),
        ("Hypertension", ConceptType::Problem),
        RelationLabel::TrAP,
    )
}

pub fn bradycardia_test() -> REInstance {
    instance(
        "test-bradycardia",
        "He remained in sinus bradycardia ( rate 50-60 ) and tolerated low dose beta blockade .",
        ("low dose beta blockade", ConceptType::Treatment),
        ("sinus bradycardia", ConceptType::Problem),
        RelationLabel::TrAP,
    )
}

/// Five extra demonstrations covering several labels.
pub fn mixed_demos() -> Vec<REInstance> {
    vec![
        urinalysis_glucose(),
        dulcolax_demo(),
        beta_blocker_demo(),
        instance(
            "demo-cough",
            "His cough worsened after starting lisinopril .",
            ("lisinopril", ConceptType::Treatment),
            ("His cough", ConceptType::Problem),
            RelationLabel::TrCP,
        ),
        instance(
            "demo-chest-pain",
            "Chest pain was concerning for myocardial infarction .",
            ("Chest pain", ConceptType::Problem),
            ("myocardial infarction", ConceptType::Problem),
            RelationLabel::PIP,
        ),
    ]
}

pub struct Scenario {
    pub name: &'static str,
    pub prompt: RenderedPrompt,
}

fn render(test: &REInstance, demos: &[(REInstance, Option<&str>)], style: CoTStyle) -> RenderedPrompt {
    let t = Templates::builtin_en();
    let rendered: Vec<_> = demos.iter().map(|(d, cot)| render_demonstration(d, style, *cot, &t).unwrap()).collect();
    assemble_prompt(test, &rendered, style, DemoOrder::AscendingSimilarity, &t).unwrap()
}

pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario { name: "static_zero_shot", prompt: render(&urinalysis_protein(), &[], CoTStyle::StaticZeroShot) },
        Scenario {
            name: "static_few_shot",
            prompt: render(
                &urinalysis_protein(),
                &[(urinalysis_glucose(), Some(STATIC_FEW_SHOT_REASONING))],
                CoTStyle::StaticFewShot,
            ),
        },
        Scenario {
            name: "self_questioning",
            prompt: render(&work_up(), &[(further_testing(), Some(SQP_REASONING))], CoTStyle::Sqp),
        },
        Scenario {
            name: "gold_label",
            prompt: render(&dulcolax_test(), &[(dulcolax_demo(), Some(GOLD_LABEL_REASONING))], CoTStyle::GoldLabel),
        },
        Scenario {
            name: "output_format",
            prompt: render(&bradycardia_test(), &[(beta_blocker_demo(), None)], CoTStyle::OutputFormat),
        },
        Scenario {
            name: "five_shot_plain",
            prompt: render(
                &urinalysis_protein(),
                &mixed_demos().into_iter().map(|d| (d, None)).collect::<Vec<_>>(),
                CoTStyle::None,
            ),
        },
    ]
}

/// Resolves from any crate in the workspace so other test targets can
/// include this module.
pub fn golden_dir() -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden")).to_path_buf()
}

/// Compares against `<golden_dir>/<name>.txt`, or rewrites it when
/// `UPDATE_GOLDEN=1`.
pub fn check_golden(name: &str, text: &str) -> Result<(), String> {
    let path = golden_dir().join(format!("{name}.txt"));
    if std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1") {
        std::fs::write(&path, text).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to record)", path.display()))?;
    if expected == text {
        Ok(())
    } else {
        let line = expected.lines().zip(text.lines()).position(|(a, b)| a != b).map_or(0, |i| i + 1);
        Err(format!("{} differs from the rendered prompt (first differing line {line})", path.display()))
    }
}
