//! Synthetic dialogue corpus with specificity controlled by construction.
//!
//! Every example draws a topic and a keyword, fills one of the topic's source
//! templates, then answers either with a generic response shared by all
//! topics (probability `generic_fraction`) or with one of the topic's own
//! response templates. `{k}` in a template is replaced by the keyword, so
//! specific responses can echo the source.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, ExampleId, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub keywords: Vec<String>,
    pub sources: Vec<String>,
    pub responses: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueTemplates {
    pub generic_fraction: f64,
    /// Generic responses with relative weights.
    pub generic: Vec<(String, f64)>,
    pub topics: Vec<Topic>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticLabel {
    pub topic: usize,
    pub generic: bool,
}

/// Generated corpus plus the per-example ground truth used to build it.
#[derive(Clone, Debug)]
pub struct SyntheticDialogues {
    pub corpus: ParallelCorpus,
    pub labels: Vec<SyntheticLabel>,
}

fn topic(name: &str, keywords: &[&str], sources: &[&str], responses: &[&str]) -> Topic {
    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    Topic { name: name.into(), keywords: own(keywords), sources: own(sources), responses: own(responses) }
}

impl DialogueTemplates {
    /// Eight topics with 2 to 9 specific responses each, and a skewed set of
    /// generic responses.
    pub fn desk_default(generic_fraction: f64) -> Self {
        let generic = [
            ("i don 't know .", 0.24),
            ("i 'm not sure .", 0.19),
            ("what do you mean ?", 0.15),
            ("that 's a good idea .", 0.12),
            ("i have no idea .", 0.1),
            ("okay .", 0.08),
            ("yes .", 0.07),
            ("no .", 0.05),
        ];
        let topics = vec![
            topic(
                "food",
                &["pizza", "pasta", "soup", "salad", "bread", "cake"],
                &["do you like {k} ?", "i made some {k} today .", "should we get {k} for dinner ?"],
                &["the {k} smells great .", "let 's cook {k} tonight ."],
            ),
            topic(
                "weather",
                &["rain", "snow", "wind", "sun", "fog", "storm"],
                &["look at the {k} outside .", "is the {k} going to stop ?", "i hate the {k} ."],
                &["take an umbrella for the {k} .", "the {k} will pass by noon .", "stay inside until the {k} ends ."],
            ),
            topic(
                "work",
                &["report", "meeting", "deadline", "project", "contract", "budget"],
                &["did you finish the {k} ?", "the boss wants the {k} now .", "when is the {k} due ?"],
                &[
                    "the {k} is on your desk .",
                    "i sent the {k} this morning .",
                    "we need two more days for the {k} .",
                    "ask the manager about the {k} .",
                ],
            ),
            topic(
                "travel",
                &["train", "plane", "bus", "ship", "taxi", "car"],
                &["when does the {k} leave ?", "did you book the {k} ?", "i missed the {k} again ."],
                &[
                    "the {k} leaves at nine .",
                    "i booked two seats on the {k} .",
                    "we can catch the next {k} .",
                    "the {k} station is downtown .",
                    "the {k} is running late today .",
                ],
            ),
            topic(
                "music",
                &["guitar", "piano", "violin", "drums", "song", "band"],
                &["can you play the {k} ?", "listen to this {k} .", "i bought a new {k} ."],
                &[
                    "i play the {k} every night .",
                    "that {k} sounds beautiful .",
                    "my sister teaches {k} lessons .",
                    "the {k} needs tuning .",
                    "turn the {k} down a little .",
                    "we should record the {k} .",
                ],
            ),
            topic(
                "sport",
                &["football", "tennis", "soccer", "hockey", "golf", "boxing"],
                &["did you watch the {k} game ?", "who won the {k} match ?", "do you play {k} ?"],
                &[
                    "our team won the {k} final .",
                    "i played {k} in college .",
                    "the {k} season starts soon .",
                    "tickets for {k} are expensive .",
                    "my knee hurts after {k} .",
                    "the {k} coach was fired .",
                    "let 's watch {k} at the bar .",
                ],
            ),
            topic(
                "family",
                &["mother", "father", "brother", "sister", "uncle", "cousin"],
                &["how is your {k} ?", "did you call your {k} ?", "your {k} is here ."],
                &[
                    "my {k} is feeling better .",
                    "i will call my {k} tonight .",
                    "tell my {k} i said hello .",
                    "my {k} moved to the city .",
                    "my {k} cooked dinner for us .",
                    "i miss my {k} a lot .",
                    "my {k} is coming on sunday .",
                    "my {k} got a new job .",
                    "my {k} sends you a hug .",
                    "i visited my {k} last week .",
                    "my {k} bought a small house .",
                    "my {k} is on vacation .",
                    "my {k} forgot my birthday .",
                    "my {k} loves the garden .",
                    "i had lunch with my {k} .",
                    "my {k} started running again .",
                ],
            ),
            topic(
                "health",
                &["doctor", "nurse", "dentist", "pharmacy", "clinic", "hospital"],
                &["you should see the {k} .", "did the {k} call back ?", "where is the {k} ?"],
                &[
                    "the {k} said i am fine .",
                    "i have an appointment with the {k} .",
                    "the {k} opens at eight .",
                    "the {k} gave me some pills .",
                    "the {k} is next to the bank .",
                    "i waited two hours at the {k} .",
                    "the {k} was very kind .",
                    "call the {k} tomorrow morning .",
                    "the {k} closed early today .",
                    "the {k} lost my file .",
                    "the {k} moved to a new building .",
                    "i paid the {k} last friday .",
                    "the {k} asked about my diet .",
                    "the {k} wants to see me again .",
                    "the {k} is always busy on monday .",
                    "my insurance covers the {k} .",
                    "the {k} told me to rest .",
                    "the {k} changed my dose .",
                    "the {k} parking lot was full .",
                    "the {k} sent me a letter .",
                    "i like the new {k} .",
                    "the {k} checked my blood .",
                    "the {k} is far from home .",
                    "the {k} was late again .",
                ],
            ),
        ];
        Self {
            generic_fraction,
            generic: generic.iter().map(|(s, w)| (s.to_string(), *w)).collect(),
            topics,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.generic_fraction) {
            return Err(Error::Usage(format!("generic fraction {} outside [0, 1]", self.generic_fraction)));
        }
        if self.generic.is_empty() || self.topics.is_empty() {
            return Err(Error::Usage("template sets must be non-empty".into()));
        }
        if self.topics.iter().any(|t| t.keywords.is_empty() || t.sources.is_empty() || t.responses.is_empty()) {
            return Err(Error::Usage("every topic needs keywords, sources and responses".into()));
        }
        Ok(())
    }

    fn all_text(&self) -> impl Iterator<Item = String> + '_ {
        let generic = self.generic.iter().map(|g| g.0.clone());
        let topical = self.topics.iter().flat_map(|t| {
            t.keywords.iter().flat_map(move |k| {
                t.sources.iter().chain(&t.responses).map(move |tpl| tpl.replace("{k}", k))
            })
        });
        generic.chain(topical)
    }
}

/// Generates `n` examples; see the module docs for the sampling scheme.
pub fn gen_synthetic_dialogues(templates: &DialogueTemplates, n: usize, seed: u64) -> Result<SyntheticDialogues> {
    templates.validate()?;
    let all: Vec<String> = templates.all_text().collect();
    let vocab = Arc::new(Vocabulary::build(all.iter().map(String::as_str), usize::MAX, 1));
    let generic_pick = WeightedIndex::new(templates.generic.iter().map(|g| g.1)).map_err(|e| Error::Usage(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut examples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.gen_range(0..templates.topics.len());
        let topic = &templates.topics[t];
        let kw = &topic.keywords[rng.gen_range(0..topic.keywords.len())];
        let source = topic.sources[rng.gen_range(0..topic.sources.len())].replace("{k}", kw);
        let generic = rng.gen_bool(templates.generic_fraction);
        let target = if generic {
            templates.generic[generic_pick.sample(&mut rng)].0.clone()
        } else {
            topic.responses[rng.gen_range(0..topic.responses.len())].replace("{k}", kw)
        };
        examples.push(Example { id: i as ExampleId, source: vocab.encode(&source), target: vocab.encode(&target) });
        labels.push(SyntheticLabel { topic: t, generic });
    }
    Ok(SyntheticDialogues { corpus: ParallelCorpus::new(vocab, examples)?, labels })
}
