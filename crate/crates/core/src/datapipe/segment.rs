use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One recognised word with its time span in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub w: String,
    pub t0: f64,
    pub t1: f64,
}

impl Word {
    pub fn new(w: impl Into<String>, t0: f64, t1: f64) -> Self {
        Word {
            w: w.into(),
            t0,
            t1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSentence {
    pub text: String,
    pub t0: f64,
    pub t1: f64,
}

impl TranscriptSentence {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', ')', ']']);
    trimmed.ends_with(['.', '!', '?'])
}

/// Groups words into sentences ending at `.`, `!` or `?`. Words after the
/// last terminal mark form a final sentence.
pub fn segment(words: &[Word]) -> Result<Vec<TranscriptSentence>> {
    for (i, w) in words.iter().enumerate() {
        let ordered = w.t0.is_finite() && w.t1.is_finite() && w.t0 <= w.t1;
        let after_prev = i == 0 || w.t0 >= words[i - 1].t1;
        if !ordered || !after_prev {
            return Err(Error::Input {
                index: i,
                reason: format!(
                    "non-monotone timestamps [{}, {}] at word {:?}",
                    w.t0, w.t1, w.w
                ),
            });
        }
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if ends_sentence(&w.w) || i + 1 == words.len() {
            let span = &words[start..=i];
            out.push(TranscriptSentence {
                text: span
                    .iter()
                    .map(|w| w.w.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                t0: span[0].t0,
                t1: span[span.len() - 1].t1,
            });
            start = i + 1;
        }
    }
    validate_sentences(&out)?;
    Ok(out)
}

/// Checks the sentence invariants: positive durations, time-ordered,
/// non-overlapping.
pub fn validate_sentences(sentences: &[TranscriptSentence]) -> Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        if !(s.t1 > s.t0) || !s.t0.is_finite() || !s.t1.is_finite() {
            return Err(Error::Input {
                index: i,
                reason: format!("sentence has non-positive duration [{}, {}]", s.t0, s.t1),
            });
        }
        if i > 0 && s.t0 < sentences[i - 1].t1 {
            return Err(Error::Input {
                index: i,
                reason: "sentence overlaps its predecessor".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(text: &str) -> Vec<Word> {
        text.split_whitespace()
            .enumerate()
            .map(|(i, w)| Word::new(w, i as f64, i as f64 + 1.0))
            .collect()
    }

    #[test]
    fn two_sentences() {
        let s = segment(&uniform("Hello there. How are you?")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].text, "Hello there.");
        assert_eq!((s[1].t0, s[1].t1), (2.0, 5.0));
    }

    #[test]
    fn no_punctuation_is_one_sentence() {
        let s = segment(&uniform("just some words without an end")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].t0, s[0].t1), (0.0, 6.0));
    }

    #[test]
    fn reports_offending_index() {
        let mut words = uniform("a b c d");
        words[2].t0 = 0.5;
        match segment(&words) {
            Err(Error::Input { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn closing_quote_after_mark() {
        let s = segment(&uniform("He said \"stop.\" Then left.")).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn thirty_sentence_oracle() {
        let mut words = Vec::new();
        let mut boundaries = Vec::new();
        let mut t = 0.0;
        for k in 0..30 {
            let len = 1 + (k * 7) % 9;
            for j in 0..len {
                let mark = match (j + 1 == len, k % 3) {
                    (false, _) => "",
                    (true, 0) => ".",
                    (true, 1) => "!",
                    (true, _) => "?",
                };
                words.push(Word::new(format!("w{k}_{j}{mark}"), t, t + 0.4));
                t += 0.5;
            }
            boundaries.push(words.len() - 1);
        }
        let s = segment(&words).unwrap();
        assert_eq!(s.len(), 30);
        for (sent, &last) in s.iter().zip(&boundaries) {
            assert_eq!(sent.t1, words[last].t1);
            assert!(sent.text.ends_with(&words[last].w));
        }
    }
}
