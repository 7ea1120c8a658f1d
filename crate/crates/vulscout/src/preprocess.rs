//! Line numbering of function source, and its inverse.
//!
//! Detection agents reference code by line, so every sample is converted to a
//! numbered form up front: line k renders as `L<k>: <text>`. Splitting treats
//! `\n` and `\r\n` uniformly, a final line without a newline still counts as a
//! line, and numbering is 1-based.

use thiserror::Error;

use crate::model::{CodeSample, NumberedFunction, NumberedLine};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("sample {0:?} has empty source")]
    EmptySource(String),
    #[error("gap in numbering: expected line {expected}, found {found}")]
    GapInNumbering { expected: u32, found: u32 },
}

/// Assign 1-based line numbers to a sample's source.
pub fn number_lines(sample: &CodeSample) -> Result<NumberedFunction, PreprocessError> {
    if sample.source.is_empty() {
        return Err(PreprocessError::EmptySource(sample.id.clone()));
    }
    let lines = sample
        .source
        .lines()
        .enumerate()
        .map(|(i, text)| NumberedLine {
            line_no: (i + 1) as u32,
            text: text.to_string(),
        })
        .collect();
    Ok(NumberedFunction {
        sample_id: sample.id.clone(),
        lines,
    })
}

/// Recover the raw source from a numbered function.
///
/// Inverse of [`number_lines`] up to trailing-newline normalization: the
/// result joins lines with `\n` and carries no trailing newline.
pub fn strip_numbers(numbered: &NumberedFunction) -> Result<String, PreprocessError> {
    for (i, line) in numbered.lines.iter().enumerate() {
        let expected = (i + 1) as u32;
        if line.line_no != expected {
            return Err(PreprocessError::GapInNumbering {
                expected,
                found: line.line_no,
            });
        }
    }
    Ok(numbered
        .lines
        .iter()
        .map(|l| l.text.as_str())
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Normalize raw source the way the numbering round trip does: `\r\n`
/// becomes `\n` and a single trailing newline is dropped.
pub fn normalize_source(source: &str) -> String {
    let unified = source.replace("\r\n", "\n");
    unified
        .strip_suffix('\n')
        .map(str::to_string)
        .unwrap_or(unified)
}

/// Render the numbered form used in prompts: one `L<k>: <text>` per line.
pub fn render_numbered(numbered: &NumberedFunction) -> String {
    numbered
        .lines
        .iter()
        .map(|l| format!("L{}: {}", l.line_no, l.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Label, LanguageHint};

    fn sample(source: &str) -> CodeSample {
        CodeSample {
            id: "s".to_string(),
            source: source.to_string(),
            pair_id: None,
            label: Label::Unknown,
            project: String::new(),
            cwe_truth: None,
            language_hint: LanguageHint::C,
        }
    }

    #[test]
    fn single_line_renders_in_l_format() {
        let nf = number_lines(&sample("int foo()")).unwrap();
        assert_eq!(nf.lines.len(), 1);
        assert_eq!(nf.lines[0].line_no, 1);
        assert_eq!(nf.lines[0].text, "int foo()");
        assert_eq!(render_numbered(&nf), "L1: int foo()");
    }

    #[test]
    fn two_lines_are_contiguous() {
        let nf = number_lines(&sample("a\nb")).unwrap();
        let pairs: Vec<(u32, &str)> = nf.lines.iter().map(|l| (l.line_no, l.text.as_str())).collect();
        assert_eq!(pairs, vec![(1, "a"), (2, "b")]);
    }

    #[test]
    fn blank_lines_get_their_own_number() {
        let nf = number_lines(&sample("a\n\nb")).unwrap();
        assert_eq!(nf.lines[1].line_no, 2);
        assert_eq!(nf.lines[1].text, "");
        assert_eq!(nf.lines.len(), 3);
    }

    #[test]
    fn empty_source_is_rejected() {
        assert_eq!(
            number_lines(&sample("")),
            Err(PreprocessError::EmptySource("s".to_string()))
        );
    }

    #[test]
    fn round_trip_matches_normalized_source() {
        for src in ["a\nb", "a\r\nb\r\n", "a\n\n", "one", "\ttabbed\n  spaces", "\n"] {
            let nf = number_lines(&sample(src)).unwrap();
            assert_eq!(strip_numbers(&nf).unwrap(), normalize_source(src), "{src:?}");
        }
    }

    #[test]
    fn gap_is_detected() {
        let nf = NumberedFunction {
            sample_id: "s".to_string(),
            lines: vec![
                NumberedLine { line_no: 1, text: "a".to_string() },
                NumberedLine { line_no: 3, text: "b".to_string() },
            ],
        };
        assert_eq!(
            strip_numbers(&nf),
            Err(PreprocessError::GapInNumbering { expected: 2, found: 3 })
        );
    }

    #[test]
    fn empty_list_yields_empty_string() {
        let nf = NumberedFunction {
            sample_id: "s".to_string(),
            lines: vec![],
        };
        assert_eq!(strip_numbers(&nf).unwrap(), "");
    }

    #[test]
    fn numbering_is_pure() {
        let s = sample("x\ny\r\nz");
        assert_eq!(number_lines(&s).unwrap(), number_lines(&s).unwrap());
    }
}
