//! Splits program text into immutable and mutable segments.
//!
//! A line whose trimmed content ends with `EVOLVE-BLOCK-START` opens a mutable
//! region and one ending with `EVOLVE-BLOCK-END` closes it. The marker lines
//! themselves are immutable, so segments always alternate
//! `immutable (mutable immutable)*` and concatenating them gives back the
//! input byte for byte. Marker detection ignores the comment syntax of the
//! host language.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MARKER_START: &str = "EVOLVE-BLOCK-START";
pub const MARKER_END: &str = "EVOLVE-BLOCK-END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Immutable,
    Mutable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveBlocks {
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BlockError {
    #[error("line {line}: EVOLVE-BLOCK-START inside a block opened at line {opened_at} (blocks cannot nest)")]
    Nested { line: usize, opened_at: usize },
    #[error("line {line}: EVOLVE-BLOCK-END without a matching EVOLVE-BLOCK-START")]
    UnmatchedEnd { line: usize },
    #[error("line {line}: EVOLVE-BLOCK-START is never closed")]
    Unclosed { line: usize },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Marker {
    Start,
    End,
}

fn marker(line: &str) -> Option<Marker> {
    let trimmed = line.trim();
    if trimmed.ends_with(MARKER_START) {
        Some(Marker::Start)
    } else if trimmed.ends_with(MARKER_END) {
        Some(Marker::End)
    } else {
        None
    }
}

pub fn parse_blocks(code: &str) -> Result<EvolveBlocks, BlockError> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut open_at: Option<usize> = None;

    for (i, line) in code.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        match (marker(line), open_at) {
            (Some(Marker::Start), None) => {
                current.push_str(line);
                segments.push(Segment {
                    kind: SegmentKind::Immutable,
                    text: std::mem::take(&mut current),
                });
                open_at = Some(line_no);
            }
            (Some(Marker::Start), Some(opened_at)) => {
                return Err(BlockError::Nested {
                    line: line_no,
                    opened_at,
                })
            }
            (Some(Marker::End), Some(_)) => {
                segments.push(Segment {
                    kind: SegmentKind::Mutable,
                    text: std::mem::take(&mut current),
                });
                current.push_str(line);
                open_at = None;
            }
            (Some(Marker::End), None) => return Err(BlockError::UnmatchedEnd { line: line_no }),
            (None, _) => current.push_str(line),
        }
    }
    if let Some(line) = open_at {
        return Err(BlockError::Unclosed { line });
    }
    segments.push(Segment {
        kind: SegmentKind::Immutable,
        text: current,
    });
    Ok(EvolveBlocks { segments })
}

impl EvolveBlocks {
    pub fn reassemble(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn mutable_code(&self) -> String {
        self.segments_of(SegmentKind::Mutable).collect()
    }

    pub fn immutable_segments(&self) -> Vec<&str> {
        self.segments_of(SegmentKind::Immutable).collect()
    }

    pub fn mutable_segments(&self) -> Vec<&str> {
        self.segments_of(SegmentKind::Mutable).collect()
    }

    fn segments_of(&self, kind: SegmentKind) -> impl Iterator<Item = &str> {
        self.segments
            .iter()
            .filter(move |s| s.kind == kind)
            .map(|s| s.text.as_str())
    }

    pub fn block_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Mutable)
            .count()
    }

    /// Byte ranges of the mutable segments within the reassembled text.
    pub fn mutable_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut offset = 0;
        let mut ranges = Vec::new();
        for s in &self.segments {
            if s.kind == SegmentKind::Mutable {
                ranges.push(offset..offset + s.text.len());
            }
            offset += s.text.len();
        }
        ranges
    }
}

/// Mutable text of `code`, or the empty string when it has no valid blocks.
pub fn mutable_code_of(code: &str) -> String {
    parse_blocks(code).map(|b| b.mutable_code()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BLOCKS: &str = "import math\n\
# EVOLVE-BLOCK-START\n\
def f(x):\n    return x\n\
# EVOLVE-BLOCK-END\n\
\n\
GLUE = 1\n\
// EVOLVE-BLOCK-START\n\
y = 2\n\
// EVOLVE-BLOCK-END\n\
print(f(GLUE))";

    #[test]
    fn no_markers_is_one_immutable_segment() {
        let b = parse_blocks("a = 1\nb = 2\n").unwrap();
        assert_eq!(b.segments.len(), 1);
        assert_eq!(b.segments[0].kind, SegmentKind::Immutable);
        assert_eq!(b.mutable_code(), "");
        assert_eq!(parse_blocks("").unwrap().reassemble(), "");
    }

    #[test]
    fn whole_body_block() {
        let code = "# EVOLVE-BLOCK-START\nx = 1\ny = 2\n# EVOLVE-BLOCK-END\n";
        let b = parse_blocks(code).unwrap();
        assert_eq!(b.mutable_code(), "x = 1\ny = 2\n");
        assert_eq!(b.reassemble(), code);
    }

    #[test]
    fn two_blocks_five_segments() {
        let b = parse_blocks(TWO_BLOCKS).unwrap();
        let kinds: Vec<SegmentKind> = b.segments.iter().map(|s| s.kind).collect();
        use SegmentKind::*;
        assert_eq!(kinds, [Immutable, Mutable, Immutable, Mutable, Immutable]);
        assert_eq!(b.reassemble(), TWO_BLOCKS);
        assert_eq!(b.mutable_code(), "def f(x):\n    return x\ny = 2\n");
        assert_eq!(b.block_count(), 2);
    }

    #[test]
    fn crlf_and_no_trailing_newline_survive() {
        let code = "a\r\n/* EVOLVE-BLOCK-START */\r\nb\r\n  /* EVOLVE-BLOCK-END */  \r\nc";
        // lines must end with the marker, so trailing "*/" hides it
        assert_eq!(parse_blocks(code).unwrap().segments.len(), 1);
        let code = "a\r\n// EVOLVE-BLOCK-START\r\nb\r\n  // EVOLVE-BLOCK-END  \r\nc";
        let b = parse_blocks(code).unwrap();
        assert_eq!(b.reassemble(), code);
        assert_eq!(b.mutable_code(), "b\r\n");
    }

    #[test]
    fn structural_errors_name_lines() {
        assert_eq!(
            parse_blocks("# EVOLVE-BLOCK-START\n# EVOLVE-BLOCK-START\n"),
            Err(BlockError::Nested { line: 2, opened_at: 1 })
        );
        assert_eq!(
            parse_blocks("x\n# EVOLVE-BLOCK-END\n"),
            Err(BlockError::UnmatchedEnd { line: 2 })
        );
        assert_eq!(
            parse_blocks("x\ny\n# EVOLVE-BLOCK-START\nz\n"),
            Err(BlockError::Unclosed { line: 3 })
        );
    }

    #[test]
    fn mutable_ranges_index_reassembled_text() {
        let b = parse_blocks(TWO_BLOCKS).unwrap();
        let text = b.reassemble();
        let pieces: Vec<&str> = b.mutable_ranges().into_iter().map(|r| &text[r]).collect();
        assert_eq!(pieces, b.mutable_segments());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn body_line() -> impl Strategy<Value = String> {
            "[a-z =+0-9()#/]{0,12}\r?\n".prop_filter("no markers", |l| marker(l).is_none())
        }

        pub(crate) fn balanced_program() -> impl Strategy<Value = String> {
            prop::collection::vec(
                (prop::collection::vec(body_line(), 0..4), prop::collection::vec(body_line(), 0..4)),
                0..4,
            )
            .prop_flat_map(|blocks| {
                (Just(blocks), prop::collection::vec(body_line(), 0..3), "[a-z]{0,5}")
            })
            .prop_map(|(blocks, head, tail)| {
                let mut s: String = head.concat();
                for (glue, body) in blocks {
                    s.push_str("# EVOLVE-BLOCK-START\n");
                    s.push_str(&body.concat());
                    s.push_str("# EVOLVE-BLOCK-END\n");
                    s.push_str(&glue.concat());
                }
                s.push_str(&tail);
                s
            })
        }

        proptest! {
            #[test]
            fn reassemble_is_identity(code in balanced_program()) {
                let b = parse_blocks(&code).unwrap();
                prop_assert_eq!(b.reassemble(), code);
                let alternates = b.segments.iter().enumerate().all(|(i, s)| {
                    (s.kind == SegmentKind::Immutable) == (i % 2 == 0)
                });
                prop_assert!(alternates);
            }
        }
    }
}
