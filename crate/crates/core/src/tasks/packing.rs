//! Circle packing in the unit square.
//!
//! A packing is valid when every circle lies inside `[0, 1]^2` and no two
//! circles overlap, each constraint tolerating `slack`. The score is the
//! sum of radii. Candidate programs are run as
//! `<interpreter> <program> <results_dir>` and must write
//! `<results_dir>/packing.txt` with one `x y r` line per circle.

use std::fmt;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::ResultFile;

pub const NUM_CIRCLES: usize = 26;
pub const DEFAULT_SLACK: f64 = 1e-6;
pub const PACKING_FILE: &str = "packing.txt";

/// Verdicts ignore violations below this size, which is the rounding noise
/// of the coordinate arithmetic on the unit square.
pub const ROUNDING_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Containment { circle: usize, side: Side, magnitude: f64 },
    Overlap { first: usize, second: usize, magnitude: f64 },
}

impl Violation {
    pub fn magnitude(&self) -> f64 {
        match self {
            Violation::Containment { magnitude, .. } | Violation::Overlap { magnitude, .. } => *magnitude,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Containment { circle, side, magnitude } => {
                write!(f, "circle {circle} crosses the {side:?} edge by {magnitude:.3e}")
            }
            Violation::Overlap { first, second, magnitude } => {
                write!(f, "circles {first} and {second} overlap by {magnitude:.3e}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Error)]
pub enum PackingError {
    #[error("expected {expected} circles, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("circle {0} has a non-positive or non-finite radius")]
    BadRadius(usize),
    #[error("circle {0} has a non-finite coordinate")]
    BadCoordinate(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("slack must be finite and >= 0")]
    BadSlack,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checks containment and pairwise separation of `circles`.
///
/// `expected` fixes the circle count (26 for the benchmark); `None` accepts
/// any count, which the single-circle sanity harness uses.
pub fn verify_circles(circles: &[Circle], slack: f64, expected: Option<usize>) -> Result<Verification, PackingError> {
    if !(slack.is_finite() && slack >= 0.0) {
        return Err(PackingError::BadSlack);
    }
    if let Some(n) = expected {
        if circles.len() != n {
            return Err(PackingError::WrongCount {
                expected: n,
                found: circles.len(),
            });
        }
    }
    for (i, c) in circles.iter().enumerate() {
        if !(c.r.is_finite() && c.r > 0.0) {
            return Err(PackingError::BadRadius(i));
        }
        if !(c.x.is_finite() && c.y.is_finite()) {
            return Err(PackingError::BadCoordinate(i));
        }
    }
    let tolerance = slack + ROUNDING_FLOOR;
    let mut violations = Vec::new();
    for (i, c) in circles.iter().enumerate() {
        for (side, over) in [
            (Side::Left, c.r - c.x),
            (Side::Right, c.x + c.r - 1.0),
            (Side::Bottom, c.r - c.y),
            (Side::Top, c.y + c.r - 1.0),
        ] {
            if over > tolerance {
                violations.push(Violation::Containment {
                    circle: i,
                    side,
                    magnitude: over,
                });
            }
        }
    }
    for i in 0..circles.len() {
        for j in i + 1..circles.len() {
            let (a, b) = (circles[i], circles[j]);
            let distance = (a.x - b.x).hypot(a.y - b.y);
            let overlap = (a.r + b.r) - distance;
            if overlap > tolerance {
                violations.push(Violation::Overlap {
                    first: i,
                    second: j,
                    magnitude: overlap,
                });
            }
        }
    }
    Ok(Verification {
        valid: violations.is_empty(),
        violations,
    })
}

pub fn verify_packing(circles: &[Circle], slack: f64) -> Result<Verification, PackingError> {
    verify_circles(circles, slack, Some(NUM_CIRCLES))
}

/// Sum of radii with Neumaier compensation.
pub fn radius_sum(circles: &[Circle]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for c in circles {
        let t = sum + c.r;
        if sum.abs() >= c.r.abs() {
            carry += (sum - t) + c.r;
        } else {
            carry += (c.r - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Sum of radii when valid, otherwise 0.
pub fn packing_score(circles: &[Circle], slack: f64) -> Result<(f64, Verification), PackingError> {
    let verification = verify_packing(circles, slack)?;
    let score = if verification.valid { radius_sum(circles) } else { 0.0 };
    Ok((score, verification))
}

/// 5x5 grid of radius 0.1 plus one circle in the gap between four of them.
pub fn grid_with_gap() -> Vec<Circle> {
    let mut circles = Vec::with_capacity(NUM_CIRCLES);
    for i in 0..5 {
        for j in 0..5 {
            circles.push(Circle::new(0.1 + 0.2 * i as f64, 0.1 + 0.2 * j as f64, 0.1));
        }
    }
    circles.push(Circle::new(0.2, 0.2, 0.1 * (std::f64::consts::SQRT_2 - 1.0)));
    circles
}

pub fn parse_packing(text: &str) -> Result<Vec<Circle>, PackingError> {
    let mut circles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if fields.len() != 3 {
            return Err(PackingError::Parse {
                line: i + 1,
                message: format!("expected 3 numbers, found {}", fields.len()),
            });
        }
        let mut nums = [0.0; 3];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| PackingError::Parse {
                line: i + 1,
                message: format!("'{field}' is not a number"),
            })?;
        }
        circles.push(Circle::new(nums[0], nums[1], nums[2]));
    }
    Ok(circles)
}

pub fn format_packing(circles: &[Circle]) -> String {
    circles.iter().map(|c| format!("{:?} {:?} {:?}\n", c.x, c.y, c.r)).collect()
}

/// Scores a packing file into the evaluation result format.
pub fn score_packing_text(text: &str, slack: f64) -> ResultFile {
    let failed = |feedback: String| {
        let mut r = ResultFile::new(0.0);
        r.public.insert("valid".into(), 0.0);
        r.text_feedback = feedback;
        r
    };
    let circles = match parse_packing(text) {
        Ok(c) => c,
        Err(e) => return failed(format!("could not read the packing: {e}")),
    };
    match packing_score(&circles, slack) {
        Err(e) => failed(format!("packing rejected: {e}")),
        Ok((score, verification)) => {
            let mut r = ResultFile::new(score);
            r.public.insert("valid".into(), if verification.valid { 1.0 } else { 0.0 });
            r.public.insert("num_violations".into(), verification.violations.len() as f64);
            r.private.insert("radius_sum".into(), radius_sum(&circles));
            r.private.insert(
                "max_violation".into(),
                verification.violations.iter().map(Violation::magnitude).fold(0.0, f64::max),
            );
            if !verification.valid {
                let lines: Vec<String> = verification.violations.iter().take(10).map(|v| v.to_string()).collect();
                r.text_feedback = format!(
                    "The packing is invalid ({} violations, slack {slack:e}):\n{}",
                    verification.violations.len(),
                    lines.join("\n")
                );
            }
            r
        }
    }
}

/// Runs a candidate program and scores the packing it writes.
pub fn evaluate(program_path: &Path, results_dir: &Path, interpreter: &str, slack: f64) -> Result<ResultFile, PackingError> {
    fs::create_dir_all(results_dir)?;
    let output = Command::new(interpreter).arg(program_path).arg(results_dir).output()?;
    let result = if !output.status.success() {
        let mut r = ResultFile::new(0.0);
        r.public.insert("valid".into(), 0.0);
        r.text_feedback = format!(
            "program exited with {}:\n{}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim_end()
        );
        r
    } else {
        match fs::read_to_string(results_dir.join(PACKING_FILE)) {
            Ok(text) => score_packing_text(&text, slack),
            Err(e) => {
                let mut r = ResultFile::new(0.0);
                r.public.insert("valid".into(), 0.0);
                r.text_feedback = format!("program did not write {PACKING_FILE}: {e}");
                r
            }
        }
    };
    result.write(results_dir)?;
    Ok(result)
}

pub fn initial_program() -> &'static str {
    include_str!("../../assets/packing_initial.py")
}
