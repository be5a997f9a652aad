//! Vector-optimization task with a known optimum.
//!
//! A program carries a literal `vector = [a, b, ...]` inside its EVOLVE-BLOCK
//! and scores `-||v - target||^2`. [`ScriptedVectorMutator`] plays the role
//! of a language model: it nudges one coordinate toward the target with
//! probability `q` and away from it otherwise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::llm::mock::{current_program, fence};
use crate::llm::{chat_fingerprint, ChatProvider, ChatRequest, ProviderError};
use crate::mutation::blocks::parse_blocks;
use crate::mutation::patch::{DIVIDER, REPLACE_CLOSE, SEARCH_OPEN};
use crate::scheduler::ResultFile;

const VECTOR_PREFIX: &str = "vector = [";

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("program has invalid EVOLVE-BLOCK markers: {0}")]
    Blocks(#[from] crate::mutation::blocks::BlockError),
    #[error("no `vector = [...]` line inside an EVOLVE-BLOCK")]
    NoVector,
    #[error("cannot parse vector entry '{0}'")]
    BadNumber(String),
    #[error("vector has dimension {found}, target has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn format_vector(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("{VECTOR_PREFIX}{}]", items.join(", "))
}

pub fn initial_program(dimension: usize) -> String {
    format!(
        "# Synthetic vector task. The evaluator reads the literal below.\n\
         # EVOLVE-BLOCK-START\n\
         {}\n\
         # EVOLVE-BLOCK-END\n\
         \n\
         def candidate():\n    return vector\n",
        format_vector(&vec![0.0; dimension])
    )
}

/// The `vector = [...]` line of the mutable region and its parsed values.
pub fn find_vector(code: &str) -> Result<(String, Vec<f64>), SyntheticError> {
    let blocks = parse_blocks(code)?;
    let mutable = blocks.mutable_code();
    let line = mutable
        .lines()
        .find(|l| l.trim_start().starts_with(VECTOR_PREFIX))
        .ok_or(SyntheticError::NoVector)?;
    let inner = line
        .trim()
        .strip_prefix(VECTOR_PREFIX)
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(SyntheticError::NoVector)?;
    let values = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| SyntheticError::BadNumber(s.to_string())))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok((line.to_string(), values))
}

pub fn fitness(v: &[f64], target: &[f64]) -> f64 {
    -v.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

pub fn evaluate(program_path: &Path, results_dir: &Path, target: &[f64]) -> Result<ResultFile, SyntheticError> {
    let code = fs::read_to_string(program_path)?;
    let (_, v) = find_vector(&code)?;
    if v.len() != target.len() {
        return Err(SyntheticError::Dimension {
            expected: target.len(),
            found: v.len(),
        });
    }
    let distance = -fitness(&v, target);
    let mut result = ResultFile::new(-distance);
    result.public.insert("squared_distance".into(), distance);
    for (i, x) in v.iter().enumerate() {
        result.public.insert(format!("v{i}"), *x);
    }
    result.private.insert("dimension".into(), v.len() as f64);
    result.text_feedback = if distance == 0.0 {
        "The vector is optimal.".into()
    } else {
        String::new()
    };
    result.write(results_dir)?;
    Ok(result)
}

/// One scripted move: the chosen coordinate and its new value.
pub fn scripted_step<R: Rng + ?Sized>(v: &[f64], target: &[f64], q: f64, step: f64, rng: &mut R) -> Vec<f64> {
    let mut out = v.to_vec();
    if out.is_empty() {
        return out;
    }
    if rng.random::<f64>() < q {
        let off: Vec<usize> = (0..out.len()).filter(|&i| out[i] != target[i]).collect();
        if off.is_empty() {
            return out;
        }
        let i = off[rng.random_range(0..off.len())];
        let diff = target[i] - out[i];
        out[i] += diff.signum() * step.min(diff.abs());
    } else {
        let i = rng.random_range(0..out.len());
        let diff = target[i] - out[i];
        let sign = if diff == 0.0 {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        } else {
            -diff.signum()
        };
        out[i] += sign * step;
    }
    out
}

/// Deterministic stand-in for a mutation model on the synthetic task.
///
/// Answers with a SEARCH/REPLACE diff when the prompt asks for targeted
/// edits and with a full fenced program otherwise.
pub struct ScriptedVectorMutator {
    target: Vec<f64>,
    q: f64,
    step: f64,
}

impl ScriptedVectorMutator {
    pub fn new(target: Vec<f64>, q: f64, step: f64) -> Self {
        Self { target, q, step }
    }
}

impl ChatProvider for ScriptedVectorMutator {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let code = current_program(&request.prompt)
            .ok_or_else(|| ProviderError::Malformed("prompt has no current program".into()))?;
        let (line, v) = find_vector(&code).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        if v.len() != self.target.len() {
            return Err(ProviderError::Malformed(format!(
                "program vector has dimension {}, mutator target has {}",
                v.len(),
                self.target.len()
            )));
        }
        let fingerprint = chat_fingerprint(&request.model, request.temperature, &request.prompt);
        let seed = u64::from_str_radix(&fingerprint[..16], 16).expect("hex fingerprint");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moved = scripted_step(&v, &self.target, self.q, self.step, &mut rng);
        let indent: String = line.chars().take_while(|c| c.is_whitespace()).collect();
        let new_line = format!("{indent}{}", format_vector(&moved));
        if request.prompt.contains("Do not rewrite the entire program") {
            Ok(format!(
                "Adjusting one coordinate.\n{SEARCH_OPEN}\n{line}\n{DIVIDER}\n{new_line}\n{REPLACE_CLOSE}\n"
            ))
        } else {
            Ok(format!(
                "Rewritten program:\n{}",
                fence(&code.replacen(&line, &new_line, 1))
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::PatchType;
    use crate::mutation::patch::{apply_patch, parse_response};
    use std::collections::BTreeMap;

    fn request(prompt: String) -> ChatRequest {
        ChatRequest {
            model: "scripted".into(),
            temperature: 0.0,
            max_tokens: 100,
            prompt,
            options: BTreeMap::new(),
        }
    }

    fn prompt_for(code: &str, diff: bool) -> String {
        let tail = if diff {
            "IMPORTANT: Do not rewrite the entire program; change only the lines your idea needs."
        } else {
            "Return the complete program."
        };
        format!("# Current program\n```python\n{}\n```\n{tail}", code.trim_end())
    }

    #[test]
    fn optimum_scores_zero() {
        assert_eq!(fitness(&[1.0, -0.5], &[1.0, -0.5]), 0.0);
        assert_eq!(fitness(&[0.0, 0.0], &[1.0, -0.5]), -1.25);
    }

    #[test]
    fn vector_round_trip() {
        let code = initial_program(3);
        let (line, v) = find_vector(&code).unwrap();
        assert_eq!(line, "vector = [0.0, 0.0, 0.0]");
        assert_eq!(v, vec![0.0; 3]);
        assert_eq!(format_vector(&[1.0, -0.5, 0.25]), "vector = [1.0, -0.5, 0.25]");
        assert!(matches!(find_vector("x = 1\n"), Err(SyntheticError::NoVector)));
    }

    #[test]
    fn evaluator_writes_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let prog = dir.path().join("p.py");
        fs::write(&prog, initial_program(2)).unwrap();
        let r = evaluate(&prog, &dir.path().join("res"), &[1.0, 1.0]).unwrap();
        assert_eq!(r.combined_score, -2.0);
        let back = crate::scheduler::collect(&dir.path().join("res"), 0.0).unwrap();
        assert_eq!(back.combined_score, -2.0);
        assert!(evaluate(&prog, &dir.path().join("res"), &[1.0]).is_err());
    }

    #[test]
    fn q_one_always_approaches() {
        let target = [1.0, -0.5, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = vec![0.0; 3];
        for _ in 0..7 {
            let next = scripted_step(&v, &target, 1.0, 0.25, &mut rng);
            assert!(fitness(&next, &target) > fitness(&v, &target));
            v = next;
        }
        assert_eq!(fitness(&v, &target), 0.0);
        assert_eq!(scripted_step(&v, &target, 1.0, 0.25, &mut rng), v);
    }

    #[test]
    fn q_zero_always_retreats() {
        let target = [1.0, -0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut v = vec![0.0; 2];
        for _ in 0..20 {
            let next = scripted_step(&v, &target, 0.0, 0.0625, &mut rng);
            assert!(fitness(&next, &target) < fitness(&v, &target));
            v = next;
        }
    }

    #[test]
    fn mutator_diff_and_full_responses_apply() {
        let m = ScriptedVectorMutator::new(vec![1.0, -0.5, 0.25], 1.0, 0.25);
        let code = initial_program(3);
        for (diff, patch_type) in [(true, PatchType::Diff), (false, PatchType::Full)] {
            let raw = m.complete(&request(prompt_for(&code, diff))).unwrap();
            let proposal = parse_response(&raw, patch_type, "scripted", 0.0).unwrap();
            let out = apply_patch(&code, &proposal).unwrap();
            let (_, v) = find_vector(&out).unwrap();
            assert!(fitness(&v, &[1.0, -0.5, 0.25]) > -1.3125);
        }
        let again = m.complete(&request(prompt_for(&code, true))).unwrap();
        assert_eq!(again, m.complete(&request(prompt_for(&code, true))).unwrap());
    }
}
