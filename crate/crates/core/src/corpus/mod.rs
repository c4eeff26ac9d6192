//! Synthetic verifiable reasoning task: step-by-step reduction of fully
//! parenthesized integer expressions.

mod expr;
mod tokenizer;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use expr::{parse_reduction, Expr, Op, Reduction};
pub use tokenizer::{TokenId, Tokenizer, BOS, EOS, PAD, SEP};

use crate::error::{Error, Result};
use crate::rng;

/// Answer marker prefix on the final line of a solution.
pub const ANSWER_MARKER: &str = "#### ";

/// Expressions whose FNV-1a hash is divisible by this belong to the eval split.
const EVAL_BUCKET_MODULUS: u64 = 8;
const MAX_GENERATION_ATTEMPTS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemInstance {
    pub expression: String,
    pub gold_answer: i64,
    pub n_ops: usize,
    /// Seed the instance was drawn with; 0 when loaded from a corpus file.
    pub seed: u64,
}

impl ProblemInstance {
    pub fn from_expression(expression: &str) -> Option<ProblemInstance> {
        let expr = Expr::parse(expression)?;
        Some(ProblemInstance {
            expression: expression.to_string(),
            gold_answer: expr.eval()?,
            n_ops: expr.n_ops(),
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub operand_range: [i64; 2],
    pub ops: Vec<Op>,
    pub n_ops_range: [usize; 2],
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 50_000,
            n_eval: 1_000,
            operand_range: [0, 9],
            ops: vec![Op::Add, Op::Sub, Op::Mul],
            n_ops_range: [2, 4],
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.operand_range;
        let [nlo, nhi] = self.n_ops_range;
        if lo > hi {
            return Err(Error::InvalidConfig(format!("operand_range [{lo}, {hi}] is empty")));
        }
        if lo.unsigned_abs().max(hi.unsigned_abs()) > 1_000 {
            return Err(Error::InvalidConfig("operands must lie within [-1000, 1000]".into()));
        }
        if !(2 <= nlo && nlo <= nhi && nhi <= 6) {
            return Err(Error::InvalidConfig(format!(
                "n_ops_range [{nlo}, {nhi}] must satisfy 2 <= lo <= hi <= 6"
            )));
        }
        if self.ops.is_empty() {
            return Err(Error::InvalidConfig("ops must be nonempty".into()));
        }
        Ok(())
    }

    pub fn is_eval_index(&self, index: usize) -> bool {
        index >= self.n_train
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Which split an expression string belongs to; a pure function of the string,
/// which keeps train and eval disjoint without any global bookkeeping.
pub fn is_eval_expression(expression: &str) -> bool {
    fnv1a(expression).is_multiple_of(EVAL_BUCKET_MODULUS)
}

/// Instance `index` of the corpus. Indices below `n_train` are training
/// problems, the rest evaluation problems.
pub fn generate_problem(config: &CorpusConfig, index: usize) -> Result<ProblemInstance> {
    config.validate()?;
    if index >= config.n_train + config.n_eval {
        return Err(Error::InvalidConfig(format!(
            "index {index} outside corpus of {} problems",
            config.n_train + config.n_eval
        )));
    }
    let want_eval = config.is_eval_index(index);
    let [lo, hi] = config.operand_range;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let seed = rng::derive_seed(config.seed, &[index as u64, attempt]);
        let mut r = rng::stream(seed, &[]);
        let n_ops = rand::Rng::random_range(&mut r, config.n_ops_range[0]..=config.n_ops_range[1]);
        let expr = Expr::random(&mut r, n_ops, &config.ops, lo, hi);
        let expression = expr.to_string();
        if is_eval_expression(&expression) != want_eval {
            continue;
        }
        if let (Some(gold_answer), Some(_)) = (expr.eval(), expr.reductions()) {
            return Ok(ProblemInstance {
                expression,
                gold_answer,
                n_ops,
                seed,
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not draw problem {index} for the requested split"
    )))
}

/// Gold worked solution: one reduction line per operator, then the answer line.
pub fn render_solution(problem: &ProblemInstance) -> String {
    let expr = Expr::parse(&problem.expression).expect("problem expression parses");
    let mut out = String::new();
    for r in expr.reductions().expect("problem evaluates without overflow") {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out.push_str(ANSWER_MARKER);
    out.push_str(&problem.gold_answer.to_string());
    out
}

fn answer_of_line(line: &str) -> Option<i64> {
    line.strip_prefix(ANSWER_MARKER)?.parse().ok()
}

/// True iff the last `#### <int>` line of the completion equals the gold answer.
pub fn verify_answer(problem: &ProblemInstance, completion: &str) -> bool {
    completion.lines().filter_map(answer_of_line).next_back() == Some(problem.gold_answer)
}

/// Index of the first token of the first wrong line of a generated solution.
///
/// Reduction lines must be well formed, arithmetically true, and reduce a
/// subexpression that is actually ready to reduce in the problem. Scanning
/// stops at the first answer line or EOS. A missing answer line after a
/// terminated (EOS) generation points at the EOS token.
pub fn first_error_index(problem: &ProblemInstance, tokens: &[TokenId]) -> Option<usize> {
    let tok = Tokenizer::new();
    let end = tokens.iter().position(|&t| t == EOS);
    let body = &tokens[..end.unwrap_or(tokens.len())];
    let mut state = Expr::parse(&problem.expression)?;

    let mut start = 0;
    while start < body.len() {
        let stop = body[start..]
            .iter()
            .position(|&t| tok.char_of(t) == Some('\n'))
            .map_or(body.len(), |p| start + p);
        let line: String = body[start..stop]
            .iter()
            .map(|&t| tok.char_of(t).unwrap_or('\u{0}'))
            .collect();
        if line.starts_with('#') {
            return match answer_of_line(&line) {
                Some(v) if v == problem.gold_answer => None,
                _ => Some(start),
            };
        }
        match parse_reduction(&line) {
            Some(r) if r.op.apply(r.lhs, r.rhs) == Some(r.result) => {
                if !state.reduce_matching(r.lhs, r.op, r.rhs, r.result) {
                    return Some(start);
                }
            }
            _ => return Some(start),
        }
        start = stop + 1;
    }
    end
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub expression: String,
    pub gold_answer: i64,
    pub solution_text: String,
}

impl CorpusRecord {
    pub fn from_problem(problem: &ProblemInstance) -> Self {
        Self {
            expression: problem.expression.clone(),
            gold_answer: problem.gold_answer,
            solution_text: render_solution(problem),
        }
    }
}

pub struct CorpusFiles {
    pub train: PathBuf,
    pub eval: PathBuf,
}

pub fn generate_split(config: &CorpusConfig, eval: bool) -> Result<Vec<ProblemInstance>> {
    let range = if eval {
        config.n_train..config.n_train + config.n_eval
    } else {
        0..config.n_train
    };
    range
        .into_par_iter()
        .map(|i| generate_problem(config, i))
        .collect()
}

/// Writes `train.jsonl` and `eval.jsonl` under `dir`.
pub fn build_corpus(config: &CorpusConfig, dir: &Path) -> Result<CorpusFiles> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CorpusFiles {
        train: dir.join("train.jsonl"),
        eval: dir.join("eval.jsonl"),
    };
    for (eval, path) in [(false, &files.train), (true, &files.eval)] {
        let problems = generate_split(config, eval)?;
        let records: Vec<_> = problems.iter().map(CorpusRecord::from_problem).collect();
        crate::jsonl::write(path, &records)?;
    }
    Ok(files)
}

pub fn read_problems(path: &Path) -> Result<Vec<ProblemInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let problem = ProblemInstance::from_expression(&rec.expression)
            .ok_or_else(|| malformed(format!("unparseable expression {:?}", rec.expression)))?;
        if problem.gold_answer != rec.gold_answer {
            return Err(malformed(format!(
                "gold_answer {} disagrees with expression value {}",
                rec.gold_answer, problem.gold_answer
            )));
        }
        out.push(problem);
    }
    Ok(out)
}

/// `BOS prompt SEP solution EOS` for teacher-forced pretraining.
pub fn training_sequence(tok: &Tokenizer, problem: &ProblemInstance) -> Result<(Vec<TokenId>, usize)> {
    let mut seq = tok.prompt_tokens(&problem.expression)?;
    let prompt_len = seq.len();
    seq.extend(tok.encode(&render_solution(problem))?);
    seq.push(EOS);
    Ok((seq, prompt_len))
}
