//! CoNLL-U ingestion: sentence blocks, length filtering, seeded splits.
//!
//! Only ID, FORM, UPOS and HEAD are read. Multiword-token ranges (`3-4`) and
//! empty nodes (`5.1`) are skipped, so `n` counts syntactic words.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::DepTree;
use crate::rng;

pub const MAX_SENTENCE_LENGTH: usize = 50;
pub const MIN_SENTENCE_LENGTH: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based word position.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Head word index, `0` for the root attachment.
    pub head: usize,
}

impl Token {
    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT"
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    tokens: Vec<Token>,
    tree: DepTree,
}

impl Sentence {
    /// Validates that tokens are numbered `1..=n`, have exactly one root
    /// attachment, and that the heads form a tree over the words.
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        for (pos, token) in tokens.iter().enumerate() {
            if token.index != pos + 1 {
                return Err(Error::InvalidTree(format!(
                    "word {} found at position {}",
                    token.index,
                    pos + 1
                )));
            }
            if token.head == token.index {
                return Err(Error::InvalidTree(format!(
                    "word {} heads itself",
                    token.index
                )));
            }
            if token.head > tokens.len() {
                return Err(Error::InvalidTree(format!(
                    "word {} has head {} beyond sentence end",
                    token.index, token.head
                )));
            }
        }
        let heads: Vec<usize> = tokens.iter().map(|t| t.head).collect();
        let tree = DepTree::from_heads(&heads)?;
        Ok(Sentence {
            id: id.into(),
            tokens,
            tree,
        })
    }

    /// A placeholder sentence over `tree`, rooted at word 1, with forms
    /// `w1..wn` and UPOS `X`.
    pub fn from_tree(id: impl Into<String>, tree: &DepTree) -> Result<Self> {
        let tokens = tree
            .heads(1)
            .into_iter()
            .enumerate()
            .map(|(k, head)| Token {
                index: k + 1,
                form: format!("w{}", k + 1),
                upos: "X".into(),
                head,
            })
            .collect();
        Sentence::new(id, tokens)
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn root(&self) -> usize {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .map(|t| t.index)
            .unwrap()
    }

    /// The word-only undirected tree: one edge per non-root token.
    pub fn gold_tree(&self) -> &DepTree {
        &self.tree
    }
}

/// A sentence dropped during reading or filtering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub sentence_id: String,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.sentence_id, self.reason)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
    pub rejected: Vec<Rejection>,
}

/// Reads CoNLL-U sentence blocks.
///
/// Malformed rows abort with the offending line number. Sentences whose heads
/// do not form a single-rooted tree are rejected into [`Treebank::rejected`].
/// Sentences without a `# sent_id` comment get `s<k>` (1-based block number).
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Treebank> {
    let mut out = Treebank::default();
    let mut block = Block::default();
    let mut blocks = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !block.is_empty() {
                blocks += 1;
                block.finish(blocks, &mut out);
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    block.id = Some(value.trim().to_string());
                }
            }
            block.start_line.get_or_insert(lineno);
            continue;
        }

        block.start_line.get_or_insert(lineno);
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 10 {
            return Err(Error::Conllu {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", columns.len()),
            });
        }
        let id = columns[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| Error::Conllu {
            line: lineno,
            message: format!("invalid word ID '{id}'"),
        })?;
        let head: usize = columns[6].parse().map_err(|_| Error::Conllu {
            line: lineno,
            message: format!("non-integer HEAD '{}'", columns[6]),
        })?;
        if index == 0 {
            return Err(Error::Conllu {
                line: lineno,
                message: "word IDs start at 1".into(),
            });
        }
        block.tokens.push(Token {
            index,
            form: columns[1].to_string(),
            upos: columns[3].to_string(),
            head,
        });
    }
    if !block.is_empty() {
        blocks += 1;
        block.finish(blocks, &mut out);
    }
    Ok(out)
}

#[derive(Default)]
struct Block {
    id: Option<String>,
    start_line: Option<usize>,
    tokens: Vec<Token>,
}

impl Block {
    fn is_empty(&self) -> bool {
        self.start_line.is_none()
    }

    fn finish(&mut self, number: usize, out: &mut Treebank) {
        let block = std::mem::take(self);
        if block.tokens.is_empty() {
            return;
        }
        let id = block.id.unwrap_or_else(|| format!("s{number}"));
        match Sentence::new(id.clone(), block.tokens) {
            Ok(sentence) => out.sentences.push(sentence),
            Err(err) => out.rejected.push(Rejection {
                sentence_id: id,
                reason: match err {
                    Error::InvalidTree(msg) => format!("invalid-tree: {msg}"),
                    other => other.to_string(),
                },
            }),
        }
    }
}

/// Writes sentences back as CoNLL-U. Columns this crate does not read are
/// emitted as `_`.
pub fn write_conllu<W: Write>(sentences: &[Sentence], mut out: W) -> Result<()> {
    for sentence in sentences {
        writeln!(out, "# sent_id = {}", sentence.id)?;
        for t in sentence.tokens() {
            let upos = if t.upos.is_empty() { "_" } else { &t.upos };
            writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t_\t_\t_",
                t.index, t.form, upos, t.head
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 8.0,
        dev: 1.0,
        test: 1.0,
    };

    /// Normalised proportions; the raw values may be any non-negative weights.
    pub fn normalised(&self) -> Result<(f64, f64, f64)> {
        let total = self.train + self.dev + self.test;
        let all_valid = [self.train, self.dev, self.test]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0);
        if !all_valid || total <= 0.0 {
            return Err(Error::config(
                "ratios",
                "ratios must be non-negative with a positive sum",
            ));
        }
        Ok((self.train / total, self.dev / total, self.test / total))
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    /// Parses `8:1:1` (or comma separated).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split([':', ','])
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("ratios", format!("cannot parse '{s}'")))?;
        if parts.len() != 3 {
            return Err(Error::config(
                "ratios",
                format!("expected three parts in '{s}'"),
            ));
        }
        let ratios = SplitRatios {
            train: parts[0],
            dev: parts[1],
            test: parts[2],
        };
        ratios.normalised()?;
        Ok(ratios)
    }
}

#[derive(Clone, Debug)]
pub struct TreebankSplit {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub source: String,
    pub filter_log: Vec<Rejection>,
}

/// Drops sentences outside 2..=50 words, keeps the first `cap` survivors in
/// corpus order (`cap == 0` keeps all), and splits them with a seeded
/// shuffle. Each split preserves corpus order internally.
pub fn filter_and_split(
    sentences: Vec<Sentence>,
    cap: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<TreebankSplit> {
    let (_, dev_ratio, test_ratio) = ratios.normalised()?;

    let mut filter_log = Vec::new();
    let mut kept = Vec::new();
    for sentence in sentences {
        let n = sentence.n();
        if n < MIN_SENTENCE_LENGTH {
            filter_log.push(Rejection {
                sentence_id: sentence.id.clone(),
                reason: format!("length<{MIN_SENTENCE_LENGTH}"),
            });
        } else if n > MAX_SENTENCE_LENGTH {
            filter_log.push(Rejection {
                sentence_id: sentence.id.clone(),
                reason: format!("length>{MAX_SENTENCE_LENGTH}"),
            });
        } else if cap > 0 && kept.len() >= cap {
            filter_log.push(Rejection {
                sentence_id: sentence.id.clone(),
                reason: format!("beyond-cap-{cap}"),
            });
        } else {
            kept.push(sentence);
        }
    }

    let total = kept.len();
    if total < 3 {
        return Err(Error::Data(format!(
            "only {total} sentences left after filtering; need at least 3 to split"
        )));
    }

    let mut dev_len = (total as f64 * dev_ratio).round() as usize;
    let mut test_len = (total as f64 * test_ratio).round() as usize;
    // Every non-zero ratio gets at least one sentence, and train keeps one.
    if dev_ratio > 0.0 {
        dev_len = dev_len.max(1);
    }
    if test_ratio > 0.0 {
        test_len = test_len.max(1);
    }
    while dev_len + test_len >= total {
        if dev_len >= test_len && dev_len > 0 {
            dev_len -= 1;
        } else {
            test_len -= 1;
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut assignment = vec![0u8; total];
    for &i in &order[..dev_len] {
        assignment[i] = 1;
    }
    for &i in &order[dev_len..dev_len + test_len] {
        assignment[i] = 2;
    }

    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (sentence, part) in kept.into_iter().zip(assignment) {
        match part {
            0 => train.push(sentence),
            1 => dev.push(sentence),
            _ => test.push(sentence),
        }
    }

    Ok(TreebankSplit {
        train,
        dev,
        test,
        source: String::new(),
        filter_log,
    })
}
