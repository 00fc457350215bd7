//! Model-family input preparation: rank-ordered gene tokens, binned
//! expression, and gene-symbol text.

use serde::{Deserialize, Serialize};

use crate::dataset::{CellProfile, GeneVocabulary};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const CLS: u32 = 3;
pub const SOURCE: u32 = 4;
pub const TARGET: u32 = 5;
/// Gene `g` is token `GENE_OFFSET + g`; everything below is a special token.
pub const GENE_OFFSET: u32 = 6;

pub fn gene_token(gene: u32) -> u32 {
    GENE_OFFSET + gene
}

/// Token-vocabulary size needed for `n_genes` genes.
pub fn vocab_size(n_genes: usize) -> usize {
    n_genes + GENE_OFFSET as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialScheme {
    /// `<start> genes <end> <pad>...`, padded to `max_len`.
    StartEndPad,
    /// `<cls> genes <pad>...`, padded to `max_len`.
    ClsFirst,
    /// `<S> <T> genes`, the two scalar-indicator slots of encoder-decoder
    /// expression models.
    SourceTarget,
    /// Bare gene tokens, no padding.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    RankTokens,
    BinnedExpression,
    SymbolText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepRule {
    pub family: String,
    pub max_len: usize,
    pub specials: SpecialScheme,
    pub representation: Representation,
}

impl PrepRule {
    pub fn new(
        family: impl Into<String>,
        max_len: usize,
        specials: SpecialScheme,
        representation: Representation,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Parameter("max_len must be at least 1".into()));
        }
        Ok(Self {
            family: family.into(),
            max_len,
            specials,
            representation,
        })
    }

    /// Input rule for a known model family.
    pub fn for_family(model_id: &str) -> Option<Self> {
        use Representation::*;
        use SpecialScheme as S;
        let (max_len, specials, repr) = match model_id {
            "tGPT" => (64, S::StartEndPad, RankTokens),
            "scBERT" => (8000, S::None, BinnedExpression),
            "Geneformer" => (2048, S::None, RankTokens),
            "CellLM" => (8000, S::None, BinnedExpression),
            "scFoundation" => (19264, S::SourceTarget, RankTokens),
            "scGPT" => (1200, S::ClsFirst, RankTokens),
            "CellPLM" => (2048, S::None, RankTokens),
            "UCE" => (1024, S::ClsFirst, RankTokens),
            "LLaMa3-8B" => (1024, S::None, SymbolText),
            _ => return None,
        };
        Some(Self {
            family: model_id.to_string(),
            max_len,
            specials,
            representation: repr,
        })
    }

    fn reserved(&self) -> usize {
        match self.specials {
            SpecialScheme::StartEndPad | SpecialScheme::SourceTarget => 2,
            SpecialScheme::ClsFirst => 1,
            SpecialScheme::None => 0,
        }
    }
}

/// Where the special tokens of a [`TokenSequence`] sit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpecialPositions {
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub cls: Option<usize>,
    pub source: Option<usize>,
    pub target: Option<usize>,
    /// First padding position; equals the sequence length when unpadded.
    pub pad_from: usize,
}

impl SpecialPositions {
    /// Positions of a bare, unpadded sequence of length `len`.
    pub fn unpadded(len: usize) -> Self {
        Self {
            pad_from: len,
            ..Self::default()
        }
    }

    pub fn is_pad(&self, pos: usize) -> bool {
        pos >= self.pad_from
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub specials: SpecialPositions,
    pub max_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-pad positions.
    pub fn content_len(&self) -> usize {
        self.specials.pad_from
    }

    /// Gene indices in sequence order.
    pub fn genes(&self) -> Vec<u32> {
        self.tokens
            .iter()
            .filter(|&&t| t >= GENE_OFFSET)
            .map(|&t| t - GENE_OFFSET)
            .collect()
    }
}

/// Expressed genes by descending value; ties go to the lower gene index.
pub fn rank_genes(profile: &CellProfile) -> Vec<u32> {
    let mut entries: Vec<(u32, f64)> = profile.expression().to_vec();
    // entries arrive in ascending gene order, so a stable sort keeps ties by index
    entries.sort_by(|a, b| b.1.total_cmp(&a.1));
    entries.into_iter().map(|(g, _)| g).collect()
}

pub fn prep_rank_sequence(profile: &CellProfile, rule: &PrepRule) -> Result<TokenSequence> {
    if rule.representation != Representation::RankTokens {
        return Err(Error::Parameter(format!(
            "{} uses {:?} input, not rank tokens",
            rule.family, rule.representation
        )));
    }
    if rule.max_len < rule.reserved() || rule.max_len == 0 {
        return Err(Error::Parameter(format!(
            "max_len {} cannot hold the {:?} special tokens",
            rule.max_len, rule.specials
        )));
    }
    let capacity = rule.max_len - rule.reserved();
    let genes = rank_genes(profile);
    let genes = genes.iter().take(capacity).map(|&g| gene_token(g));
    let mut tokens = Vec::with_capacity(rule.max_len);
    let mut sp = SpecialPositions::default();
    match rule.specials {
        SpecialScheme::StartEndPad => {
            sp.start = Some(0);
            tokens.push(START);
            tokens.extend(genes);
            sp.end = Some(tokens.len());
            tokens.push(END);
        }
        SpecialScheme::ClsFirst => {
            sp.cls = Some(0);
            tokens.push(CLS);
            tokens.extend(genes);
        }
        SpecialScheme::SourceTarget => {
            sp.source = Some(0);
            sp.target = Some(1);
            tokens.extend([SOURCE, TARGET]);
            tokens.extend(genes);
        }
        SpecialScheme::None => tokens.extend(genes),
    }
    sp.pad_from = tokens.len();
    if matches!(rule.specials, SpecialScheme::StartEndPad | SpecialScheme::ClsFirst) {
        tokens.resize(rule.max_len, PAD);
    }
    Ok(TokenSequence {
        tokens,
        specials: sp,
        max_len: rule.max_len,
    })
}

/// Per-gene bin indices over `n_genes` genes. Nonzero values are binned by
/// equal-width intervals of `log1p(value)` spanning this profile's own
/// nonzero range into bins `1..=n_bins`; unexpressed genes stay in bin 0.
pub fn bin_expression(profile: &CellProfile, n_genes: usize, n_bins: u32) -> Result<Vec<u32>> {
    if n_bins < 2 {
        return Err(Error::Parameter("n_bins must be at least 2".into()));
    }
    let mut bins = vec![0u32; n_genes];
    let logs: Vec<(u32, f64)> = profile
        .expression()
        .iter()
        .map(|&(g, v)| (g, v.ln_1p()))
        .collect();
    if logs.is_empty() {
        return Ok(bins);
    }
    let lo = logs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let hi = logs.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    for (g, v) in logs {
        let slot = bins
            .get_mut(g as usize)
            .ok_or_else(|| Error::Input(format!("gene {g} outside {n_genes} genes")))?;
        *slot = if width > 0.0 {
            (1 + ((v - lo) / width).floor() as u32).min(n_bins)
        } else {
            // a single distinct value is both the minimum and the maximum
            n_bins
        };
    }
    Ok(bins)
}

/// Top `k` expressed gene symbols, highest first.
pub fn top_k_gene_names(
    profile: &CellProfile,
    vocab: &GeneVocabulary,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    rank_genes(profile)
        .into_iter()
        .take(k)
        .map(|g| {
            vocab
                .symbol(g as usize)
                .map(str::to_string)
                .ok_or_else(|| Error::Input(format!("gene {g} outside the vocabulary")))
        })
        .collect()
}

/// Space-separated gene symbols in descending-expression order, truncated to
/// `max_genes`; the text input for general-purpose language models.
pub fn symbol_text(profile: &CellProfile, vocab: &GeneVocabulary, max_genes: usize) -> Result<String> {
    Ok(top_k_gene_names(profile, vocab, max_genes)?.join(" "))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn profile(values: &[(u32, f64)]) -> CellProfile {
        CellProfile::new("c", "s", values.iter().copied(), None).unwrap()
    }

    fn vocab(n: usize) -> GeneVocabulary {
        GeneVocabulary::new((0..n).map(|i| format!("G{i}")).collect()).unwrap()
    }

    /// Brute force: repeatedly pick the largest remaining value, lowest index first.
    fn rank_oracle(values: &[(u32, f64)]) -> Vec<u32> {
        let mut left: Vec<(u32, f64)> = values.iter().copied().filter(|e| e.1 > 0.0).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for i in 1..left.len() {
                let (g, v) = left[i];
                let (bg, bv) = left[best];
                if v > bv || (v == bv && g < bg) {
                    best = i;
                }
            }
            out.push(left.remove(best).0);
        }
        out
    }

    #[test]
    fn rank_genes_example() {
        let p = profile(&[(0, 5.0), (1, 9.0), (2, 5.0), (3, 0.0)]);
        assert_eq!(rank_genes(&p), vec![1, 0, 2]);
        assert_eq!(rank_genes(&p), rank_oracle(&[(0, 5.0), (1, 9.0), (2, 5.0), (3, 0.0)]));
        assert!(rank_genes(&profile(&[])).is_empty());
        assert_eq!(rank_genes(&profile(&[(7, 0.5)])), vec![7]);
    }

    #[test]
    fn tgpt_wraps_and_pads() {
        let p = profile(&[(0, 1.0), (1, 3.0), (2, 2.0)]);
        let rule = PrepRule::for_family("tGPT").unwrap();
        let seq = prep_rank_sequence(&p, &rule).unwrap();
        assert_eq!(seq.len(), 64);
        let mut expected = vec![START, gene_token(1), gene_token(2), gene_token(0), END];
        expected.extend(std::iter::repeat_n(PAD, 59));
        assert_eq!(seq.tokens, expected);
        assert_eq!(seq.specials.end, Some(4));
        assert_eq!(seq.specials.pad_from, 5);
    }

    #[test]
    fn geneformer_keeps_top_2048() {
        let values: Vec<(u32, f64)> = (0..5000).map(|g| (g, 1.0 + g as f64)).collect();
        let rule = PrepRule::for_family("Geneformer").unwrap();
        let seq = prep_rank_sequence(&profile(&values), &rule).unwrap();
        assert_eq!(seq.len(), 2048);
        assert!(seq.tokens.iter().all(|&t| t >= GENE_OFFSET));
        assert_eq!(seq.tokens[0], gene_token(4999));
    }

    #[test]
    fn cls_first_on_empty_profile() {
        let rule = PrepRule::new("toy", 8, SpecialScheme::ClsFirst, Representation::RankTokens).unwrap();
        let seq = prep_rank_sequence(&profile(&[]), &rule).unwrap();
        assert_eq!(seq.tokens, vec![CLS, PAD, PAD, PAD, PAD, PAD, PAD, PAD]);
        assert_eq!(seq.specials.cls, Some(0));
        assert_eq!(seq.content_len(), 1);
    }

    #[test]
    fn max_len_too_small_for_specials() {
        let rule = PrepRule::new("t", 1, SpecialScheme::StartEndPad, Representation::RankTokens).unwrap();
        assert!(matches!(
            prep_rank_sequence(&profile(&[(0, 1.0)]), &rule),
            Err(Error::Parameter(_))
        ));
        assert!(PrepRule::new("t", 0, SpecialScheme::None, Representation::RankTokens).is_err());
    }

    #[test]
    fn binning_oracle() {
        // log1p values 0.5, 1.0, 1.5, 2.0 over two bins of width 0.75
        let vals = [0.5f64, 1.0, 1.5, 2.0].map(f64::exp_m1);
        let p = profile(&[(0, vals[0]), (1, vals[1]), (3, vals[2]), (4, vals[3])]);
        let bins = bin_expression(&p, 6, 2).unwrap();
        assert_eq!(bins, vec![1, 1, 0, 2, 2, 0]);
        assert_eq!(bin_expression(&profile(&[]), 3, 7).unwrap(), vec![0, 0, 0]);
        assert_eq!(bin_expression(&p, 6, 2).unwrap(), bins);
        assert!(bin_expression(&p, 6, 1).is_err());
    }

    #[test]
    fn binning_max_and_min() {
        let e = std::f64::consts::E;
        let p = profile(&[(0, e - 1.0), (1, e * e - 1.0)]);
        let bins = bin_expression(&p, 2, 2).unwrap();
        assert_eq!(bins, vec![1, 2]);
    }

    #[test]
    fn symbol_text_and_top_k() {
        let v = GeneVocabulary::new(vec!["EGFR".into(), "TP53".into(), "MYC".into()]).unwrap();
        let p = profile(&[(0, 2.0), (1, 5.0)]);
        assert_eq!(symbol_text(&p, &v, 1024).unwrap(), "TP53 EGFR");
        assert_eq!(symbol_text(&profile(&[]), &v, 10).unwrap(), "");
        let tie = profile(&[(0, 7.0), (1, 7.0)]);
        assert_eq!(top_k_gene_names(&tie, &v, 1).unwrap(), vec!["EGFR"]);
    }

    #[test]
    fn llama_text_caps_at_1024() {
        let values: Vec<(u32, f64)> = (0..2000).map(|g| (g, 1.0 + (g % 17) as f64)).collect();
        let text = symbol_text(&profile(&values), &vocab(2000), 1024).unwrap();
        assert_eq!(text.split(' ').count(), 1024);
    }

    #[test]
    fn top_k_boundaries() {
        let values: Vec<(u32, f64)> = (0..1000).map(|g| (g, (g * 7 % 1000) as f64 + 1.0)).collect();
        let names = top_k_gene_names(&profile(&values), &vocab(1000), 10).unwrap();
        assert_eq!(names.len(), 10);
        let p = profile(&values);
        let ranked: Vec<f64> = names
            .iter()
            .map(|n| p.value(n[1..].parse().unwrap()))
            .collect();
        assert!(ranked.windows(2).all(|w| w[0] >= w[1]));
        let four = profile(&[(0, 1.0), (1, 2.0), (2, 3.0), (3, 4.0)]);
        assert_eq!(top_k_gene_names(&four, &vocab(10), 10).unwrap().len(), 4);
    }

    fn arb_profile() -> impl Strategy<Value = Vec<(u32, f64)>> {
        proptest::collection::btree_map(0u32..60, 0u32..6, 0..40)
            .prop_map(|m| m.into_iter().map(|(g, v)| (g, v as f64)).collect())
    }

    fn arb_rule() -> impl Strategy<Value = PrepRule> {
        (
            2usize..50,
            prop_oneof![
                Just(SpecialScheme::StartEndPad),
                Just(SpecialScheme::ClsFirst),
                Just(SpecialScheme::SourceTarget),
                Just(SpecialScheme::None)
            ],
        )
            .prop_map(|(n, s)| PrepRule::new("p", n, s, Representation::RankTokens).unwrap())
    }

    proptest! {
        #[test]
        fn rank_matches_oracle(values in arb_profile()) {
            prop_assert_eq!(rank_genes(&profile(&values)), rank_oracle(&values));
        }

        #[test]
        fn sequence_is_rank_prefix(values in arb_profile(), rule in arb_rule()) {
            let p = profile(&values);
            let seq = prep_rank_sequence(&p, &rule).unwrap();
            prop_assert!(seq.len() <= rule.max_len);
            let ranked = rank_genes(&p);
            let genes = seq.genes();
            prop_assert_eq!(&ranked[..genes.len()], &genes[..]);
            let pads = seq.tokens.iter().filter(|&&t| t == PAD).count();
            prop_assert_eq!(pads, seq.len() - seq.content_len());
            if matches!(rule.specials, SpecialScheme::StartEndPad | SpecialScheme::ClsFirst) {
                prop_assert_eq!(pads, rule.max_len - seq.content_len());
            }
            if let Some(end) = seq.specials.end {
                prop_assert!(seq.tokens[end + 1..].iter().all(|&t| t == PAD));
            }
            prop_assert_eq!(seq.clone(), prep_rank_sequence(&p, &rule).unwrap());
        }

        #[test]
        fn text_splits_back_to_symbols(values in arb_profile(), k in 1usize..30) {
            let p = profile(&values);
            let v = vocab(60);
            let text = symbol_text(&p, &v, k).unwrap();
            let names = top_k_gene_names(&p, &v, k).unwrap();
            let split: Vec<String> = if text.is_empty() { vec![] } else { text.split(' ').map(String::from).collect() };
            prop_assert_eq!(split, names);
        }
    }
}
