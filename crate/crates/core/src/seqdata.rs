//! Ingestion and encoding of categorical sequences, and the lag design.
//!
//! Categories are encoded as `0..C0` internally. Lag `j` (1-based, as in
//! "the j-th lag") is stored at index `j - 1`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens treated as missing observations. Missing values are rejected.
const MISSING_TOKENS: &[&str] = &["NA", "NaN", "?"];

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Whitespace or newline separated tokens.
    Plain,
    /// A single column, optionally preceded by a header row.
    Csv { header: bool },
    /// One `>`-headed record; every non-whitespace character is a symbol.
    Fasta,
}

/// Ordered symbol alphabet with a stable symbol <-> integer mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::Input("alphabet is empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate alphabet symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Alphabet of the distinct tokens, sorted lexicographically.
    pub fn infer<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = tokens.into_iter().collect();
        Self::new(set)
    }

    /// `1..=n` as decimal labels; the natural alphabet for integer-coded data.
    pub fn numeric(n: usize) -> Self {
        Self::new((1..=n).map(|i| i.to_string())).expect("n >= 1")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn code(&self, symbol: &str) -> Option<usize> {
        if self.index.is_empty() {
            return self.symbols.iter().position(|s| s == symbol);
        }
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, code: usize) -> Option<&str> {
        self.symbols.get(code).map(String::as_str)
    }

    /// Encode `tokens`; the error names the first offending token and its
    /// 0-based position.
    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        tokens
            .into_iter()
            .enumerate()
            .map(|(position, tok)| {
                if tok.is_empty() || MISSING_TOKENS.contains(&tok) && self.code(tok).is_none() {
                    return Err(Error::MissingValue { position });
                }
                self.code(tok).ok_or_else(|| Error::UnknownSymbol {
                    symbol: tok.to_string(),
                    position,
                })
            })
            .collect()
    }

    pub fn decode(&self, codes: &[usize]) -> Result<Vec<&str>> {
        codes
            .iter()
            .map(|&c| {
                self.symbol(c).ok_or_else(|| {
                    Error::Dimension(format!("code {c} outside alphabet of size {}", self.len()))
                })
            })
            .collect()
    }
}

/// An encoded sequence before a lag design is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub alphabet: Alphabet,
    pub values: Vec<usize>,
}

impl EncodedSequence {
    pub fn from_tokens<'a>(
        tokens: impl IntoIterator<Item = &'a str> + Clone,
        alphabet: Option<Alphabet>,
    ) -> Result<Self> {
        let alphabet = match alphabet {
            Some(a) => a,
            None => {
                let toks: Vec<&str> = tokens.clone().into_iter().collect();
                if let Some(position) = toks
                    .iter()
                    .position(|t| t.is_empty() || MISSING_TOKENS.contains(t))
                {
                    return Err(Error::MissingValue { position });
                }
                Alphabet::infer(toks)?
            }
        };
        let values = alphabet.encode(tokens)?;
        if values.is_empty() {
            return Err(Error::Input("sequence is empty".into()));
        }
        Ok(Self { alphabet, values })
    }

    /// Integer-coded values already in `0..n_categories`.
    pub fn from_codes(values: Vec<usize>, n_categories: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("sequence is empty".into()));
        }
        if let Some(position) = values.iter().position(|&v| v >= n_categories) {
            return Err(Error::UnknownSymbol {
                symbol: values[position].to_string(),
                position,
            });
        }
        Ok(Self {
            alphabet: Alphabet::numeric(n_categories),
            values,
        })
    }

    pub fn n_categories(&self) -> usize {
        self.alphabet.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn decode(&self) -> Result<Vec<&str>> {
        self.alphabet.decode(&self.values)
    }
}

/// Read and encode a sequence file.
pub fn load_sequence(
    path: impl AsRef<Path>,
    format: Format,
    alphabet: Option<Alphabet>,
) -> Result<EncodedSequence> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_sequence(&text, format, alphabet)
}

/// Encode sequence text in the given layout.
pub fn parse_sequence(
    text: &str,
    format: Format,
    alphabet: Option<Alphabet>,
) -> Result<EncodedSequence> {
    let tokens: Vec<String> = match format {
        Format::Plain => text.split_whitespace().map(str::to_string).collect(),
        Format::Csv { header } => csv_tokens(text, header)?,
        Format::Fasta => fasta_tokens(text)?,
    };
    if tokens.is_empty() {
        return Err(Error::Input("input contains no symbols".into()));
    }
    EncodedSequence::from_tokens(tokens.iter().map(String::as_str), alphabet)
}

fn csv_tokens(text: &str, header: bool) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("csv: {e}")))?;
        if record.len() != 1 {
            return Err(Error::Input(format!(
                "csv row {} has {} columns; expected a single column",
                row + 1,
                record.len()
            )));
        }
        out.push(record[0].trim().to_string());
    }
    Ok(out)
}

fn fasta_tokens(text: &str) -> Result<Vec<String>> {
    let mut records = 0usize;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('>') {
            records += 1;
            if records > 1 {
                return Err(Error::Input(
                    "FASTA file contains more than one record; one sequence per fit".into(),
                ));
            }
            continue;
        }
        if records == 0 {
            return Err(Error::Input(
                "FASTA sequence data before the first '>' header".into(),
            ));
        }
        out.extend(
            line.chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from),
        );
    }
    if records == 0 {
        return Err(Error::Input("no FASTA record found".into()));
    }
    Ok(out)
}

/// A sequence together with its lag design for maximal order `q`.
///
/// Modeled time points are `t = q+1, ..., T` (1-based); the first `q`
/// observations are only used as predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    n_categories: usize,
    max_order: usize,
    responses: Vec<usize>,
    /// `lags[j][i] = y[t - (j+1)]` for the `i`-th modeled point.
    lags: Vec<Vec<usize>>,
    /// `lag_counts[j][r]`: occurrences of category `r` in lag column `j`.
    lag_counts: Vec<Vec<usize>>,
}

impl SequenceData {
    /// Attach the lag design of maximal order `q` to an encoded sequence.
    pub fn build(seq: &EncodedSequence, q: usize) -> Result<Self> {
        build_lag_design(&seq.values, seq.n_categories(), q)
    }

    /// A design whose responses need not coincide with the lagged values,
    /// e.g. for redrawing responses in simulation-based checks.
    pub fn from_design(
        lags: Vec<Vec<usize>>,
        responses: Vec<usize>,
        n_categories: usize,
    ) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::InvalidParameter(
                "maximal order must be at least 1".into(),
            ));
        }
        if lags.iter().any(|col| col.len() != responses.len()) {
            return Err(Error::Dimension(
                "lag columns and responses differ in length".into(),
            ));
        }
        if responses
            .iter()
            .chain(lags.iter().flatten())
            .any(|&v| v >= n_categories)
        {
            return Err(Error::Dimension("value outside 0..C0".into()));
        }
        let lag_counts = tally(&lags, n_categories);
        Ok(Self {
            n_categories,
            max_order: lags.len(),
            responses,
            lags,
            lag_counts,
        })
    }

    /// Same design, different responses.
    pub fn with_responses(&self, responses: Vec<usize>) -> Result<Self> {
        Self::from_design(self.lags.clone(), responses, self.n_categories)
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of modeled observations, `T - q`.
    pub fn n_obs(&self) -> usize {
        self.responses.len()
    }

    pub fn responses(&self) -> &[usize] {
        &self.responses
    }

    /// Column of lag `j` (0-based index).
    pub fn lag(&self, j: usize) -> &[usize] {
        &self.lags[j]
    }

    pub fn lags(&self) -> &[Vec<usize>] {
        &self.lags
    }

    pub fn lag_counts(&self, j: usize) -> &[usize] {
        &self.lag_counts[j]
    }

    pub fn all_lag_counts(&self) -> &[Vec<usize>] {
        &self.lag_counts
    }

    /// Context `(w_1, ..., w_q)` of the `i`-th modeled point.
    pub fn context(&self, i: usize) -> Vec<usize> {
        self.lags.iter().map(|col| col[i]).collect()
    }
}

/// Build the lag design `w[j][t] = y[t - j]` for `t = q+1..T`.
pub fn build_lag_design(y: &[usize], n_categories: usize, q: usize) -> Result<SequenceData> {
    if q == 0 {
        return Err(Error::InvalidParameter(
            "maximal order must be at least 1".into(),
        ));
    }
    if y.len() <= q {
        return Err(Error::InsufficientData {
            len: y.len(),
            order: q,
        });
    }
    let lags: Vec<Vec<usize>> = (1..=q)
        .map(|j| (q..y.len()).map(|t| y[t - j]).collect())
        .collect();
    let responses = y[q..].to_vec();
    SequenceData::from_design(lags, responses, n_categories)
}

/// Contexts (lag 1 first) for every position `t` in `range` of a full sequence.
pub fn contexts_at(y: &[usize], q: usize, range: std::ops::Range<usize>) -> Vec<Vec<usize>> {
    range.map(|t| (1..=q).map(|j| y[t - j]).collect()).collect()
}

fn tally(lags: &[Vec<usize>], n_categories: usize) -> Vec<Vec<usize>> {
    lags.iter()
        .map(|col| {
            let mut counts = vec![0usize; n_categories];
            for &v in col {
                counts[v] += 1;
            }
            counts
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_numeric_encoding() {
        let alpha = Alphabet::new(["1", "2"]).unwrap();
        let seq = parse_sequence("1 2 1\n1 2", Format::Plain, Some(alpha)).unwrap();
        assert_eq!(seq.values, vec![0, 1, 0, 0, 1]);
        assert_eq!(seq.n_categories(), 2);
        assert_eq!(seq.len(), 5);
    }

    #[test]
    fn fasta_positional_encoding() {
        let alpha = Alphabet::new(["A", "C", "G", "T"]).unwrap();
        let seq = parse_sequence(">rec1 some gene\nAC\nGT\n", Format::Fasta, Some(alpha)).unwrap();
        assert_eq!(seq.values, vec![0, 1, 2, 3]);
        assert_eq!(seq.n_categories(), 4);
    }

    #[test]
    fn fasta_multi_record_rejected() {
        let err = parse_sequence(">a\nAC\n>b\nGT\n", Format::Fasta, None).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn csv_unknown_symbol_reports_position() {
        let alpha = Alphabet::new(["A", "C", "G", "T"]).unwrap();
        let err = parse_sequence(
            "sym\nA\nC\nX\nG\n",
            Format::Csv { header: true },
            Some(alpha),
        )
        .unwrap_err();
        match err {
            Error::UnknownSymbol { symbol, position } => {
                assert_eq!(symbol, "X");
                assert_eq!(position, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_multiple_columns() {
        assert!(parse_sequence("A,C\n", Format::Csv { header: false }, None).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse_sequence("  \n", Format::Plain, None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn missing_values_rejected() {
        let err = parse_sequence("A C NA G", Format::Plain, None).unwrap_err();
        assert!(matches!(err, Error::MissingValue { position: 2 }));
        let err = parse_sequence("A\n\"\"\nC\n", Format::Csv { header: false }, None).unwrap_err();
        assert!(matches!(err, Error::MissingValue { position: 1 }));
    }

    #[test]
    fn inferred_alphabet_is_sorted() {
        let seq = parse_sequence("T G A C A", Format::Plain, None).unwrap();
        assert_eq!(seq.alphabet.symbols(), &["A", "C", "G", "T"]);
        assert_eq!(seq.values, vec![3, 2, 0, 1, 0]);
    }

    #[test]
    fn lag_design_by_definition() {
        let data = build_lag_design(&[0, 1, 0, 0, 1], 2, 2).unwrap();
        // 1-based: w[1] = [2,1,1], w[2] = [1,2,1]
        assert_eq!(data.lag(0), &[1, 0, 0]);
        assert_eq!(data.lag(1), &[0, 1, 0]);
        assert_eq!(data.responses(), &[0, 0, 1]);
        assert_eq!(data.n_obs(), 3);
        assert_eq!(data.context(0), vec![1, 0]);
    }

    #[test]
    fn lag_counts_for_constant_sequence() {
        let data = build_lag_design(&[0, 0, 0, 0], 3, 1).unwrap();
        assert_eq!(data.lag_counts(0), &[3, 0, 0]);
    }

    #[test]
    fn order_not_below_length_is_insufficient() {
        let err = build_lag_design(&[0, 1, 0, 1, 1], 2, 5).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { len: 5, order: 5 }));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(tokens in prop::collection::vec("[a-e]{1,2}", 1..60)) {
            let text = tokens.join(" ");
            let seq = parse_sequence(&text, Format::Plain, None).unwrap();
            let decoded: Vec<String> = seq.decode().unwrap().into_iter().map(String::from).collect();
            prop_assert_eq!(decoded, tokens);
        }

        #[test]
        fn lag_counts_match_independent_tally(
            y in prop::collection::vec(0usize..4, 6..80),
            q in 1usize..5,
        ) {
            let data = build_lag_design(&y, 4, q).unwrap();
            for j in 1..=q {
                let mut counts = [0usize; 4];
                for t in q..y.len() {
                    counts[y[t - j]] += 1;
                }
                prop_assert_eq!(data.lag_counts(j - 1), &counts[..]);
                prop_assert_eq!(counts.iter().sum::<usize>(), y.len() - q);
                for (i, t) in (q..y.len()).enumerate() {
                    prop_assert_eq!(data.lag(j - 1)[i], y[t - j]);
                }
            }
        }
    }
}
