use std::collections::HashMap;
use std::io::BufRead;

use serde::Deserialize;

use crate::corpus::{QaPair, Vocabulary};
use crate::numerics::Tensor;
use crate::{Error, Result};

const UNK_DIM: usize = usize::MAX;

/// Word vectors whose normalised mean represents a sentence.
#[derive(Clone, Debug)]
pub enum WordVectors {
    /// Indicator vector per distinct repository token; out-of-repository
    /// tokens share one UNK dimension. The mean-vector cosine is then the
    /// bag-of-words cosine.
    OneHot { dims: HashMap<String, usize> },
    /// Rows of an embedding table (for example trained decoder embeddings).
    Table { vocab: Vocabulary, table: Tensor },
}

impl WordVectors {
    pub fn one_hot() -> Self {
        WordVectors::OneHot {
            dims: HashMap::new(),
        }
    }

    pub fn table(vocab: Vocabulary, table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 || table.shape()[0] != vocab.len() {
            return Err(Error::dim("word vectors", table.shape(), &[vocab.len()]));
        }
        Ok(WordVectors::Table { vocab, table })
    }

    pub(crate) fn is_dense(&self) -> bool {
        matches!(self, WordVectors::Table { .. })
    }

    /// Assigns one-hot dimensions to every question token.
    pub(crate) fn fit(&mut self, pairs: &[QaPair]) {
        if let WordVectors::OneHot { dims } = self {
            for t in pairs.iter().flat_map(|p| &p.question) {
                let next = dims.len();
                dims.entry(t.clone()).or_insert(next);
            }
        }
    }

    /// Unit-norm sparse mean vector, sorted by dimension.
    pub(crate) fn sparse_sentence(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let WordVectors::OneHot { dims } = self else {
            unreachable!("sparse sentences are only built for one-hot vectors")
        };
        let mut counts: Vec<(usize, f64)> = Vec::new();
        for t in tokens {
            let d = dims.get(t).copied().unwrap_or(UNK_DIM);
            match counts.iter_mut().find(|(k, _)| *k == d) {
                Some((_, c)) => *c += 1.0,
                None => counts.push((d, 1.0)),
            }
        }
        counts.sort_by_key(|&(d, _)| d);
        let norm = counts.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|(_, c)| *c /= norm);
        }
        counts
    }

    /// Unit-norm dense mean vector.
    pub(crate) fn dense_sentence(&self, tokens: &[String]) -> Vec<f64> {
        let WordVectors::Table { vocab, table } = self else {
            unreachable!("dense sentences are only built from tables")
        };
        let d = table.shape()[1];
        let mut v = vec![0.0; d];
        for t in tokens {
            for (a, b) in v.iter_mut().zip(table.row(vocab.id(t))) {
                *a += b;
            }
        }
        if !tokens.is_empty() {
            v.iter_mut().for_each(|x| *x /= tokens.len() as f64);
        }
        super::normalize(&mut v);
        v
    }
}

#[derive(Deserialize)]
struct VectorLine {
    id: usize,
    vector: Vec<f64>,
}

/// Reads `{"id": int, "vector": [floats]}` lines into a per-question table
/// indexed by id. Ids without a line are `None`.
pub fn read_external_vectors(reader: impl BufRead) -> Result<Vec<Option<Vec<f64>>>> {
    let mut out: Vec<Option<Vec<f64>>> = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VectorLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match dim {
            None => dim = Some(v.vector.len()),
            Some(d) if d != v.vector.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("vector length {} differs from {d}", v.vector.len()),
                })
            }
            _ => {}
        }
        if out.len() <= v.id {
            out.resize(v.id + 1, None);
        }
        out[v.id] = Some(v.vector);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_file_parsing() {
        let text = "{\"id\": 1, \"vector\": [0.0, 1.0]}\n{\"id\": 0, \"vector\": [1.0, 0.0]}\n";
        let v = read_external_vectors(text.as_bytes()).unwrap();
        assert_eq!(v, vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]);
        let bad = "{\"id\": 0, \"vector\": [1.0]}\n{\"id\": 1, \"vector\": [1.0, 2.0]}\n";
        assert!(matches!(
            read_external_vectors(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn one_hot_sentence_is_unit_norm() {
        let mut w = WordVectors::one_hot();
        w.fit(&[QaPair {
            question: vec!["a".into(), "b".into()],
            answer: vec![],
        }]);
        let v = w.sparse_sentence(&["a".into(), "a".into(), "zzz".into()]);
        let n: f64 = v.iter().map(|(_, x)| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(v[0], (0, 2.0 / 5f64.sqrt()));
        assert_eq!(v[1].0, UNK_DIM);
    }
}
