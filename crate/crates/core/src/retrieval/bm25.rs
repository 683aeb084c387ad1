use std::collections::HashMap;

pub const K1: f64 = 1.5;
pub const B: f64 = 0.75;

/// Okapi BM25 term statistics over a set of documents.
#[derive(Clone, Debug)]
pub struct Bm25Index {
    doc_freq: HashMap<String, usize>,
    term_counts: Vec<HashMap<String, usize>>,
    doc_len: Vec<usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build(docs: &[Vec<String>]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut term_counts = Vec::with_capacity(docs.len());
        for d in docs {
            let mut tc: HashMap<String, usize> = HashMap::new();
            for t in d {
                *tc.entry(t.clone()).or_default() += 1;
            }
            for t in tc.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_counts.push(tc);
        }
        let doc_len: Vec<usize> = docs.iter().map(Vec::len).collect();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / docs.len() as f64
        };
        Bm25Index {
            doc_freq,
            term_counts,
            doc_len,
            avg_len,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_len.len()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of document `doc` for `query`; repeated query terms count
    /// once per occurrence.
    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let tc = &self.term_counts[doc];
        let norm = if self.avg_len > 0.0 {
            1.0 - B + B * self.doc_len[doc] as f64 / self.avg_len
        } else {
            1.0
        };
        query
            .iter()
            .map(|q| match tc.get(q) {
                Some(&f) => {
                    let f = f as f64;
                    self.idf(q) * f * (K1 + 1.0) / (f + K1 * norm)
                }
                None => 0.0,
            })
            .sum()
    }
}
