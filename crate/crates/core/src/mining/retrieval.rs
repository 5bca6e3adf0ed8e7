use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub frame: u64,
    pub similarity: f64,
}

fn norm(v: &[f64], what: &str) -> Result<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidFeature(format!("{what} has zero or non-finite norm")));
    }
    Ok(n)
}

/// The `top_k` corpus frames most similar to `query` by cosine similarity,
/// best first; equal similarities are ordered by frame id.
pub fn global_match(query: &[f64], corpus: &[(u64, Vec<f64>)], top_k: usize) -> Result<Vec<Match>> {
    let qn = norm(query, "query")?;
    let mut out = corpus
        .iter()
        .map(|(frame, v)| {
            if v.len() != query.len() {
                return Err(Error::Shape(format!("frame {frame}: {} features, query has {}", v.len(), query.len())));
            }
            let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
            Ok(Match {
                frame: *frame,
                similarity: (dot / (qn * norm(v, &format!("frame {frame}"))?)).clamp(-1.0, 1.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.frame.cmp(&b.frame)));
    out.truncate(top_k);
    Ok(out)
}
