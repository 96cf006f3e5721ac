use crate::task::fnv;

/// Text to fixed-dimension unit vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn deterministic(&self) -> bool;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Feature hashing of token counts into a fixed number of buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dimension: usize,
}

pub const DEFAULT_DIMENSION: usize = 256;

impl Default for HashEmbedder {
    fn default() -> HashEmbedder {
        HashEmbedder { dimension: DEFAULT_DIMENSION }
    }
}

/// Lowercased runs of identifier characters. `key=value` pairs are kept
/// whole as well as split, so `rank=4` and `rank=2` differ.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '=' || c == '.')) {
        let word = word.trim_matches('.').to_lowercase();
        if word.is_empty() {
            continue;
        }
        if word.contains('=') {
            out.extend(word.split('=').filter(|p| !p.is_empty()).map(str::to_string));
        }
        out.push(word);
    }
    out
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for t in tokens(text) {
            v[(fnv(&t) % self.dimension as u64) as usize] += 1.0;
        }
        normalize(v)
    }
}

/// Scales to unit length; the zero vector maps to the first basis vector so
/// every embedding stays a unit vector.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return v;
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
