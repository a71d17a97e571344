//! Triple scoring functions. Higher scores mean more plausible triples.
//!
//! ComplEx vectors of width `2d` hold the real parts in the first half and
//! the imaginary parts in the second.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnum::{DiffError, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("decoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    DistMult,
    TransE,
    HolE,
    ComplEx,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [DecoderKind::DistMult, DecoderKind::TransE, DecoderKind::HolE, DecoderKind::ComplEx];

    /// Relation and entity vectors must have this width for embedding width `d`.
    pub fn check_width(self, d: usize) -> Result<(), DecoderError> {
        if d == 0 {
            return Err(DecoderError::Dimension("zero embedding width".into()));
        }
        if self == DecoderKind::ComplEx && !d.is_multiple_of(2) {
            return Err(DecoderError::Dimension(format!("complex needs an even width, got {}", d)));
        }
        Ok(())
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::DistMult => "distmult",
            DecoderKind::TransE => "transe",
            DecoderKind::HolE => "hole",
            DecoderKind::ComplEx => "complex",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecoderKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown decoder {:?} (expected distmult, transe, hole, complex)", s))
    }
}

/// Learned relation embeddings, one row per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub kind: DecoderKind,
    pub rel_emb: Tensor,
}

/// Uniform in `[-0.5/sqrt(d), 0.5/sqrt(d)]`.
pub fn uniform_embeddings(rng: &mut impl Rng, rows: usize, d: usize) -> Tensor {
    let limit = 0.5 / (d as f64).sqrt();
    Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.gen_range(-limit..=limit)).collect()).unwrap()
}

impl DecoderParams {
    pub fn init(kind: DecoderKind, num_relations: usize, d: usize, rng: &mut impl Rng) -> Result<Self, DecoderError> {
        kind.check_width(d)?;
        Ok(Self { kind, rel_emb: uniform_embeddings(rng, num_relations, d) })
    }

    pub fn num_relations(&self) -> usize {
        self.rel_emb.rows()
    }

    pub fn width(&self) -> usize {
        self.rel_emb.cols()
    }
}

/// Scores one triple from plain vectors.
pub fn score(kind: DecoderKind, h: &[f64], r: &[f64], t: &[f64]) -> Result<f64, DecoderError> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(DecoderError::Dimension(format!("h {} r {} t {}", h.len(), r.len(), t.len())));
    }
    kind.check_width(h.len())?;
    let d = h.len();
    Ok(match kind {
        DecoderKind::DistMult => h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum(),
        DecoderKind::TransE => -h.iter().zip(r).zip(t).map(|((a, b), c)| (a + b - c).powi(2)).sum::<f64>().sqrt(),
        DecoderKind::HolE => (0..d).map(|k| r[k] * (0..d).map(|m| h[m] * t[(m + k) % d]).sum::<f64>()).sum(),
        DecoderKind::ComplEx => {
            let n = d / 2;
            let (hr, hi) = h.split_at(n);
            let (rr, ri) = r.split_at(n);
            let (tr, ti) = t.split_at(n);
            (0..n)
                .map(|k| rr[k] * hr[k] * tr[k] + rr[k] * hi[k] * ti[k] + ri[k] * hr[k] * ti[k] - ri[k] * hi[k] * tr[k])
                .sum()
        }
    })
}

/// Scores a batch on the tape: `h`, `r`, `t` are `B × d` and the result is a
/// length-`B` vector. A single triple may also be given as three vectors, in
/// which case the result is a scalar.
pub fn score_on_tape(tape: &mut Tape, kind: DecoderKind, h: Var, r: Var, t: Var) -> Result<Var, DecoderError> {
    let shape = tape.value(h).shape().to_vec();
    if tape.value(r).shape() != shape.as_slice() || tape.value(t).shape() != shape.as_slice() {
        return Err(DecoderError::Dimension(format!(
            "h {:?} r {:?} t {:?}",
            shape,
            tape.value(r).shape(),
            tape.value(t).shape()
        )));
    }
    if shape.is_empty() || shape.len() > 2 {
        return Err(DecoderError::Dimension(format!("expected vectors or matrices, got {:?}", shape)));
    }
    let d = *shape.last().unwrap();
    kind.check_width(d)?;
    let reduce = |tape: &mut Tape, x: Var| -> Result<Var, DiffError> {
        if shape.len() == 1 {
            tape.sum(x)
        } else {
            tape.sum_axis(x, 1)
        }
    };
    let out = match kind {
        DecoderKind::DistMult => {
            let hr = tape.mul(h, r)?;
            let prod = tape.mul(hr, t)?;
            reduce(tape, prod)?
        }
        DecoderKind::TransE => {
            let hr = tape.add(h, r)?;
            let res = tape.sub(hr, t)?;
            let norm = tape.l2_norm(res)?;
            tape.scale(norm, -1.0)?
        }
        DecoderKind::HolE => {
            let corr = tape.circular_correlation(h, t)?;
            let prod = tape.mul(r, corr)?;
            reduce(tape, prod)?
        }
        DecoderKind::ComplEx => {
            let n = d / 2;
            let mut halves = |x: Var| -> Result<(Var, Var), DiffError> { Ok((tape.slice(x, 0, n)?, tape.slice(x, n, n)?)) };
            let (hr, hi) = halves(h)?;
            let (rr, ri) = halves(r)?;
            let (tr, ti) = halves(t)?;
            let mut term = |a: Var, b: Var, c: Var| -> Result<Var, DiffError> {
                let ab = tape.mul(a, b)?;
                tape.mul(ab, c)
            };
            let t1 = term(rr, hr, tr)?;
            let t2 = term(rr, hi, ti)?;
            let t3 = term(ri, hr, ti)?;
            let t4 = term(ri, hi, tr)?;
            let s = tape.add(t1, t2)?;
            let s = tape.add(s, t3)?;
            let s = tape.sub(s, t4)?;
            reduce(tape, s)?
        }
    };
    Ok(out)
}

/// `β α_encoder + (1 - β) α_embedding`.
pub fn ensemble_score(alpha_encoder: f64, alpha_embedding: f64, beta: f64) -> Result<f64, DecoderError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(DecoderError::Config(format!("beta {} outside [0, 1]", beta)));
    }
    Ok(beta * alpha_encoder + (1.0 - beta) * alpha_embedding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn distmult_example() {
        assert_eq!(score(DecoderKind::DistMult, &[1.0, 0.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn transe_zero_residual_is_maximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_vec(&mut rng, 5);
        let r = rand_vec(&mut rng, 5);
        let t: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
        assert_abs_diff_eq!(score(DecoderKind::TransE, &h, &r, &t).unwrap(), 0.0, epsilon = 1e-15);
        for _ in 0..20 {
            let other = rand_vec(&mut rng, 5);
            assert!(score(DecoderKind::TransE, &h, &r, &other).unwrap() <= 0.0);
        }
    }

    #[test]
    fn hole_example() {
        assert_eq!(score(DecoderKind::HolE, &[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn complex_is_asymmetric() {
        let h = [1.0, 0.0, 0.0, 1.0];
        let r = [0.0, 0.0, 1.0, 0.0];
        let t = [0.0, 1.0, 1.0, 0.0];
        let ab = score(DecoderKind::ComplEx, &h, &r, &t).unwrap();
        let ba = score(DecoderKind::ComplEx, &t, &r, &h).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(score(DecoderKind::DistMult, &[1.0], &[1.0, 2.0], &[1.0]), Err(DecoderError::Dimension(_))));
        assert!(matches!(score(DecoderKind::ComplEx, &[1.0; 3], &[1.0; 3], &[1.0; 3]), Err(DecoderError::Dimension(_))));
    }

    #[test]
    fn ensemble_examples() {
        assert_abs_diff_eq!(ensemble_score(0.5, 0.25, 0.4).unwrap(), 0.35, epsilon = 1e-15);
        assert_eq!(ensemble_score(0.5, 0.25, 1.0).unwrap(), 0.5);
        assert_eq!(ensemble_score(0.5, 0.25, 0.0).unwrap(), 0.25);
        assert!(matches!(ensemble_score(0.5, 0.25, 1.5), Err(DecoderError::Config(_))));
    }

    #[test]
    fn tape_scores_match_plain_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in DecoderKind::ALL {
            let rows: Vec<[Vec<f64>; 3]> =
                (0..4).map(|_| [rand_vec(&mut rng, 6), rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)]).collect();
            let mut tape = Tape::new();
            let mat = |k: usize, tape: &mut Tape| {
                tape.constant(Tensor::from_rows(&rows.iter().map(|r| r[k].clone()).collect::<Vec<_>>()).unwrap())
            };
            let (h, r, t) = (mat(0, &mut tape), mat(1, &mut tape), mat(2, &mut tape));
            let s = score_on_tape(&mut tape, kind, h, r, t).unwrap();
            for (b, row) in rows.iter().enumerate() {
                let expect = score(kind, &row[0], &row[1], &row[2]).unwrap();
                assert_abs_diff_eq!(tape.value(s).data()[b], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scores_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in DecoderKind::ALL {
            for _ in 0..20 {
                let params: Vec<Tensor> = (0..3).map(|_| Tensor::vector(rand_vec(&mut rng, 4))).collect();
                let report =
                    grad_check(|tape, v| Ok(score_on_tape(tape, kind, v[0], v[1], v[2]).unwrap()), &params, 1e-6, 1e-6).unwrap();
                assert!(report.passed, "{}: {:?}", kind, report);
            }
        }
    }

    #[test]
    fn kind_round_trips_through_str() {
        for k in DecoderKind::ALL {
            assert_eq!(k.to_string().parse::<DecoderKind>().unwrap(), k);
        }
    }
}
