use crate::autodiff::{Matrix, Tape, Var};

pub const DEFAULT_ITERS: usize = 20;

/// Handles for a Sinkhorn layer recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SinkhornVars {
    /// Top-left block with the input's shape.
    pub cropped: Var,
    /// Full square matrix after normalization.
    pub padded: Var,
}

/// Records the Sinkhorn layer on `tape`.
///
/// The input is padded to a square with its minimum entry, exponentiated
/// with a column softmax in the log domain, then alternately row and
/// column normalized so that `iters` rounds end on a row normalization.
pub fn sinkhorn_on_tape(tape: &mut Tape, m: Var, iters: usize) -> SinkhornVars {
    assert!(iters >= 1, "sinkhorn needs at least one iteration");
    let (rows, cols) = tape.shape(m);
    let n = rows.max(cols);
    let padded = tape.pad_min(m, n);
    let lse = tape.logsumexp_cols(padded);
    let shifted = tape.sub_row_broadcast(padded, lse);
    let mut p = tape.exp(shifted);
    p = tape.normalize_rows(p);
    for _ in 1..iters {
        p = tape.normalize_cols(p);
        p = tape.normalize_rows(p);
    }
    let cropped = tape.crop(p, rows, cols);
    SinkhornVars { cropped, padded: p }
}

/// Result of [`sinkhorn`] on a plain matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOutput {
    pub s: Matrix,
    pub padded: Matrix,
}

pub fn sinkhorn(m: &Matrix, iters: usize) -> SinkhornOutput {
    let mut tape = Tape::new();
    let v = tape.constant(m.clone());
    let out = sinkhorn_on_tape(&mut tape, v, iters);
    SinkhornOutput {
        s: tape.value(out.cropped).clone(),
        padded: tape.value(out.padded).clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_marginal_error(p: &Matrix) -> f64 {
        p.row_sums()
            .into_iter()
            .chain(p.col_sums())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zeros_give_uniform() {
        for iters in [1, 3, 20] {
            let out = sinkhorn(&Matrix::zeros(4, 4), iters);
            assert!(out.s.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn single_entry() {
        assert_eq!(sinkhorn(&Matrix::scalar(-7.5), 20).s, Matrix::scalar(1.0));
    }

    /// Independent fixed-point oracle: plain alternating normalization of
    /// `exp(M)` without the log-domain first step.
    fn oracle(m: &Matrix, iters: usize) -> Matrix {
        let mut p = m.map(f64::exp);
        for _ in 0..iters {
            let cs = p.col_sums();
            p = Matrix::from_fn(p.rows(), p.cols(), |r, c| p.get(r, c) / cs[c]);
            let rs = p.row_sums();
            p = Matrix::from_fn(p.rows(), p.cols(), |r, c| p.get(r, c) / rs[r]);
        }
        p
    }

    #[test]
    fn two_by_two_hand_case() {
        let ln2 = 2f64.ln();
        let m = Matrix::from_rows(&[[ln2, 0.0], [0.0, ln2]]);
        let s = sinkhorn(&m, 20).s;
        // exp(M) = [[2,1],[1,2]] is already balanced: rows and columns scale
        // by 1/3.
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert!(max_marginal_error(&s) < 1e-6);
        assert!(s.max_abs_diff(&oracle(&m, 20)) < 1e-14);
    }

    #[test]
    fn agrees_with_oracle_on_random_square() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let m = Matrix::from_fn(6, 6, |_, _| rng.random_range(-2.0..2.0));
        assert!(sinkhorn(&m, 20).s.max_abs_diff(&oracle(&m, 20)) < 1e-12);
    }

    #[test]
    fn rectangular_input_is_cropped_and_padded_with_min() {
        let m = Matrix::from_rows(&[[0.5, 0.1, 0.3]]);
        let out = sinkhorn(&m, 20);
        assert_eq!(out.s.shape(), (1, 3));
        assert_eq!(out.padded.shape(), (3, 3));
        assert!(max_marginal_error(&out.padded) < 1e-6);
    }

    #[test]
    fn idempotent_on_doubly_stochastic_input() {
        let ds = Matrix::from_rows(&[[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]);
        let out = sinkhorn(&ds.map(f64::ln), 20);
        assert!(out.s.max_abs_diff(&ds) < 1e-6);
    }

    #[test]
    fn gradient_through_twenty_rounds_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let m = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let f = |x: &Matrix| -> f64 {
            let s = sinkhorn(x, 20).s;
            s.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::new();
        let mv = tape.param(m.clone());
        let out = sinkhorn_on_tape(&mut tape, mv, 20);
        let wv = tape.constant(w.clone());
        let prod = tape.hadamard(out.cropped, wv);
        let loss = tape.sum(prod);
        let g = tape.backward(loss).get(mv);
        let h = 1e-5;
        for i in 0..16 {
            let (mut p, mut q) = (m.clone(), m.clone());
            p.data_mut()[i] += h;
            q.data_mut()[i] -= h;
            let numeric = (f(&p) - f(&q)) / (2.0 * h);
            let a = g.data()[i];
            assert!((a - numeric).abs() <= 1e-4 * numeric.abs().max(a.abs()).max(1e-2), "{a} vs {numeric}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn padded_marginals_converge(
            rows in 1usize..=64, cols in 1usize..=64, seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let out = sinkhorn(&m, DEFAULT_ITERS);
            prop_assert!(max_marginal_error(&out.padded) <= 1e-6);
            prop_assert!(out.s.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
