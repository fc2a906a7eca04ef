use crate::autodiff::{Matrix, Tape, Var};

/// Records `(1 - lambda) * ||D . S||_F + lambda * ||T . S||_F`.
pub fn loss_on_tape(tape: &mut Tape, d: Var, t: Var, s: Var, lambda: f64) -> Var {
    let ds = tape.hadamard(d, s);
    let dist = tape.frobenius(ds);
    let ts = tape.hadamard(t, s);
    let structural = tape.frobenius(ts);
    let a = tape.scale(dist, 1.0 - lambda);
    let b = tape.scale(structural, lambda);
    tape.add(a, b)
}

/// Plain evaluation of the matching loss.
pub fn loss(d: &Matrix, t: &Matrix, s: &Matrix, lambda: f64) -> f64 {
    let dist = d.zip_map(s, |x, y| x * y).frobenius_norm();
    let structural = t.zip_map(s, |x, y| x * y).frobenius_norm();
    (1.0 - lambda) * dist + lambda * structural
}
