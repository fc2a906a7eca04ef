use super::params::{KernelParams, MlpVars};
use crate::autodiff::{Matrix, Tape, Var};

/// Cap on the network output so the kernel never underflows to zero.
const PSI_MAX: f64 = 700.0;

/// Records `exp(-softplus(psi(d)))` per entry, computed as the equivalent
/// `sigmoid(-psi(d))`.
pub fn kernel_on_tape(tape: &mut Tape, net: MlpVars, d: Var) -> Var {
    let psi = tape.scalar_mlp(d, net.w1, net.b1, net.w2, net.b2);
    let psi = tape.clamp_max(psi, PSI_MAX);
    let neg = tape.neg(psi);
    tape.sigmoid(neg)
}

/// Spatial compatibility kernel applied entrywise to a distance matrix.
pub fn kernel_apply(d: &Matrix, params: &KernelParams) -> Matrix {
    d.map(|x| {
        let psi = params.net.eval(x).min(PSI_MAX);
        if psi >= 0.0 {
            let e = (-psi).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + psi.exp())
        }
    })
}
