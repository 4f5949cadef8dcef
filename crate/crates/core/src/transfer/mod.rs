//! Closed transfer-operator cocycles on a uniform grid: weighted Ulam
//! matrices, cocycle pushes, conformal sandwiches, invariant densities and
//! closed multipliers.

mod cocycle;
mod grid;

pub use cocycle::{
    conformal_sandwich, invariant_density, lambda_closed, push_cocycle, Closed, CocyclePush, Engine,
    EngineSettings, MultiplierRun, Sandwich, SiteMasks,
};
pub use grid::{build_closed_matrix, open_matrix, Grid, GridDensity, MatrixCache, TransferMatrix};

/// Emit `step, symbol, log_lambda, sandwich_lo, sandwich_hi` rows.
pub fn multipliers_csv(orbit: &crate::driving::FiberOrbit, run: &MultiplierRun, nu_mid: &[(f64, f64)]) -> String {
    let mut s = String::from("step,symbol,log_lambda,sandwich_lo,sandwich_hi\n");
    for (j, l) in run.log_lambda.iter().enumerate() {
        let (lo, hi) = nu_mid.get(j).copied().unwrap_or((f64::NAN, f64::NAN));
        s.push_str(&format!("{},{},{:.17e},{:.17e},{:.17e}\n", j, orbit.symbol(j as i64), l, lo, hi));
    }
    s
}
