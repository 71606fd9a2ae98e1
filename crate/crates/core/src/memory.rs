//! Memory needed to hold the trimmed tensors and the factor matrices.

use crate::tensor::TrimConfig;

/// `8|U|(λ^I+ρ^I+λ^II+ρ^II) + 8z(|U|+2|X|+|L|)` bytes.
pub fn estimate_memory(users: u64, locations: u64, slots: u64, trim: &TrimConfig, z: u64) -> u64 {
    let per_user = (trim.lambda_i + trim.rho_i + trim.lambda_ii + trim.rho_ii) as u64;
    8 * users * per_user + 8 * z * (users + 2 * locations + slots)
}
