use super::spec::KfcSpec;

/// Parameter and multiply-add counts of a KFC layer next to the dense layer it replaces.
///
/// `params` counts factor entries only; the `bias` entries are reported
/// separately. `dense_params` is likewise the dense weight without its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    pub macs: u64,
    pub params: u64,
    pub bias: u64,
    pub dense_macs: u64,
    pub dense_params: u64,
}

impl FlopReport {
    pub fn param_reduction(&self) -> f64 {
        1.0 - self.params as f64 / self.dense_params as f64
    }

    pub fn mac_reduction(&self) -> f64 {
        1.0 - self.macs as f64 / self.dense_macs as f64
    }
}

/// Factor parameters: `sum_j rank_j * sum_f rows_f * cols_f`.
pub fn count_params(spec: &KfcSpec) -> u64 {
    spec.groups().iter().map(|g| g.rank as u64 * g.shape.params()).sum()
}

/// Multiply-adds of one forward pass over `batch` rows. A two-factor term
/// `(C1 x K1) ⊗ (C2 x K2)` costs `K1 * C2 * (C1 + K2)` per row.
pub fn count_macs(spec: &KfcSpec, batch: usize) -> FlopReport {
    let per_row: u64 = spec.groups().iter().map(|g| g.rank as u64 * g.shape.chain_macs()).sum();
    let dense = (spec.input_dim() * spec.output_dim()) as u64;
    FlopReport {
        macs: batch as u64 * per_row,
        params: count_params(spec),
        bias: spec.output_dim() as u64,
        dense_macs: batch as u64 * dense,
        dense_params: dense,
    }
}
