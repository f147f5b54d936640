use std::fmt;
use std::str::FromStr;

use crate::error::{KfcError, Result};

/// Factor-shape family of one group of Kronecker terms.
///
/// For tensor input `(C, H, W)` with output `K`:
///
/// | tag  | factors                        |
/// |------|--------------------------------|
/// | I    | `C x K1`, `H x K2`, `W x K3`    |
/// | II   | `C x K1`, `HW x K2`            |
/// | III  | `CH x K1`, `W x K2`            |
/// | IV   | `CW x K1`, `H x K2`            |
///
/// `KFCM` is the plain-matrix variant with factors `C1 x K1`, `C2 x K2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    I,
    II,
    III,
    IV,
    Kfcm,
}

impl Formulation {
    pub const ALL: [Formulation; 5] =
        [Formulation::I, Formulation::II, Formulation::III, Formulation::IV, Formulation::Kfcm];

    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::I => "I",
            Formulation::II => "II",
            Formulation::III => "III",
            Formulation::IV => "IV",
            Formulation::Kfcm => "KFCM",
        }
    }

    pub fn factor_count(self) -> usize {
        if self == Formulation::I {
            3
        } else {
            2
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formulation {
    type Err = KfcError;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| KfcError::arg(format!("unknown formulation {s:?}; valid tags are I, II, III, IV, KFCM")))
    }
}

/// What the layer consumes: a flattened `(C, H, W)` tensor or a plain feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Tensor { channels: usize, height: usize, width: usize },
    Matrix { features: usize },
}

impl InputKind {
    pub fn dim(&self) -> usize {
        match *self {
            InputKind::Tensor { channels, height, width } => channels * height * width,
            InputKind::Matrix { features } => features,
        }
    }
}

/// Shapes `(rows, cols)` of the factors of one Kronecker term, outermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorShape {
    factors: Vec<(usize, usize)>,
}

impl FactorShape {
    pub fn new(factors: Vec<(usize, usize)>) -> Result<Self> {
        if !(2..=3).contains(&factors.len()) {
            return Err(KfcError::arg(format!("a Kronecker term needs 2 or 3 factors, got {}", factors.len())));
        }
        if factors.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(KfcError::arg("factor dimensions must be positive"));
        }
        Ok(Self { factors })
    }

    pub fn two(rows_a: usize, cols_a: usize, rows_b: usize, cols_b: usize) -> Result<Self> {
        Self::new(vec![(rows_a, cols_a), (rows_b, cols_b)])
    }

    pub fn factors(&self) -> &[(usize, usize)] {
        &self.factors
    }

    pub fn in_dim(&self) -> usize {
        self.factors.iter().map(|f| f.0).product()
    }

    pub fn out_dim(&self) -> usize {
        self.factors.iter().map(|f| f.1).product()
    }

    pub fn params(&self) -> u64 {
        self.factors.iter().map(|&(r, c)| (r * c) as u64).sum()
    }

    /// Multiplies spent by the factored chain on one input row: contracting
    /// factor `i` costs `(prod_{j<i} K_j) * (prod_{j>=i} C_j) * K_i`.
    pub fn chain_macs(&self) -> u64 {
        let mut total = 0u64;
        for i in 0..self.factors.len() {
            let done: u64 = self.factors[..i].iter().map(|f| f.1 as u64).product();
            let pending: u64 = self.factors[i..].iter().map(|f| f.0 as u64).product();
            total += done * pending * self.factors[i].1 as u64;
        }
        total
    }
}

impl fmt::Display for FactorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|(r, c)| format!("{r}x{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KfcGroup {
    pub formulation: Formulation,
    pub shape: FactorShape,
    pub rank: usize,
}

/// Structure of a KFC layer: `W = sum_j sum_i A_ij ⊗ B_ij (⊗ C_ij)`.
///
/// `input_pad` zero features are appended to matrix inputs so that the padded
/// dimension factors; forward zero-fills them and materialize drops them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KfcSpec {
    input: InputKind,
    output: usize,
    input_pad: usize,
    groups: Vec<KfcGroup>,
}

impl KfcSpec {
    pub fn new(input: InputKind, output: usize, input_pad: usize, groups: Vec<KfcGroup>) -> Result<Self> {
        let spec = Self { input, output, input_pad, groups };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.input.dim() == 0 || self.output == 0 {
            return Err(KfcError::arg("layer dimensions must be positive"));
        }
        if self.groups.is_empty() {
            return Err(KfcError::arg("a KFC layer needs at least one group"));
        }
        if self.input_pad > 0 && matches!(self.input, InputKind::Tensor { .. }) {
            return Err(KfcError::arg("input padding is only defined for matrix input"));
        }
        let in_dim = self.padded_input_dim();
        for (j, g) in self.groups.iter().enumerate() {
            if g.rank == 0 {
                return Err(KfcError::arg(format!("group {j} has rank 0")));
            }
            if g.shape.factors().len() != g.formulation.factor_count() {
                return Err(KfcError::shape(format!(
                    "group {j}: formulation {} needs {} factors, got {}",
                    g.formulation,
                    g.formulation.factor_count(),
                    g.shape.factors().len()
                )));
            }
            match (g.formulation, self.input) {
                (Formulation::Kfcm, _) => {}
                (f, InputKind::Matrix { .. }) => {
                    return Err(KfcError::arg(format!("formulation {f} needs tensor input")));
                }
                (f, InputKind::Tensor { channels: c, height: h, width: w }) => {
                    let expected_rows: Vec<usize> = match f {
                        Formulation::I => vec![c, h, w],
                        Formulation::II => vec![c, h * w],
                        Formulation::III => vec![c * h, w],
                        Formulation::IV => vec![c * w, h],
                        Formulation::Kfcm => unreachable!(),
                    };
                    let rows: Vec<usize> = g.shape.factors().iter().map(|f| f.0).collect();
                    if rows != expected_rows {
                        return Err(KfcError::shape(format!(
                            "group {j}: formulation {f} on ({c},{h},{w}) needs factor rows {expected_rows:?}, got {rows:?}"
                        )));
                    }
                }
            }
            if g.shape.in_dim() != in_dim {
                return Err(KfcError::shape(format!(
                    "group {j}: factor rows multiply to {}, layer input is {in_dim}",
                    g.shape.in_dim()
                )));
            }
            if g.shape.out_dim() != self.output {
                return Err(KfcError::shape(format!(
                    "group {j}: factor columns multiply to {}, layer output is {}",
                    g.shape.out_dim(),
                    self.output
                )));
            }
        }
        Ok(())
    }

    pub fn input(&self) -> InputKind {
        self.input
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn input_pad(&self) -> usize {
        self.input_pad
    }

    pub fn padded_input_dim(&self) -> usize {
        self.input.dim() + self.input_pad
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn groups(&self) -> &[KfcGroup] {
        &self.groups
    }

    pub fn total_rank(&self) -> usize {
        self.groups.iter().map(|g| g.rank).sum()
    }

    /// Position of flattened input feature `j` inside the Kronecker ordering of
    /// group `g`. Identity except for Formulation IV, which reads `(c, h, w)` as
    /// `(c, w, h)`.
    pub fn permuted_index(&self, formulation: Formulation, j: usize) -> usize {
        match (formulation, self.input) {
            (Formulation::IV, InputKind::Tensor { height: h, width: w, .. }) => {
                let (c, rest) = (j / (h * w), j % (h * w));
                let (hi, wi) = (rest / w, rest % w);
                c * (w * h) + wi * h + hi
            }
            _ => j,
        }
    }

    /// Creates a single-group spec for one of the tensor formulations.
    pub fn formulation(
        tag: Formulation,
        dims: (usize, usize, usize, usize),
        factors_out: &[usize],
        rank: usize,
    ) -> Result<Self> {
        let (c, h, w, k) = dims;
        if c == 0 || h == 0 || w == 0 || k == 0 || rank == 0 {
            return Err(KfcError::arg(format!(
                "dimensions and rank must be positive, got ({c},{h},{w},{k}) rank {rank}"
            )));
        }
        if factors_out.contains(&0) {
            return Err(KfcError::arg("output factors must be positive"));
        }
        let rows: Vec<usize> = match tag {
            Formulation::I => vec![c, h, w],
            Formulation::II => vec![c, h * w],
            Formulation::III => vec![c * h, w],
            Formulation::IV => vec![c * w, h],
            Formulation::Kfcm => {
                return Err(KfcError::arg("use KfcSpec::kfcm for matrix input"));
            }
        };
        if factors_out.len() != rows.len() {
            return Err(KfcError::shape(format!(
                "formulation {tag} needs {} output factors, got {}",
                rows.len(),
                factors_out.len()
            )));
        }
        let prod: usize = factors_out.iter().product();
        if prod != k {
            return Err(KfcError::shape(format!(
                "output factors {factors_out:?} multiply to {prod}, layer output is {k}"
            )));
        }
        let shape = FactorShape::new(rows.into_iter().zip(factors_out.iter().copied()).collect())?;
        Self::new(
            InputKind::Tensor { channels: c, height: h, width: w },
            k,
            0,
            vec![KfcGroup { formulation: tag, shape, rank }],
        )
    }

    /// KFCM spec with explicit input/output splits `C = C1*C2`, `K = K1*K2`.
    pub fn kfcm(c: usize, k: usize, c1: usize, k1: usize, rank: usize) -> Result<Self> {
        if c == 0 || k == 0 || c1 == 0 || k1 == 0 || rank == 0 {
            return Err(KfcError::arg("KFCM dimensions and rank must be positive"));
        }
        if !c.is_multiple_of(c1) {
            return Err(KfcError::shape(format!(
                "C1={c1} does not divide input dimension {c}; pad the input to {} with pad_dims",
                pad_dims(c)
            )));
        }
        if !k.is_multiple_of(k1) {
            return Err(KfcError::shape(format!("K1={k1} does not divide output dimension {k}")));
        }
        let shape = FactorShape::two(c1, k1, c / c1, k / k1)?;
        Self::new(
            InputKind::Matrix { features: c },
            k,
            0,
            vec![KfcGroup { formulation: Formulation::Kfcm, shape, rank }],
        )
    }

    /// KFCM spec with `C1`, `K1` chosen next to the square roots (see [`near_sqrt_divisor`]).
    pub fn kfcm_default(c: usize, k: usize, rank: usize) -> Result<Self> {
        if c > 3 && is_prime(c) {
            return Err(KfcError::shape(format!(
                "input dimension {c} is prime; pad it to {} with pad_dims",
                pad_dims(c)
            )));
        }
        Self::kfcm(c, k, near_sqrt_divisor(c), near_sqrt_divisor(k), rank)
    }

    /// KFCM spec on the input padded by [`pad_dims`], with default splits.
    pub fn kfcm_padded(c: usize, k: usize, rank: usize) -> Result<Self> {
        if c == 0 || k == 0 || rank == 0 {
            return Err(KfcError::arg("KFCM dimensions and rank must be positive"));
        }
        let padded = pad_dims(c);
        let (c1, k1) = (near_sqrt_divisor(padded), near_sqrt_divisor(k));
        let shape = FactorShape::two(c1, k1, padded / c1, k / k1)?;
        Self::new(
            InputKind::Matrix { features: c },
            k,
            padded - c,
            vec![KfcGroup { formulation: Formulation::Kfcm, shape, rank }],
        )
    }

    /// Sums the groups of several specs over the same input and output.
    pub fn combine(specs: &[KfcSpec]) -> Result<Self> {
        let first = specs.first().ok_or_else(|| KfcError::arg("nothing to combine"))?;
        let mut groups = Vec::new();
        for s in specs {
            if s.input != first.input || s.output != first.output || s.input_pad != first.input_pad {
                return Err(KfcError::shape("combined specs must share input, output and padding"));
            }
            groups.extend(s.groups.iter().cloned());
        }
        Self::new(first.input, first.output, first.input_pad, groups)
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

/// Smallest divisor `d` of `n` with `d*d >= n`.
///
/// Divisor pairs `(d, n/d)` sit at equal ratio distance from `sqrt(n)`; this
/// picks the larger member of the closest pair (1536 -> 48, 6400 -> 80).
pub fn near_sqrt_divisor(n: usize) -> usize {
    assert!(n > 0);
    (1..=n).find(|&d| n.is_multiple_of(d) && d * d >= n).unwrap_or(n)
}

/// Smallest `m >= n` whose near-square-root split `(d, m/d)` has `d*d <= 2m`,
/// i.e. the two factors differ by at most a factor of two.
pub fn pad_dims(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let d = near_sqrt_divisor(m);
            d * d <= 2 * m
        })
        .expect("balanced dimension exists")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force scan: minimize the ratio distance max(d^2, n) / min(d^2, n),
    /// ties going to the larger divisor. Compared exactly with integer cross products.
    fn divisor_oracle(n: usize) -> usize {
        let mut best = 1usize;
        for d in 1..=n {
            if !n.is_multiple_of(d) {
                continue;
            }
            let (bn, bd) = ratio(best, n);
            let (cn, cd) = ratio(d, n);
            // cn/cd <= bn/bd
            if (cn as u128) * (bd as u128) <= (bn as u128) * (cd as u128) {
                best = d;
            }
        }
        best
    }

    fn ratio(d: usize, n: usize) -> (usize, usize) {
        let sq = d * d;
        (sq.max(n), sq.min(n))
    }

    #[test]
    fn formulation_ii_mnist() {
        let s = KfcSpec::formulation(Formulation::II, (32, 3, 3, 256), &[64, 4], 1).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(32, 64), (9, 4)]);
    }

    #[test]
    fn formulation_iii_svhn() {
        let s = KfcSpec::formulation(Formulation::III, (256, 5, 5, 256), &[128, 2], 1).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(1280, 128), (5, 2)]);
    }

    #[test]
    fn formulation_shapes() {
        let s = KfcSpec::formulation(Formulation::I, (2, 3, 4, 30), &[2, 3, 5], 2).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(2, 2), (3, 3), (4, 5)]);
        let s = KfcSpec::formulation(Formulation::IV, (2, 3, 4, 8), &[4, 2], 1).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(8, 4), (3, 2)]);
    }

    #[test]
    fn formulation_errors() {
        assert!(matches!(KfcSpec::formulation(Formulation::I, (2, 3, 4, 30), &[2, 3, 4], 1), Err(KfcError::Shape(_))));
        assert!(matches!(KfcSpec::formulation(Formulation::II, (0, 3, 4, 30), &[5, 6], 1), Err(KfcError::Argument(_))));
        assert!(KfcSpec::formulation(Formulation::II, (2, 3, 4, 30), &[5, 6], 0).is_err());
    }

    #[test]
    fn kfcm_defaults() {
        assert_eq!(near_sqrt_divisor(1536), 48);
        assert_eq!(near_sqrt_divisor(6400), 80);
        assert_eq!(near_sqrt_divisor(1536), divisor_oracle(1536));
        assert_eq!(near_sqrt_divisor(6400), divisor_oracle(6400));
        for n in 1..2000 {
            assert_eq!(near_sqrt_divisor(n), divisor_oracle(n), "n = {n}");
        }
        let s = KfcSpec::kfcm_default(1536, 6400, 1).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(48, 80), (32, 80)]);
        let s = KfcSpec::kfcm(4, 4, 2, 2, 1).unwrap();
        assert_eq!(s.groups()[0].shape.factors(), &[(2, 2), (2, 2)]);
    }

    #[test]
    fn prime_input_suggests_padding() {
        let err = KfcSpec::kfcm(7, 4, 2, 2, 1).unwrap_err();
        assert!(matches!(err, KfcError::Shape(_)));
        assert!(err.to_string().contains("pad"), "{err}");
        let err = KfcSpec::kfcm_default(7, 4, 1).unwrap_err();
        assert!(err.to_string().contains("pad"), "{err}");
    }

    #[test]
    fn padding() {
        assert_eq!(pad_dims(7), 8);
        assert_eq!(pad_dims(13), 15);
        assert_eq!(pad_dims(288), 288);
        assert_eq!(pad_dims(1536), 1536);
        for n in 1..500 {
            let m = pad_dims(n);
            assert!(m >= n && !(m > 3 && is_prime(m)));
        }
        let s = KfcSpec::kfcm_padded(7, 4, 1).unwrap();
        assert_eq!(s.input_pad(), 1);
        assert_eq!(s.padded_input_dim(), 8);
        assert_eq!(s.input_dim(), 7);
    }

    #[test]
    fn formulation_iv_permutation_is_bijective() {
        let s = KfcSpec::formulation(Formulation::IV, (2, 3, 4, 8), &[4, 2], 1).unwrap();
        let mut seen: Vec<usize> = (0..24).map(|j| s.permuted_index(Formulation::IV, j)).collect();
        // (c=1, h=2, w=3) -> c*12 + w*3 + h
        assert_eq!(seen[12 + 2 * 4 + 3], 12 + 3 * 3 + 2);
        seen.sort();
        assert_eq!(seen, (0..24).collect::<Vec<_>>());
    }

    #[test]
    fn parse_tags() {
        assert_eq!("iii".parse::<Formulation>().unwrap(), Formulation::III);
        assert_eq!("KFCM".parse::<Formulation>().unwrap(), Formulation::Kfcm);
        let err = "V".parse::<Formulation>().unwrap_err().to_string();
        assert!(err.contains("I, II, III, IV, KFCM"));
    }
}
