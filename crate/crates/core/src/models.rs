//! Probability kernels for IRT, MIRT, M2IRT and M3IRT.
//!
//! The four-component parameter layout is `(base, image, text, cross)`.
//! A format `s` activates components through `[1, s_image, s_text,
//! s_image * s_text]`; difficulty components enter with a negative sign
//! because modality stimuli act as hints that lower difficulty.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Format;

/// Pre-activations are clamped to `[-Z_CLAMP, Z_CLAMP]`.
pub const Z_CLAMP: f64 = 30.0;

/// Lower bound applied to IRT/MIRT discriminations during fitting.
pub const MIN_CLASSIC_DISCRIMINATION: f64 = 1e-4;

#[inline]
pub fn clamp_logit<F: Scalar>(z: F) -> F {
    let c = F::lit(Z_CLAMP);
    z.max(-c).min(c)
}

/// Logistic function on a clamped pre-activation.
#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    let z = clamp_logit(z);
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// How the signed format vector enters the M3IRT ability term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `a^T diag(s) theta - s^T b` with the signed `s`, literally.
    AsWritten,
    /// Ability term uses `|s|` so modality abilities add to the logit.
    #[default]
    Corrected,
}

impl fmt::Display for SignConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignConvention::AsWritten => "as_written",
            SignConvention::Corrected => "corrected",
        })
    }
}

impl FromStr for SignConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "as_written" | "aswritten" => Ok(SignConvention::AsWritten),
            "corrected" => Ok(SignConvention::Corrected),
            _ => Err(Error::invalid(format!("unknown sign convention `{s}`"))),
        }
    }
}

impl SignConvention {
    /// Per-component weights of the M3IRT ability/discrimination product.
    pub fn ability_weights<F: Scalar>(self, s: Format) -> [F; 4] {
        match self {
            SignConvention::AsWritten => s.signed(),
            SignConvention::Corrected => s.active(),
        }
    }
}

/// Model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Irt,
    Mirt { dim: usize },
    M2irt,
    M3irt,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Irt => "irt",
            Family::Mirt { .. } => "mirt",
            Family::M2irt => "m2irt",
            Family::M3irt => "m3irt",
        }
    }

    pub fn subject_dim(self) -> usize {
        match self {
            Family::Irt => 1,
            Family::Mirt { dim } => dim,
            Family::M2irt | Family::M3irt => 4,
        }
    }

    pub fn item_a_dim(self) -> usize {
        self.subject_dim()
    }

    pub fn item_b_dim(self) -> usize {
        match self {
            Family::Irt | Family::Mirt { .. } => 1,
            Family::M2irt | Family::M3irt => 4,
        }
    }

    /// Dimension of the Fisher information for this family.
    pub fn info_dim(self) -> usize {
        match self {
            Family::Irt | Family::M2irt => 1,
            Family::Mirt { dim } => dim,
            Family::M3irt => 4,
        }
    }

    pub fn is_classic(self) -> bool {
        matches!(self, Family::Irt | Family::Mirt { .. })
    }

    /// Lower bound for discrimination components.
    pub fn a_lower<F: Scalar>(self) -> F {
        if self.is_classic() {
            F::lit(MIN_CLASSIC_DISCRIMINATION)
        } else {
            F::zero()
        }
    }

    /// Unclamped pre-activation. Classic families ignore `s`.
    #[inline]
    pub fn logit<F: Scalar>(self, conv: SignConvention, theta: &[F], a: &[F], b: &[F], s: Format) -> F {
        match self {
            Family::Irt => a[0] * (theta[0] - b[0]),
            Family::Mirt { .. } => dot(a, theta) - b[0],
            Family::M2irt => {
                let u = s.active::<F>();
                let v = s.signed::<F>();
                dot(&u, a) * (dot(&u, theta) - dot(&v, b))
            }
            Family::M3irt => {
                let w = conv.ability_weights::<F>(s);
                let v = s.signed::<F>();
                let mut z = F::zero();
                for k in 0..4 {
                    z = z + a[k] * w[k] * theta[k] - v[k] * b[k];
                }
                z
            }
        }
    }

    /// Partial derivatives of the unclamped logit with respect to every
    /// parameter component. Outputs are overwritten.
    #[inline]
    pub fn logit_grad<F: Scalar>(
        self,
        conv: SignConvention,
        theta: &[F],
        a: &[F],
        b: &[F],
        s: Format,
        d_theta: &mut [F],
        d_a: &mut [F],
        d_b: &mut [F],
    ) {
        match self {
            Family::Irt => {
                d_theta[0] = a[0];
                d_a[0] = theta[0] - b[0];
                d_b[0] = -a[0];
            }
            Family::Mirt { dim } => {
                for k in 0..dim {
                    d_theta[k] = a[k];
                    d_a[k] = theta[k];
                }
                d_b[0] = -F::one();
            }
            Family::M2irt => {
                let u = s.active::<F>();
                let v = s.signed::<F>();
                let disc = dot(&u, a);
                let gap = dot(&u, theta) - dot(&v, b);
                for k in 0..4 {
                    d_theta[k] = disc * u[k];
                    d_a[k] = gap * u[k];
                    d_b[k] = -disc * v[k];
                }
            }
            Family::M3irt => {
                let w = conv.ability_weights::<F>(s);
                let v = s.signed::<F>();
                for k in 0..4 {
                    d_theta[k] = a[k] * w[k];
                    d_a[k] = w[k] * theta[k];
                    d_b[k] = -v[k];
                }
            }
        }
    }

    /// Probability of a correct response.
    #[inline]
    pub fn prob<F: Scalar>(self, conv: SignConvention, theta: &[F], a: &[F], b: &[F], s: Format) -> F {
        sigmoid(self.logit(conv, theta, a, b, s))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Mirt { dim } => write!(f, "mirt:{dim}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// `irt`, `m2irt`, `m3irt`, `mirt` (d = 4) or `mirt:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "irt" => Ok(Family::Irt),
            "m2irt" => Ok(Family::M2irt),
            "m3irt" => Ok(Family::M3irt),
            "mirt" => Ok(Family::Mirt { dim: 4 }),
            _ => match lower.strip_prefix("mirt:") {
                Some(d) => match d.parse::<usize>() {
                    Ok(dim) if dim >= 1 => Ok(Family::Mirt { dim }),
                    _ => Err(Error::invalid(format!("bad MIRT dimension in `{s}`"))),
                },
                None => Err(Error::invalid(format!("unknown model family `{s}`"))),
            },
        }
    }
}

#[inline]
pub(crate) fn dot<F: Scalar>(x: &[F], y: &[F]) -> F {
    x.iter().zip(y).fold(F::zero(), |acc, (&p, &q)| acc + p * q)
}

/// Decomposed subject abilities `(base, image, text, cross)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectParams<F> {
    pub theta: [F; 4],
}

/// Decomposed item discrimination `a` and difficulty `b`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemParams<F> {
    pub a: [F; 4],
    pub b: [F; 4],
}

fn check_box<F: Scalar>(what: &str, v: &[F], q: F) -> Result<()> {
    match v.iter().position(|&x| !(x >= F::zero() && x <= q)) {
        None => Ok(()),
        Some(k) => Err(Error::invalid(format!(
            "{what}[{k}] = {} outside [0, {q}]",
            v[k]
        ))),
    }
}

impl<F: Scalar> SubjectParams<F> {
    pub fn new(theta: [F; 4]) -> Self {
        SubjectParams { theta }
    }

    /// Midpoint of the box, `(q/2, q/2, q/2, q/2)`.
    pub fn midpoint(q: F) -> Self {
        SubjectParams { theta: [q * F::half(); 4] }
    }

    pub fn validate(&self, q: F) -> Result<()> {
        check_box("theta", &self.theta, q)
    }

    /// Effective ability under format `s`.
    pub fn ability_at(&self, s: Format) -> F {
        dot(&s.active::<F>(), &self.theta)
    }

    /// Component sum, i.e. the ability under the full format.
    pub fn total(&self) -> F {
        self.ability_at(Format::FULL)
    }
}

impl<F: Scalar> ItemParams<F> {
    pub fn new(a: [F; 4], b: [F; 4]) -> Self {
        ItemParams { a, b }
    }

    pub fn validate(&self, q: F) -> Result<()> {
        check_box("a", &self.a, q)?;
        check_box("b", &self.b, q)
    }

    /// Effective difficulty under `s`: base minus the active hints.
    pub fn difficulty_at(&self, s: Format) -> F {
        dot(&s.signed::<F>(), &self.b)
    }

    /// Effective discrimination under `s`, in `[0, 4q]`.
    pub fn discrimination_at(&self, s: Format) -> F {
        dot(&s.active::<F>(), &self.a)
    }
}

pub fn ability_at<F: Scalar>(sp: &SubjectParams<F>, s: Format) -> F {
    sp.ability_at(s)
}

pub fn difficulty_at<F: Scalar>(ip: &ItemParams<F>, s: Format) -> F {
    ip.difficulty_at(s)
}

pub fn discrimination_at<F: Scalar>(ip: &ItemParams<F>, s: Format) -> F {
    ip.discrimination_at(s)
}

/// 2PL: `sigma(a (theta - b))`.
pub fn prob_irt<F: Scalar>(theta: F, a: F, b: F) -> Result<F> {
    if !(a > F::zero()) {
        return Err(Error::invalid(format!("IRT discrimination must be positive, got {a}")));
    }
    Ok(sigmoid(a * (theta - b)))
}

/// Compensatory MIRT: `sigma(a^T theta - b)`.
pub fn prob_mirt<F: Scalar>(theta: &[F], a: &[F], b: F) -> Result<F> {
    if theta.len() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: a.len(),
        });
    }
    Ok(sigmoid(dot(a, theta) - b))
}

/// M2IRT: `sigma(a(s) (theta(s) - b(s)))`.
pub fn prob_m2<F: Scalar>(sp: &SubjectParams<F>, ip: &ItemParams<F>, s: Format) -> F {
    sigmoid(ip.discrimination_at(s) * (sp.ability_at(s) - ip.difficulty_at(s)))
}

/// M3IRT: `sigma(a^T diag(w) theta - s^T b)` where `w` depends on `conv`.
pub fn prob_m3<F: Scalar>(sp: &SubjectParams<F>, ip: &ItemParams<F>, s: Format, conv: SignConvention) -> F {
    Family::M3irt.prob(conv, &sp.theta, &ip.a, &ip.b, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    // independent reference: tanh form of the logistic function
    fn oracle_sigmoid(z: f64) -> f64 {
        0.5 * (1.0 + (0.5 * z).tanh())
    }

    const S2: f64 = 0.880_797_077_977_882_3;

    #[test]
    fn ability_examples() {
        let flash: SubjectParams<f64> = SubjectParams::new([0.03, 0.78, 4.0, 0.0]);
        assert!((flash.ability_at(Format::FULL) - 4.81).abs() < 1e-12);
        let gemini = SubjectParams::new([0.0, 1.2, 0.0, 4.0]);
        assert_eq!(gemini.ability_at(Format::IMAGE), 1.2);
        let any = SubjectParams::new([0.7, 1.0, 2.0, 3.0]);
        assert_eq!(any.ability_at(Format::NONE), 0.7);
    }

    #[test]
    fn difficulty_examples() {
        let q = 4.0;
        let ip = ItemParams::new([0.0; 4], [q, 0.0, 0.0, 0.0]);
        for s in Format::ALL {
            assert_eq!(ip.difficulty_at(s), q);
        }
        assert_eq!(ItemParams::new([0.0; 4], [2.0, 1.0, 1.0, 0.0]).difficulty_at(Format::FULL), 0.0);
        let b = [3.0, 1.0, 0.5, 0.5];
        let oracle = b[0] - 0.0 * b[1] - 1.0 * b[2] - 0.0 * b[3];
        let got = ItemParams::new([0.0; 4], b).difficulty_at(Format::TEXT);
        assert_eq!(got, oracle);
        assert_eq!(got, 2.5);
    }

    #[test]
    fn discrimination_examples() {
        let ip = ItemParams::new([1.0, 0.0, 0.0, 0.0], [0.0; 4]);
        for s in Format::ALL {
            assert_eq!(ip.discrimination_at(s), 1.0);
        }
        let ip = ItemParams::new([0.5; 4], [0.0; 4]);
        assert_eq!(ip.discrimination_at(Format::FULL), 2.0);
        assert_eq!(ip.discrimination_at(Format::IMAGE), 0.5 + 1.0 * 0.5);
    }

    #[test]
    fn irt_examples() {
        assert_eq!(prob_irt(1.3, 2.7, 1.3).unwrap(), 0.5);
        assert!(prob_irt(31.0, 1.0, 0.0).unwrap() > 1.0 - 1e-9);
        assert!(prob_irt(30.0, 1.0, 0.0).unwrap() > 1.0 - 1e-9);
        assert!((prob_irt(1.0, 2.0, 0.0).unwrap() - S2).abs() < 1e-15);
        assert!((prob_irt(1.0, 2.0, 0.0).unwrap() - oracle_sigmoid(2.0)).abs() < 1e-15);
        assert!(prob_irt(1.0, 0.0, 0.0).is_err());
        assert!(prob_irt(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn mirt_examples() {
        assert_eq!(prob_mirt(&[1.0, 2.0], &[0.5, 0.25], 1.0).unwrap(), 0.5);
        assert!((prob_mirt(&[1.0, 1.0], &[1.0, 1.0], 0.0).unwrap() - S2).abs() < 1e-15);
        assert!(prob_mirt(&[1.0, 1.0], &[1.0], 0.0).is_err());
        // d = 1 with b' = a b reproduces the 2PL
        let (t, a, b) = (0.7_f64, 1.9, 0.2);
        assert!((prob_mirt(&[t], &[a], a * b).unwrap() - prob_irt(t, a, b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn m2_examples() {
        let sp: SubjectParams<f64> = SubjectParams::new([2.0, 0.0, 0.0, 0.0]);
        let ip = ItemParams::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        assert!((prob_m2(&sp, &ip, Format::NONE) - 0.731_058_578_630_004_9).abs() < 1e-15);
        let sp = SubjectParams::new([1.0, 1.0, 0.5, 0.0]);
        let ip = ItemParams::new([3.0, 2.0, 1.0, 1.0], [3.0, 0.5, 0.0, 0.0]);
        assert_eq!(prob_m2(&sp, &ip, Format::FULL), 0.5);
        // only base components matter at s = (0,0)
        let sp2 = SubjectParams::new([2.0, 3.0, 1.0, 0.3]);
        let ip2 = ItemParams::new([1.0, 0.4, 0.2, 2.0], [1.0, 1.0, 3.0, 0.1]);
        let base_sp = SubjectParams::new([2.0, 0.0, 0.0, 0.0]);
        let base_ip = ItemParams::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(prob_m2(&sp2, &ip2, Format::NONE), prob_m2(&base_sp, &base_ip, Format::NONE));
    }

    #[test]
    fn m3_examples() {
        let sp: SubjectParams<f64> = SubjectParams::new([1.0; 4]);
        let ip = ItemParams::new([1.0; 4], [4.0, 1.0, 1.0, 1.0]);
        let c = prob_m3(&sp, &ip, Format::FULL, SignConvention::Corrected);
        assert!((c - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert!((c - oracle_sigmoid(3.0)).abs() < 1e-15);
        let w = prob_m3(&sp, &ip, Format::FULL, SignConvention::AsWritten);
        assert!((w - 0.047_425_873_177_566_78).abs() < 1e-15);
        let sp = SubjectParams::new([1.5, 2.0, 0.1, 3.0]);
        let ip = ItemParams::new([0.7, 1.0, 2.0, 0.2], [2.0, 1.0, 0.3, 0.4]);
        let expect = oracle_sigmoid(0.7 * 1.5 - 2.0);
        for conv in [SignConvention::AsWritten, SignConvention::Corrected] {
            assert!((prob_m3(&sp, &ip, Format::NONE, conv) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_stays_open() {
        for z in [-1e6, -31.0, -30.0, 0.0, 30.0, 1e6] {
            let p: f64 = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
    }

    #[test]
    fn family_parse_round_trip() {
        for f in [Family::Irt, Family::Mirt { dim: 3 }, Family::M2irt, Family::M3irt] {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert!("mirt:0".parse::<Family>().is_err());
        assert!("nope".parse::<Family>().is_err());
    }
}
