//! Exact two-sided binomial test.
//!
//! Log-probabilities use Loader's saddle-point expansion (Stirling remainder
//! plus deviance term), which stays accurate to ~1e-14 relative at n in the
//! hundreds of thousands where naive log-gamma differences lose digits.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;
/// Relative tolerance on log-probabilities when deciding Pr[K=i] <= Pr[K=k].
pub const TIE_TOLERANCE: f64 = 1e-12;
/// p-values below this are rendered as powers of two.
pub const LOG2_DISPLAY_THRESHOLD: f64 = 1e-6;

/// ln(n!) - ((n + 1/2) ln n - n + ln sqrt(2 pi)) for integer n <= 15.
const STIRLERR_TABLE: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_22,
    0.041_340_695_955_409_294_094,
    0.027_677_925_684_998_339_149,
    0.020_790_672_103_765_093_112,
    0.016_644_691_189_821_192_163,
    0.013_876_128_823_070_747_999,
    0.011_896_709_945_891_770_095,
    0.010_411_265_261_972_096_497,
    0.009_255_462_182_712_732_917_7,
    0.008_330_563_433_362_871_256_5,
    0.007_573_675_487_951_840_795,
    0.006_942_840_107_209_529_865_7,
    0.006_408_994_188_004_207_068_4,
    0.005_951_370_112_758_847_735_6,
    0.005_554_733_551_962_801_371,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLERR_TABLE[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term x ln(x / np) + np - x, computed without cancellation near x = np.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1.. {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        unreachable!()
    } else {
        x * (x / np).ln() + np - x
    }
}

/// ln Pr[K = k] for K ~ Binomial(n, p), 0 < p < 1.
pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
    }
    if k == n {
        return if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialTestResult {
    pub n: u64,
    pub k: u64,
    pub pi0: f64,
    pub accuracy: f64,
    /// 0 when the value underflows f64; see `log2_p_value`.
    pub p_value: f64,
    pub log2_p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

impl BinomialTestResult {
    pub fn p_value_display(&self) -> String {
        format_p_value(self.p_value, self.log2_p_value)
    }
}

/// Two-sided exact test: p = sum of Pr[K = i] over all i with Pr[K = i] <= Pr[K = k].
pub fn binomial_two_sided(k: u64, n: u64, pi0: f64) -> Result<BinomialTestResult> {
    binomial_test(k, n, pi0, DEFAULT_ALPHA)
}

pub fn binomial_test(k: u64, n: u64, pi0: f64, alpha: f64) -> Result<BinomialTestResult> {
    if k > n {
        return Err(Error::param(format!("k = {k} exceeds n = {n}")));
    }
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::param(format!("pi0 = {pi0} outside (0, 1)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha = {alpha} outside (0, 1)")));
    }
    let lp_k = binomial_ln_pmf(k, n, pi0);
    let threshold = lp_k + TIE_TOLERANCE * lp_k.abs().max(1.0);
    let terms: Vec<f64> = (0..=n)
        .map(|i| binomial_ln_pmf(i, n, pi0))
        .filter(|&lp| lp <= threshold)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&lp| (lp - max).exp()).sum();
    let ln_p = (max + sum.ln()).min(0.0);
    let p_value = ln_p.exp();
    let log2_p_value = ln_p / LN_2;
    Ok(BinomialTestResult {
        n,
        k,
        pi0,
        accuracy: if n == 0 { 0.0 } else { k as f64 / n as f64 },
        p_value,
        log2_p_value,
        alpha,
        reject: p_value < alpha,
    })
}

/// Two decimals, or `2^e` below [`LOG2_DISPLAY_THRESHOLD`].
pub fn format_p_value(p_value: f64, log2_p_value: f64) -> String {
    if p_value < LOG2_DISPLAY_THRESHOLD {
        let r = log2_p_value.round();
        if (log2_p_value - r).abs() < 1e-6 {
            format!("2^{}", r as i64)
        } else {
            format!("2^{log2_p_value:.2}")
        }
    } else {
        format!("{p_value:.2}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub accuracy_pct: String,
    pub p_value: String,
    pub reject: bool,
}

pub fn summarize<'a, I>(results: I) -> Vec<ReportRow>
where
    I: IntoIterator<Item = (&'a str, &'a BinomialTestResult)>,
{
    results
        .into_iter()
        .map(|(id, r)| ReportRow {
            experiment_id: id.to_string(),
            accuracy_pct: format!("{:.2}", 100.0 * r.accuracy),
            p_value: r.p_value_display(),
            reject: r.reject,
        })
        .collect()
}

/// Plain-text table of report rows.
pub fn render_rows(rows: &[ReportRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.experiment_id.len())
        .chain([10])
        .max()
        .unwrap();
    let mut out = format!("{:<w$}  {:>8}  {:>12}  reject\n", "experiment", "acc %", "p-value");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$}  {:>8}  {:>12}  {}",
            r.experiment_id,
            r.accuracy_pct,
            r.p_value,
            if r.reject { "yes" } else { "no" }
        );
    }
    out
}
