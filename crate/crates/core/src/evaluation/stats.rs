//! Per-ROI Welch t-tests between adjacent diagnostic groups with a
//! Bonferroni threshold.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos approximation, reflection below 0.5).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const CF_TOL: f64 = 1e-10;
const CF_MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability P(|T| ≥ |t|) of Student's t with `dof`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test, two-sided. When both samples have zero
/// variance the result is t = 0, p = 1 for equal means and t = ±∞, p = 0
/// otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Stats(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let dof = na + nb - 2.0;
        return Ok(if ma == mb {
            TTest {
                t: 0.0,
                dof,
                p: 1.0,
            }
        } else {
            TTest {
                t: if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                dof,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        dof,
        p: student_t_two_sided(t, dof),
    })
}

pub fn bonferroni_threshold(alpha: f64, num_tests: usize) -> f64 {
    alpha / num_tests as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiTest {
    pub roi: usize,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub modality: String,
    pub comparison: (String, String),
    pub threshold: f64,
    pub rois: Vec<RoiTest>,
    pub n_significant: usize,
    pub group_sizes: (usize, usize),
}

impl StatResult {
    pub fn significant_rois(&self) -> Vec<usize> {
        self.rois
            .iter()
            .filter(|r| r.significant)
            .map(|r| r.roi)
            .collect()
    }

    /// Number of ROIs significant in both results.
    pub fn common_with(&self, other: &StatResult) -> usize {
        self.rois
            .iter()
            .zip(&other.rois)
            .filter(|(a, b)| a.significant && b.significant)
            .count()
    }

    pub fn comparison_name(&self) -> String {
        format!("{}-{}", self.comparison.0, self.comparison.1)
    }
}

/// Per-ROI Welch tests of `modality` between labels `pair.0` and `pair.1`
/// over whatever entries are present: the observed cohort gives the
/// before-imputation comparison, an imputed one the after-imputation one.
pub fn group_comparison(
    cohort: &Cohort,
    modality: usize,
    pair: (usize, usize),
    alpha: f64,
) -> Result<StatResult> {
    let manifest = cohort.manifest();
    if modality >= manifest.num_modalities() {
        return Err(Error::Label(format!("modality id {modality} out of range")));
    }
    if pair.0 >= manifest.num_labels() || pair.1 >= manifest.num_labels() {
        return Err(Error::Label(format!("label pair {pair:?} out of range")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let group = |label: usize| -> Vec<&[f64]> {
        cohort
            .subjects()
            .iter()
            .filter(|s| s.label == label)
            .filter_map(|s| s.features[modality].as_deref())
            .collect()
    };
    let (ga, gb) = (group(pair.0), group(pair.1));
    for (g, l) in [(&ga, pair.0), (&gb, pair.1)] {
        if g.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no `{}` vectors for label `{}`",
                manifest.modalities[modality], manifest.labels[l]
            )));
        }
    }
    let q = manifest.num_rois;
    let threshold = bonferroni_threshold(alpha, q);
    let mut rois = Vec::with_capacity(q);
    let (mut col_a, mut col_b) = (Vec::with_capacity(ga.len()), Vec::with_capacity(gb.len()));
    for roi in 0..q {
        col_a.clear();
        col_b.clear();
        col_a.extend(ga.iter().map(|x| x[roi]));
        col_b.extend(gb.iter().map(|x| x[roi]));
        let TTest { t, dof, p } = welch_t_test(&col_a, &col_b)?;
        rois.push(RoiTest {
            roi,
            t,
            dof,
            p,
            significant: p < threshold,
        });
    }
    let n_significant = rois.iter().filter(|r| r.significant).count();
    Ok(StatResult {
        modality: manifest.modalities[modality].clone(),
        comparison: (
            manifest.labels[pair.0].clone(),
            manifest.labels[pair.1].clone(),
        ),
        threshold,
        rois,
        n_significant,
        group_sizes: (ga.len(), gb.len()),
    })
}

/// Every modality against every pair of consecutive labels.
pub fn adjacent_comparisons(cohort: &Cohort, alpha: f64) -> Result<Vec<StatResult>> {
    let manifest = cohort.manifest();
    let mut out = Vec::new();
    for m in 0..manifest.num_modalities() {
        for l in 0..manifest.num_labels() - 1 {
            out.push(group_comparison(cohort, m, (l, l + 1), alpha)?);
        }
    }
    Ok(out)
}

pub fn write_stats_csv<W: Write>(results: &[StatResult], mut w: W) -> Result<()> {
    writeln!(w, "modality,comparison,roi_index,t,dof,p,significant")?;
    for r in results {
        let name = r.comparison_name();
        for roi in &r.rois {
            writeln!(
                w,
                "{},{},{},{:?},{:?},{:?},{}",
                r.modality, name, roi.roi, roi.t, roi.dof, roi.p, roi.significant
            )?;
        }
    }
    Ok(())
}

pub fn save_stats_csv(results: &[StatResult], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stats_csv(results, &mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
        assert!((ln_gamma(100.0) - 359.134_205_369_575_4).abs() < 1e-9);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(a, 1) = x^a and I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            for &a in &[0.5, 1.0, 2.5, 7.0] {
                assert!((regularized_incomplete_beta(a, 1.0, x) - x.powf(a)).abs() < 1e-10);
                let expect = 1.0 - (1.0 - x).powf(a);
                assert!((regularized_incomplete_beta(1.0, a, x) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn t_tail_matches_closed_forms() {
        // dof = 1 is Cauchy: p = 1 - 2 atan(|t|)/pi
        for &t in &[0.1f64, 1.0, 3.0, 40.0] {
            let expect = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
            assert!((student_t_two_sided(t, 1.0) - expect).abs() < 1e-10);
        }
        // dof = 2: p = 1 - |t| / sqrt(2 + t^2)
        for &t in &[0.2f64, 1.5, 9.0] {
            let expect = 1.0 - t / (2.0 + t * t).sqrt();
            assert!((student_t_two_sided(t, 2.0) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_samples_have_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_flips_t_only() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [3.0, 4.0, 5.0, 6.0, 7.5];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
        assert_eq!(ab.dof, ba.dof);
    }

    #[test]
    fn reference_pair() {
        // equal variances 2.5, n = 5: t = -2 / sqrt(1) = -2, dof = 8
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        assert!(r.p > 0.05 && r.p < 0.1);
    }

    #[test]
    fn zero_variance_conventions() {
        assert_eq!(welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap().p, 1.0);
        let r = welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r.p, 0.0);
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni_threshold(0.01, 160) - 6.25e-5).abs() < 1e-18);
        assert_eq!(bonferroni_threshold(0.05, 1), 0.05);
        assert!(bonferroni_threshold(0.01, 21) < bonferroni_threshold(0.01, 20));
    }
}
