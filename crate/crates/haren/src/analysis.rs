//! Centroid-usage statistics and per-centroid chi-square significance
//! testing between the depressed and non-depressed groups.

use std::io::Write;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Per-centroid usage comparison between the two groups.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CentroidUsage {
    pub k: usize,
    /// Frame counts per centroid, non-depressed group.
    pub counts_control: Vec<u64>,
    /// Frame counts per centroid, depressed group.
    pub counts_depressed: Vec<u64>,
    /// Normalized frequencies (each group sums to one).
    pub freq_control: Vec<f64>,
    pub freq_depressed: Vec<f64>,
    /// freq_depressed - freq_control; positive values mark patterns more
    /// frequent in the depressed group.
    pub difference: Vec<f64>,
    pub chi_square: Vec<f64>,
    pub p_value: Vec<f64>,
    /// Whether every expected cell count reached 5 for this centroid.
    pub expected_ok: Vec<bool>,
}

/// Frequencies and differences from raw token frames, pooled per group.
pub fn usage_stats(control_tokens: &[usize], depressed_tokens: &[usize], k: usize) -> Result<CentroidUsage> {
    if control_tokens.is_empty() || depressed_tokens.is_empty() {
        return Err(Error::contract("usage_stats requires both groups nonempty"));
    }
    let tally = |tokens: &[usize]| -> Result<Vec<u64>> {
        let mut counts = vec![0u64; k];
        for &t in tokens {
            if t >= k {
                return Err(Error::data(format!("token {t} out of range for k={k}")));
            }
            counts[t] += 1;
        }
        Ok(counts)
    };
    let counts_control = tally(control_tokens)?;
    let counts_depressed = tally(depressed_tokens)?;
    let n_c = control_tokens.len() as f64;
    let n_d = depressed_tokens.len() as f64;
    let freq_control: Vec<f64> = counts_control.iter().map(|&c| c as f64 / n_c).collect();
    let freq_depressed: Vec<f64> = counts_depressed.iter().map(|&c| c as f64 / n_d).collect();
    let difference: Vec<f64> = freq_depressed
        .iter()
        .zip(&freq_control)
        .map(|(d, c)| d - c)
        .collect();

    let mut chi_square = Vec::with_capacity(k);
    let mut p_value = Vec::with_capacity(k);
    let mut expected_ok = Vec::with_capacity(k);
    for c in 0..k {
        // 2x2 table: frames on this centroid vs all other centroids,
        // depressed vs control.
        let a = counts_depressed[c];
        let b = counts_depressed.iter().sum::<u64>() - a;
        let cc = counts_control[c];
        let d = counts_control.iter().sum::<u64>() - cc;
        match chi_square_2x2(a, b, cc, d) {
            Ok((stat, p)) => {
                chi_square.push(stat);
                p_value.push(p);
                expected_ok.push(expected_counts_ok(a, b, cc, d));
            }
            Err(_) => {
                // A zero marginal (centroid never used anywhere) carries no
                // evidence either way.
                chi_square.push(0.0);
                p_value.push(1.0);
                expected_ok.push(false);
            }
        }
    }

    Ok(CentroidUsage {
        k,
        counts_control,
        counts_depressed,
        freq_control,
        freq_depressed,
        difference,
        chi_square,
        p_value,
        expected_ok,
    })
}

fn expected_counts_ok(a: u64, b: u64, c: u64, d: u64) -> bool {
    let n = (a + b + c + d) as f64;
    let rows = [(a + b) as f64, (c + d) as f64];
    let cols = [(a + c) as f64, (b + d) as f64];
    rows.iter()
        .all(|r| cols.iter().all(|col| r * col / n >= 5.0))
}

/// Chi-square test of independence on a 2x2 contingency table
/// `[[a, b], [c, d]]` (df = 1, no continuity correction):
/// `chi2 = N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))`, with the p-value from
/// the df-1 survival function `erfc(sqrt(chi2 / 2))`.
pub fn chi_square_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<(f64, f64)> {
    let (af, bf, cf, df) = (a as f64, b as f64, c as f64, d as f64);
    let n = af + bf + cf + df;
    let margins = [af + bf, cf + df, af + cf, bf + df];
    if margins.contains(&0.0) {
        return Err(Error::contract(
            "chi-square test undefined: a row or column sum is zero",
        ));
    }
    let det = af * df - bf * cf;
    let chi2 = n * det * det / margins.iter().product::<f64>();
    let p = erfc((chi2 / 2.0).sqrt());
    Ok((chi2, p))
}

/// One row of the significance report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SignificanceRow {
    pub centroid: usize,
    pub difference: f64,
    pub chi_square: f64,
    pub p_value: f64,
    pub significant: bool,
    pub expected_ok: bool,
}

/// Flag centroids with `p < alpha` (strict). With `bonferroni`, the level
/// is divided by the number of centroids.
pub fn significance_report(
    usage: &CentroidUsage,
    alpha: f64,
    bonferroni: bool,
) -> Vec<SignificanceRow> {
    let level = if bonferroni {
        alpha / usage.k as f64
    } else {
        alpha
    };
    (0..usage.k)
        .map(|c| SignificanceRow {
            centroid: c,
            difference: usage.difference[c],
            chi_square: usage.chi_square[c],
            p_value: usage.p_value[c],
            significant: usage.p_value[c] < level,
            expected_ok: usage.expected_ok[c],
        })
        .collect()
}

/// Plot-ready delimited output: one row per centroid with the frequency
/// difference bars and significance flags.
pub fn write_report_csv<W: Write>(rows: &[SignificanceRow], mut w: W) -> Result<()> {
    writeln!(w, "centroid,difference,chi_square,p_value,significant,expected_ok")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.centroid,
            r.difference,
            r.chi_square,
            r.p_value,
            if r.significant { 1 } else { 0 },
            if r.expected_ok { 1 } else { 0 },
        )?;
    }
    Ok(())
}
