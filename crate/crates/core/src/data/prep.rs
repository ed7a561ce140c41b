//! Wrangling: rebasing, city-cost normalization, service-row exclusion,
//! monthly-to-quarterly alignment, gap imputation and the chronological split.

use serde::{Deserialize, Serialize};

use super::{DataError, Panel, Quarter, Result, Series, SeriesKey};

/// Longest run of consecutive missing quarters filled by carry-forward.
pub const MAX_IMPUTED_RUN: usize = 2;

/// Scales `s` so that its value at `base` equals `base_value`.
pub fn rebase(s: &Series, base: Quarter, base_value: f64) -> Result<Series> {
    let i = s
        .index_of(base)
        .filter(|&i| s.observed[i])
        .ok_or_else(|| DataError::MissingBase {
            key: s.key.clone(),
            base,
        })?;
    let at_base = s.values[i];
    if at_base <= 0.0 {
        return Err(DataError::NonPositiveBase {
            key: s.key.clone(),
            base,
            value: at_base,
        });
    }
    let mut out = s.clone();
    if at_base == base_value {
        return Ok(out);
    }
    for v in out.values.iter_mut() {
        if *v == at_base {
            *v = base_value;
        } else {
            *v = base_value * (*v / at_base);
        }
    }
    Ok(out)
}

/// Divides `s` by `cci / 100`, restoring national-level comparability.
pub fn cci_adjust(s: &Series, cci: &Series) -> Result<Series> {
    if s.start != cci.start || s.len() != cci.len() {
        return Err(DataError::MisalignedAxis(format!(
            "{} spans {}..{}, {} spans {}..{}",
            s.key,
            s.start,
            s.end(),
            cci.key,
            cci.start,
            cci.end()
        )));
    }
    let mut out = s.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let c = cci.values[i];
        if !(c.is_finite() && c > 0.0) {
            return Err(DataError::NonPositiveCci(s.quarter_at(i)));
        }
        *v /= c / 100.0;
    }
    Ok(out)
}

/// One item of the cost catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogRow {
    pub division: String,
    pub section: String,
    pub title: String,
    pub description: String,
    #[serde(default = "default_true")]
    pub is_material: bool,
}

fn default_true() -> bool {
    true
}

const SERVICE_DIVISIONS: [&str; 2] = ["01", "02"];

fn is_service(row: &CatalogRow, taxonomy_lower: &[String]) -> bool {
    if SERVICE_DIVISIONS.contains(&row.division.trim()) {
        return true;
    }
    let text = format!("{} {}", row.title, row.description).to_lowercase();
    taxonomy_lower
        .iter()
        .any(|kw| !kw.is_empty() && text.contains(kw.as_str()))
}

/// Splits catalog rows into (materials, services), preserving input order in
/// both. Survivors get `is_material = true`, excluded rows `false`.
pub fn partition_services(
    rows: &[CatalogRow],
    taxonomy: &[String],
) -> (Vec<CatalogRow>, Vec<CatalogRow>) {
    let lowered: Vec<String> = taxonomy.iter().map(|k| k.trim().to_lowercase()).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for row in rows {
        let mut row = row.clone();
        if is_service(&row, &lowered) {
            row.is_material = false;
            dropped.push(row);
        } else {
            row.is_material = true;
            kept.push(row);
        }
    }
    (kept, dropped)
}

/// Material-bearing rows: drops divisions 01/02 and any row whose title or
/// description contains a taxonomy keyword (case-insensitive substring).
pub fn exclude_services(rows: &[CatalogRow], taxonomy: &[String]) -> Vec<CatalogRow> {
    partition_services(rows, taxonomy).0
}

/// Averages monthly observations into quarters. `start_month` is 1-based.
/// Quarters without any observed month are left missing.
pub fn align_monthly_to_quarterly(
    key: SeriesKey,
    start_year: i32,
    start_month: u32,
    values: &[Option<f64>],
) -> Result<Series> {
    if !(1..=12).contains(&start_month) {
        return Err(DataError::InvalidArgument(format!(
            "month {start_month} out of range"
        )));
    }
    if values.is_empty() {
        return Err(DataError::EmptyInput(format!("{key}: no monthly values")));
    }
    let month0 = start_year as i64 * 12 + (start_month as i64 - 1);
    let month_n = month0 + values.len() as i64;
    let first_q = Quarter::from_ordinal(month0.div_euclid(3));
    let last_q = Quarter::from_ordinal((month_n - 1).div_euclid(3));
    let has_complete = (first_q.ordinal()..=last_q.ordinal())
        .any(|q| q * 3 >= month0 && q * 3 + 3 <= month_n);
    if !has_complete {
        return Err(DataError::EmptyInput(format!(
            "{key}: no complete quarter of months"
        )));
    }
    let n_q = (last_q.ordinal() - first_q.ordinal() + 1) as usize;
    let mut sums = vec![0.0; n_q];
    let mut counts = vec![0usize; n_q];
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            let q = ((month0 + i as i64).div_euclid(3) - first_q.ordinal()) as usize;
            sums[q] += v;
            counts[q] += 1;
        }
    }
    let vals: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    Ok(Series::new(key, first_q, vals))
}

/// Counts from [`impute_locf`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub imputed: usize,
    pub longest_run: usize,
}

/// Fills interior and trailing gaps by carrying the last value forward, at
/// most `cap` consecutive quarters. Imputed points stay unobserved.
pub fn impute_locf(s: &Series, cap: usize) -> Result<(Series, ImputationReport)> {
    let first = s
        .values
        .iter()
        .position(|v| v.is_finite())
        .ok_or_else(|| DataError::EmptyInput(format!("{} has no observations", s.key)))?;
    if first > 0 {
        return Err(DataError::LeadingGap {
            key: s.key.clone(),
            first: s.quarter_at(first),
        });
    }
    let mut out = s.clone();
    let mut report = ImputationReport::default();
    let mut run = 0usize;
    let mut last = out.values[0];
    for i in 1..out.values.len() {
        if out.values[i].is_finite() {
            run = 0;
            last = out.values[i];
            continue;
        }
        run += 1;
        if run > cap {
            return Err(DataError::GapTooLong {
                key: s.key.clone(),
                run,
                end: s.quarter_at(i),
                cap,
            });
        }
        out.values[i] = last;
        out.observed[i] = false;
        report.imputed += 1;
        report.longest_run = report.longest_run.max(run);
    }
    Ok((out, report))
}

/// Chronological split; the training block holds `floor(T * train_fraction)`
/// quarters and the test block the remainder.
pub fn train_test_split(p: &Panel, train_fraction: f64) -> Result<(Panel, Panel)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if p.len() < 4 {
        return Err(DataError::TooShort(format!(
            "axis of {} quarters, need at least 4",
            p.len()
        )));
    }
    let cut = split_index(p.len(), train_fraction);
    if cut == 0 || cut >= p.len() {
        return Err(DataError::TooShort(format!(
            "split at {cut} of {} leaves an empty block",
            p.len()
        )));
    }
    Ok((p.slice(0..cut), p.slice(cut..p.len())))
}

/// `floor(len * fraction)` with a guard against representation error
/// (78 * 0.85 evaluates to 66.3, while 20 * 0.85 must stay 17).
pub(crate) fn split_index(len: usize, fraction: f64) -> usize {
    let raw = len as f64 * fraction;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SeriesKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn q(y: i32, qq: u8) -> Quarter {
        Quarter::new(y, qq).unwrap()
    }

    fn series(values: Vec<f64>) -> Series {
        Series::new(SeriesKey::csi("061623").unwrap(), q(2007, 1), values)
    }

    #[test]
    fn rebase_sets_base_to_100() {
        let s = series(vec![250.0, 300.0, 125.0]);
        let r = rebase(&s, q(2007, 1), 100.0).unwrap();
        assert_eq!(r.values[0], 100.0);
        assert_eq!(r.values, vec![100.0, 120.0, 50.0]);
    }

    #[test]
    fn rebase_is_proportional() {
        let s = series(vec![50.0, 100.0, 150.0]);
        let r = rebase(&s, q(2007, 1), 100.0).unwrap();
        assert_eq!(r.values, vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn rebase_errors() {
        let mut s = series(vec![f64::NAN, 1.0]);
        s.observed[0] = false;
        assert!(matches!(
            rebase(&s, q(2007, 1), 100.0),
            Err(DataError::MissingBase { .. })
        ));
        let s = series(vec![0.0, 1.0]);
        assert!(matches!(
            rebase(&s, q(2007, 1), 100.0),
            Err(DataError::NonPositiveBase { .. })
        ));
        assert!(rebase(&series(vec![1.0]), q(2001, 1), 100.0).is_err());
    }

    #[test]
    fn monthly_ppi_rebased_matches_hand_computation() {
        // 24 months of a synthetic PPI, aggregated to 8 quarters and rebased
        // at the first quarter. Expected values recomputed by hand:
        // quarter means then 100 * mean / mean_Q1.
        let months: Vec<f64> = vec![
            200.0, 202.0, 204.0, 206.0, 210.0, 214.0, 216.0, 215.0, 214.0, 220.0, 226.0, 232.0,
            240.0, 236.0, 232.0, 230.0, 231.0, 232.0, 233.0, 236.0, 239.0, 241.0, 243.0, 245.0,
        ];
        let key = SeriesKey::ppi("WPU081").unwrap();
        let monthly: Vec<Option<f64>> = months.iter().copied().map(Some).collect();
        let qs = align_monthly_to_quarterly(key, 2007, 1, &monthly).unwrap();
        let rebased = rebase(&qs, q(2007, 1), 100.0).unwrap();
        let means = [
            606.0 / 3.0,
            630.0 / 3.0,
            645.0 / 3.0,
            678.0 / 3.0,
            708.0 / 3.0,
            693.0 / 3.0,
            708.0 / 3.0,
            729.0 / 3.0,
        ];
        for (i, m) in means.iter().enumerate() {
            let expected = 100.0 * m / means[0];
            assert!((rebased.values[i] - expected).abs() < 1e-12 * expected);
        }
        assert_eq!(rebased.start, q(2007, 1));
    }

    #[test]
    fn cci_identity_and_arithmetic() {
        let s = series(vec![120.0, 80.0]);
        let cci = Series::new(
            SeriesKey::new(SeriesKind::CityCostIndex, "SJ").unwrap(),
            q(2007, 1),
            vec![100.0, 100.0],
        );
        assert_eq!(cci_adjust(&s, &cci).unwrap().values, s.values);
        let cci2 = Series {
            values: vec![120.0, 100.0],
            ..cci.clone()
        };
        assert_eq!(cci_adjust(&s, &cci2).unwrap().values[0], 100.0);
        let bad = Series {
            values: vec![0.0, 100.0],
            ..cci.clone()
        };
        assert!(matches!(
            cci_adjust(&s, &bad),
            Err(DataError::NonPositiveCci(_))
        ));
        let short = cci.slice(0..1);
        assert!(matches!(
            cci_adjust(&s, &short),
            Err(DataError::MisalignedAxis(_))
        ));
    }

    #[test]
    fn cci_round_trip_random() {
        let mut rng = rand_pcg::Pcg32::seed_from_u64(11);
        let s = series((0..20).map(|_| rng.gen_range(50.0..300.0)).collect());
        let cci = Series::new(
            SeriesKey::new(SeriesKind::CityCostIndex, "SJ").unwrap(),
            q(2007, 1),
            (0..20).map(|_| rng.gen_range(80.0..140.0)).collect(),
        );
        let adj = cci_adjust(&s, &cci).unwrap();
        for i in 0..20 {
            let back = adj.values[i] * (cci.values[i] / 100.0);
            assert!((back - s.values[i]).abs() <= 1e-12 * s.values[i]);
        }
    }

    fn row(div: &str, title: &str, desc: &str) -> CatalogRow {
        CatalogRow {
            division: div.into(),
            section: format!("{div}1000"),
            title: title.into(),
            description: desc.into(),
            is_material: true,
        }
    }

    #[test]
    fn service_exclusion_rules() {
        let taxonomy: Vec<String> = ["mobilization", "project management", "Temporary Facilities"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = vec![
            row("01", "Lumber", "framing"),
            row("06", "Rough carpentry", "wood framing lumber"),
            row("03", "Concrete", "includes MOBILIZATION of pump"),
            row("02", "Demolition", "existing"),
            row("09", "Temporary facilities", "fencing"),
        ];
        let (kept, dropped) = partition_services(&rows, &taxonomy);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].division, "06");
        assert!(kept[0].is_material);
        assert_eq!(dropped.len(), 4);
        assert!(dropped.iter().all(|r| !r.is_material));
        assert_eq!(exclude_services(&rows, &taxonomy), kept);
    }

    #[test]
    fn monthly_alignment() {
        let key = SeriesKey::ppi("P").unwrap();
        let s = align_monthly_to_quarterly(key.clone(), 2020, 1, &[Some(100.0); 3]).unwrap();
        assert_eq!(s.values, vec![100.0]);
        let s =
            align_monthly_to_quarterly(key.clone(), 2020, 1, &[Some(90.0), Some(100.0), Some(110.0)])
                .unwrap();
        assert_eq!(s.values, vec![100.0]);
        assert!(align_monthly_to_quarterly(key.clone(), 2020, 1, &[]).is_err());
        assert!(align_monthly_to_quarterly(key.clone(), 2020, 2, &[Some(1.0); 3]).is_err());
        // A quarter with no observed month is masked.
        let mut m = vec![Some(1.0); 6];
        m[3] = None;
        m[4] = None;
        m[5] = None;
        let s = align_monthly_to_quarterly(key, 2020, 1, &m).unwrap();
        assert!(s.values[1].is_nan());
        assert!(!s.observed[1]);
    }

    #[test]
    fn monthly_alignment_matches_brute_force_means() {
        let mut rng = rand_pcg::Pcg32::seed_from_u64(5);
        let months: Vec<f64> = (0..24).map(|_| rng.gen_range(50.0..150.0)).collect();
        let m: Vec<Option<f64>> = months.iter().copied().map(Some).collect();
        let s = align_monthly_to_quarterly(SeriesKey::ppi("P").unwrap(), 2011, 1, &m).unwrap();
        assert_eq!(s.len(), 8);
        for qi in 0..8 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += months[qi * 3 + j];
            }
            assert!((s.values[qi] - acc / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn locf_imputation_caps_runs() {
        let mut s = series(vec![1.0, f64::NAN, f64::NAN, 4.0, f64::NAN]);
        s.observed = s.values.iter().map(|v| v.is_finite()).collect();
        let (filled, rep) = impute_locf(&s, MAX_IMPUTED_RUN).unwrap();
        assert_eq!(filled.values, vec![1.0, 1.0, 1.0, 4.0, 4.0]);
        assert_eq!(filled.observed, vec![true, false, false, true, false]);
        assert_eq!(rep.imputed, 3);
        let mut long = series(vec![1.0, f64::NAN, f64::NAN, f64::NAN, 2.0]);
        long.observed = long.values.iter().map(|v| v.is_finite()).collect();
        assert!(matches!(
            impute_locf(&long, MAX_IMPUTED_RUN),
            Err(DataError::GapTooLong { run: 3, .. })
        ));
        let mut lead = series(vec![f64::NAN, 2.0]);
        lead.observed[0] = false;
        assert!(matches!(
            impute_locf(&lead, 2),
            Err(DataError::LeadingGap { .. })
        ));
    }

    fn panel_of_len(t: usize) -> Panel {
        let mut p = Panel::new(q(2007, 1), t);
        p.insert(series((0..t).map(|i| 100.0 + i as f64).collect()))
            .unwrap();
        p
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = train_test_split(&panel_of_len(78), 0.85).unwrap();
        assert_eq!((tr.len(), te.len()), (66, 12));
        let (tr, te) = train_test_split(&panel_of_len(20), 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 10));
        assert!(tr.end() < te.start());
        assert!(train_test_split(&panel_of_len(3), 0.5).is_err());
        assert!(train_test_split(&panel_of_len(10), 1.0).is_err());
        assert!(train_test_split(&panel_of_len(4), 0.1).is_err());
    }

    proptest! {
        #[test]
        fn rebase_is_idempotent(vals in prop::collection::vec(0.1f64..1e4, 1..40)) {
            let s = series(vals);
            let once = rebase(&s, q(2007, 1), 100.0).unwrap();
            let twice = rebase(&once, q(2007, 1), 100.0).unwrap();
            prop_assert_eq!(once.values, twice.values);
        }

        #[test]
        fn adjustments_commute_with_truncation(
            vals in prop::collection::vec(0.1f64..1e4, 4..40),
            cut in 1usize..4,
        ) {
            let n = vals.len();
            let s = series(vals.clone());
            let cci = Series::new(
                SeriesKey::new(SeriesKind::CityCostIndex, "SJ").unwrap(),
                q(2007, 1),
                vals.iter().map(|v| 50.0 + v % 90.0).collect(),
            );
            let end = n - cut;
            let a = rebase(&s, q(2007, 1), 100.0).unwrap().slice(0..end);
            let b = rebase(&s.slice(0..end), q(2007, 1), 100.0).unwrap();
            prop_assert_eq!(a.values, b.values);
            let a = cci_adjust(&s, &cci).unwrap().slice(0..end);
            let b = cci_adjust(&s.slice(0..end), &cci.slice(0..end)).unwrap();
            prop_assert_eq!(a.values, b.values);
        }

        #[test]
        fn split_preserves_every_value(t in 4usize..120, frac in 0.2f64..0.95) {
            let p = panel_of_len(t);
            if let Ok((tr, te)) = train_test_split(&p, frac) {
                let key = SeriesKey::csi("061623").unwrap();
                let mut joined = tr.get(&key).unwrap().values.clone();
                joined.extend_from_slice(&te.get(&key).unwrap().values);
                prop_assert_eq!(&joined, &p.get(&key).unwrap().values);
                let raw = t as f64 * frac;
                prop_assert!(tr.len() as f64 <= raw + 1e-9 && tr.len() as f64 > raw - 1.0 - 1e-9);
            }
        }
    }
}
