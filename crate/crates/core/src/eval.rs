//! Trial construction and equal-error-rate evaluation.
//!
//! Conventions: a trial is accepted when its score is `>= threshold`, so
//! `FAR(t)` is the fraction of nontarget scores `>= t` and `FRR(t)` the
//! fraction of target scores `< t`. The EER is read off by linear
//! interpolation between the two adjacent operating points whose
//! `FAR - FRR` changes sign. A system that ranks nontargets above targets
//! can score above 50%.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::data::LabeledVector;
use crate::error::{check_dim, Error, Result};
use crate::scoring::{enroll_average, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// Target speaker, correct phrase.
    TC,
    /// Impostor, wrong phrase.
    IW,
    /// Target speaker, wrong phrase.
    TW,
    /// Impostor, correct phrase.
    IC,
}

impl Condition {
    pub fn of(same_speaker: bool, same_phrase: bool) -> Self {
        match (same_speaker, same_phrase) {
            (true, true) => Condition::TC,
            (true, false) => Condition::TW,
            (false, true) => Condition::IC,
            (false, false) => Condition::IW,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::TC => "TC",
            Condition::IW => "IW",
            Condition::TW => "TW",
            Condition::IC => "IC",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TC" => Ok(Condition::TC),
            "IW" => Ok(Condition::IW),
            "TW" => Ok(Condition::TW),
            "IC" => Ok(Condition::IC),
            other => Err(Error::invalid(format!("unknown trial condition {other:?}"))),
        }
    }
}

/// An enrolled (speaker, phrase) model.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub speaker: String,
    pub phrase: String,
    pub vector: DVector<f64>,
    pub sessions: Vec<String>,
}

/// Averages enrollment vectors per (speaker, phrase), sorted by that pair.
pub fn enroll_models(vectors: &[LabeledVector]) -> Result<Vec<Enrollment>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&LabeledVector>> = BTreeMap::new();
    for v in vectors {
        groups
            .entry((&v.speaker_id, &v.phrase_id))
            .or_default()
            .push(v);
    }
    groups
        .into_iter()
        .map(|((speaker, phrase), members)| {
            Ok(Enrollment {
                speaker: speaker.to_string(),
                phrase: phrase.to_string(),
                vector: enroll_average(members.iter().map(|v| &v.features))?,
                sessions: members.iter().map(|v| v.session_id.clone()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    /// Index into the enrollment list.
    pub enroll: usize,
    /// Index into the test vectors.
    pub test: usize,
    pub enroll_speaker: String,
    pub enroll_phrase: String,
    pub condition: Condition,
}

fn check_leakage(enrollments: &[Enrollment], tests: &[LabeledVector]) -> Result<()> {
    let enrolled: HashSet<&str> = enrollments
        .iter()
        .flat_map(|e| e.sessions.iter().map(String::as_str))
        .collect();
    if let Some(t) = tests
        .iter()
        .find(|t| enrolled.contains(t.session_id.as_str()))
    {
        return Err(Error::SessionLeakage(t.session_id.clone()));
    }
    Ok(())
}

/// Full cross of enrollments and tests, in enrollment-major order.
pub fn build_trials(enrollments: &[Enrollment], tests: &[LabeledVector]) -> Result<Vec<Trial>> {
    check_leakage(enrollments, tests)?;
    let mut trials = Vec::with_capacity(enrollments.len() * tests.len());
    for (e, enr) in enrollments.iter().enumerate() {
        for (t, test) in tests.iter().enumerate() {
            trials.push(Trial {
                enroll: e,
                test: t,
                enroll_speaker: enr.speaker.clone(),
                enroll_phrase: enr.phrase.clone(),
                condition: Condition::of(
                    enr.speaker == test.speaker_id,
                    enr.phrase == test.phrase_id,
                ),
            });
        }
    }
    Ok(trials)
}

/// One line of an explicit trial list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSpec {
    pub enroll_speaker: String,
    pub enroll_phrase: String,
    pub test_session: String,
    pub expected: Condition,
}

/// Resolves an explicit trial list, checking every expected condition
/// against the labels.
pub fn trials_from_list(
    enrollments: &[Enrollment],
    tests: &[LabeledVector],
    list: &[TrialSpec],
) -> Result<Vec<Trial>> {
    check_leakage(enrollments, tests)?;
    let by_model: HashMap<(&str, &str), usize> = enrollments
        .iter()
        .enumerate()
        .map(|(n, e)| ((e.speaker.as_str(), e.phrase.as_str()), n))
        .collect();
    let mut by_session: HashMap<&str, usize> = HashMap::new();
    for (n, t) in tests.iter().enumerate() {
        if by_session.insert(t.session_id.as_str(), n).is_some() {
            return Err(Error::invalid(format!(
                "duplicate test session {:?}",
                t.session_id
            )));
        }
    }
    list.iter()
        .map(|spec| {
            let e = *by_model
                .get(&(spec.enroll_speaker.as_str(), spec.enroll_phrase.as_str()))
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "no enrollment for ({}, {})",
                        spec.enroll_speaker, spec.enroll_phrase
                    ))
                })?;
            let t = *by_session.get(spec.test_session.as_str()).ok_or_else(|| {
                Error::invalid(format!("unknown test session {:?}", spec.test_session))
            })?;
            let condition = Condition::of(
                spec.enroll_speaker == tests[t].speaker_id,
                spec.enroll_phrase == tests[t].phrase_id,
            );
            if condition != spec.expected {
                return Err(Error::invalid(format!(
                    "trial ({}, {}, {}) is {condition}, listed as {}",
                    spec.enroll_speaker, spec.enroll_phrase, spec.test_session, spec.expected
                )));
            }
            Ok(Trial {
                enroll: e,
                test: t,
                enroll_speaker: spec.enroll_speaker.clone(),
                enroll_phrase: spec.enroll_phrase.clone(),
                condition,
            })
        })
        .collect()
}

/// The operating point where false accepts and false rejects balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    pub eer_percent: f64,
    pub threshold: f64,
}

/// One operating point of the detection trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

fn sorted_finite(scores: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty(what));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid(format!("NaN among {what}")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Operating points at every distinct pooled score, ascending threshold,
/// as raw counts `(threshold, false accepts, false rejects)`.
fn sweep(targets: &[f64], nontargets: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let fr = targets.partition_point(|&s| s < t);
            let fa = nontargets.len() - nontargets.partition_point(|&s| s < t);
            (t, fa, fr)
        })
        .collect()
}

/// Equal error rate (percent) and its threshold.
pub fn compute_eer(target_scores: &[f64], nontarget_scores: &[f64]) -> Result<EerPoint> {
    let targets = sorted_finite(target_scores, "target scores")?;
    let nontargets = sorted_finite(nontarget_scores, "nontarget scores")?;
    let (nt, nn) = (targets.len(), nontargets.len());
    let points = sweep(&targets, &nontargets);
    // FAR - FRR has the sign of fa * nt - fr * nn; compared in integers.
    let sign = |fa: usize, fr: usize| (fa as i128 * nt as i128) - (fr as i128 * nn as i128);
    let rate = |fa: usize, fr: usize| (fa as f64 / nn as f64, fr as f64 / nt as f64);
    for (k, &(t, fa, fr)) in points.iter().enumerate() {
        let s = sign(fa, fr);
        if s > 0 {
            continue;
        }
        let (far, frr) = rate(fa, fr);
        if s == 0 || k == 0 {
            return Ok(EerPoint {
                eer_percent: 100.0 * if s == 0 { far } else { 0.5 * (far + frr) },
                threshold: t,
            });
        }
        let (t0, fa0, fr0) = points[k - 1];
        let (far0, frr0) = rate(fa0, fr0);
        let d0 = far0 - frr0;
        let d1 = far - frr;
        let alpha = d0 / (d0 - d1);
        return Ok(EerPoint {
            eer_percent: 100.0 * (far0 + alpha * (far - far0)),
            threshold: t0 + alpha * (t - t0),
        });
    }
    unreachable!("FAR - FRR is non-positive at the largest pooled score")
}

/// `(threshold, FAR, FRR)` at every distinct pooled score.
pub fn det_points(target_scores: &[f64], nontarget_scores: &[f64]) -> Result<Vec<DetPoint>> {
    let targets = sorted_finite(target_scores, "target scores")?;
    let nontargets = sorted_finite(nontarget_scores, "nontarget scores")?;
    Ok(sweep(&targets, &nontargets)
        .into_iter()
        .map(|(threshold, fa, fr)| DetPoint {
            threshold,
            far: fa as f64 / nontargets.len() as f64,
            frr: fr as f64 / targets.len() as f64,
        })
        .collect())
}

/// Per-condition results of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub system: String,
    pub iw: Option<EerPoint>,
    pub tw: Option<EerPoint>,
    pub ic: Option<EerPoint>,
    /// All nontargets pooled against the TC targets.
    pub total: EerPoint,
    /// Pooled DET curve.
    pub det: Vec<DetPoint>,
    pub trial_count: usize,
}

impl ScoreReport {
    /// Rows in report order: IW, TW, IC, Total.
    pub fn rows(&self) -> [(&'static str, Option<EerPoint>); 4] {
        [
            ("IW", self.iw),
            ("TW", self.tw),
            ("IC", self.ic),
            ("Total", Some(self.total)),
        ]
    }
}

/// Scores every trial; output order follows `trials` regardless of
/// parallelism.
pub fn score_trials(
    scorer: &dyn Scorer,
    enrollments: &[Enrollment],
    tests: &[LabeledVector],
    trials: &[Trial],
) -> Result<Vec<f64>> {
    if let (Some(e), Some(t)) = (enrollments.first(), tests.first()) {
        check_dim(e.vector.len(), t.dim())?;
    }
    trials
        .par_iter()
        .map(|tr| scorer.score(&enrollments[tr.enroll].vector, &tests[tr.test].features))
        .collect()
}

pub fn report_from_scores(system: &str, trials: &[Trial], scores: &[f64]) -> Result<ScoreReport> {
    check_dim(trials.len(), scores.len())?;
    let mut by: HashMap<Condition, Vec<f64>> = HashMap::new();
    for (tr, &s) in trials.iter().zip(scores) {
        by.entry(tr.condition).or_default().push(s);
    }
    let targets = by
        .remove(&Condition::TC)
        .ok_or(Error::Empty("no target (TC) trials"))?;
    let per = |c: Condition| -> Result<Option<EerPoint>> {
        by.get(&c).map(|n| compute_eer(&targets, n)).transpose()
    };
    let pooled: Vec<f64> = trials
        .iter()
        .zip(scores)
        .filter(|(tr, _)| tr.condition != Condition::TC)
        .map(|(_, &s)| s)
        .collect();
    Ok(ScoreReport {
        system: system.to_string(),
        iw: per(Condition::IW)?,
        tw: per(Condition::TW)?,
        ic: per(Condition::IC)?,
        total: compute_eer(&targets, &pooled)?,
        det: det_points(&targets, &pooled)?,
        trial_count: trials.len(),
    })
}

/// Builds the full trial cross, scores it and reports per-condition EERs.
pub fn evaluate(
    scorer: &dyn Scorer,
    enrollments: &[Enrollment],
    tests: &[LabeledVector],
) -> Result<ScoreReport> {
    let trials = build_trials(enrollments, tests)?;
    let scores = score_trials(scorer, enrollments, tests, &trials)?;
    report_from_scores(scorer.name(), &trials, &scores)
}

/// Aligned text table: one row per condition, one column per system.
pub fn format_table(reports: &[ScoreReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.system.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "EER(%)");
    for r in reports {
        let _ = write!(out, "  {:>width$}", r.system);
    }
    out.push('\n');
    for row in 0..4 {
        let label = reports
            .first()
            .map_or(["IW", "TW", "IC", "Total"][row], |r| r.rows()[row].0);
        let _ = write!(out, "{label:<8}");
        for r in reports {
            match r.rows()[row].1 {
                Some(p) => {
                    let _ = write!(out, "  {:>width$.2}", p.eer_percent);
                }
                None => {
                    let _ = write!(out, "  {:>width$}", "n/a");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub const REPORT_CSV_HEADER: [&str; 4] = ["system", "condition", "eer_percent", "threshold"];

/// CSV with columns `system,condition,eer_percent,threshold`; conditions
/// without trials have empty value fields.
pub fn write_report_csv<W: Write>(reports: &[ScoreReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_CSV_HEADER).map_err(csv_io)?;
    for r in reports {
        for (cond, point) in r.rows() {
            let (eer, thr) = point.map_or((String::new(), String::new()), |p| {
                (p.eer_percent.to_string(), p.threshold.to_string())
            });
            w.write_record([r.system.as_str(), cond, &eer, &thr])
                .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `threshold,far,frr`.
pub fn write_det_csv<W: Write>(points: &[DetPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "far", "frr"])
        .map_err(csv_io)?;
    for p in points {
        w.write_record([
            p.threshold.to_string(),
            p.far.to_string(),
            p.frr.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::CosineScorer;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn lv(s: &str, p: &str, k: &str, x: DVector<f64>) -> LabeledVector {
        LabeledVector::new(x, s, p, k).unwrap()
    }

    #[test]
    fn condition_table() {
        let enrollments = enroll_models(&[
            lv("s1", "p1", "e1", dvector![1.0]),
            lv("s1", "p2", "e2", dvector![1.0]),
            lv("s2", "p1", "e3", dvector![1.0]),
            lv("s2", "p2", "e4", dvector![1.0]),
        ])
        .unwrap();
        let tests = [lv("s1", "p1", "t1", dvector![1.0])];
        let trials = build_trials(&enrollments, &tests).unwrap();
        let conds: Vec<Condition> = trials.iter().map(|t| t.condition).collect();
        assert_eq!(
            conds,
            [Condition::TC, Condition::TW, Condition::IC, Condition::IW]
        );
        assert_eq!(trials.len(), enrollments.len() * tests.len());
        assert!(build_trials(&enrollments, &[]).unwrap().is_empty());
    }

    #[test]
    fn leakage_is_rejected() {
        let e = enroll_models(&[lv("s1", "p1", "shared", dvector![1.0])]).unwrap();
        let err = build_trials(&e, &[lv("s1", "p1", "shared", dvector![1.0])]).unwrap_err();
        assert!(matches!(err, Error::SessionLeakage(s) if s == "shared"));
    }

    #[test]
    fn enrollment_groups_average() {
        let e = enroll_models(&[
            lv("b", "x", "1", dvector![1.0]),
            lv("a", "x", "2", dvector![0.0]),
            lv("b", "x", "3", dvector![3.0]),
        ])
        .unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].speaker.as_str(), e[1].vector[0]), ("a", 2.0));
        assert_eq!(e[1].sessions, ["1", "3"]);
    }

    #[test]
    fn eer_examples() {
        let p = compute_eer(&[2.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_eq!(p.eer_percent, 0.0);
        let same = [0.3, -1.0, 2.5, 0.7];
        assert!((compute_eer(&same, &same).unwrap().eer_percent - 50.0).abs() < 1e-12);
        let p = compute_eer(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.5, 2.5, 3.5]).unwrap();
        assert!((p.eer_percent - 50.0).abs() < 1e-12);
        assert!(compute_eer(&[], &[1.0]).is_err());
        assert!(compute_eer(&[1.0], &[]).is_err());
        assert!(compute_eer(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn eer_interpolates_between_points() {
        // Points: t=0 (1, 0), t=1 (1/2, 0), t=2 (1/2, 1/2) -> exact crossing.
        // Shift one target to force interpolation.
        let p = compute_eer(&[1.5, 3.0], &[0.0, 2.0]).unwrap();
        // t=1.5: FAR 1/2, FRR 0 ; t=2: FAR 1/2, FRR 1/2 -> crossing at t=2.
        assert_eq!(p.eer_percent, 50.0);
        let p = compute_eer(&[1.0, 3.0, 4.0], &[0.0, 2.0]).unwrap();
        // t=1: (1/2, 0), t=2: (1/2, 1/3), t=3: (0, 1/3): d = 1/2, 1/6, -1/3.
        // Interpolate between t=2 and t=3 with alpha = (1/6)/(1/2) = 1/3.
        assert!((p.eer_percent - 100.0 / 3.0).abs() < 1e-12);
        assert!((p.threshold - (2.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn report_and_formats() {
        let enr = enroll_models(&[
            lv("s1", "p1", "e1", dvector![1.0, 0.0]),
            lv("s2", "p2", "e2", dvector![0.0, 1.0]),
        ])
        .unwrap();
        let tests = [
            lv("s1", "p1", "t1", dvector![1.0, 0.1]),
            lv("s2", "p2", "t2", dvector![0.1, 1.0]),
        ];
        let report = evaluate(&CosineScorer, &enr, &tests).unwrap();
        assert_eq!(report.trial_count, 4);
        assert_eq!(report.total.eer_percent, 0.0);
        assert!(report.tw.is_none() && report.ic.is_none());
        let table = format_table(std::slice::from_ref(&report));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("EER(%)") && lines[0].ends_with("cosine"));
        assert!(lines[2].contains("n/a"));
        let mut buf = Vec::new();
        write_report_csv(&[report], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "system,condition,eer_percent,threshold");
        assert_eq!(rows.len(), 5);
        assert!(rows[1].starts_with("cosine,IW,0,"));
        assert_eq!(rows[2], "cosine,TW,,");
    }

    #[test]
    fn explicit_trials_are_checked() {
        let enr = enroll_models(&[lv("s1", "p1", "e1", dvector![1.0])]).unwrap();
        let tests = [lv("s2", "p1", "t1", dvector![1.0])];
        let spec = |c: Condition| TrialSpec {
            enroll_speaker: "s1".into(),
            enroll_phrase: "p1".into(),
            test_session: "t1".into(),
            expected: c,
        };
        let ok = trials_from_list(&enr, &tests, &[spec(Condition::IC)]).unwrap();
        assert_eq!(ok[0].condition, Condition::IC);
        assert!(trials_from_list(&enr, &tests, &[spec(Condition::TC)]).is_err());
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            t in proptest::collection::vec(-3.0..3.0f64, 1..30),
            n in proptest::collection::vec(-3.0..3.0f64, 1..30),
        ) {
            let a = compute_eer(&t, &n).unwrap().eer_percent;
            let f = |x: &f64| (0.7 * x).exp() + 2.0;
            let tt: Vec<f64> = t.iter().map(f).collect();
            let nn: Vec<f64> = n.iter().map(f).collect();
            let b = compute_eer(&tt, &nn).unwrap().eer_percent;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn eer_swap_and_negate(
            t in proptest::collection::hash_set(-3000i32..3000, 1..30),
            n in proptest::collection::hash_set(3000i32..9000, 1..30),
            shift in -6000i32..0,
        ) {
            // Disjoint integer-valued scores, so no ties across lists.
            let t: Vec<f64> = t.into_iter().map(|x| x as f64 / 1000.0).collect();
            let n: Vec<f64> = n.into_iter().map(|x| (x + shift) as f64 / 1000.0).collect();
            let a = compute_eer(&t, &n).unwrap().eer_percent;
            let neg_n: Vec<f64> = n.iter().map(|x| -x).collect();
            let neg_t: Vec<f64> = t.iter().map(|x| -x).collect();
            let b = compute_eer(&neg_n, &neg_t).unwrap().eer_percent;
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }

        #[test]
        fn det_curves_are_monotone(
            t in proptest::collection::vec(-3.0..3.0f64, 1..40),
            n in proptest::collection::vec(-3.0..3.0f64, 1..40),
        ) {
            let pts = det_points(&t, &n).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].threshold > w[0].threshold);
                prop_assert!(w[1].far <= w[0].far);
                prop_assert!(w[1].frr >= w[0].frr);
            }
        }
    }
}
