use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

const WILCOXON_MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Web,
    NoWeb,
}

impl System {
    pub fn as_str(self) -> &'static str {
        match self {
            System::Web => "web",
            System::NoWeb => "no_web",
        }
    }

    pub fn other(self) -> System {
        match self {
            System::Web => System::NoWeb,
            System::NoWeb => System::Web,
        }
    }
}

impl std::str::FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "web" => Ok(System::Web),
            "no_web" | "noweb" => Ok(System::NoWeb),
            other => Err(format!("unknown system `{other}`")),
        }
    }
}

/// One rater's rank for one system's answer to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub rater: String,
    pub question: String,
    pub system: System,
    pub rank: u8,
}

/// Reads `rater,question,system,rank` rows.
pub fn parse_rankings_csv<R: Read>(input: R) -> Result<Vec<RankingRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<(String, String, String, u8)>().enumerate() {
        let (rater, question, system, rank) = rec?;
        let system = system.parse().map_err(|e| EvalError::Parse(format!("row {}: {e}", i + 2)))?;
        out.push(RankingRecord { rater, question, system, rank });
    }
    Ok(out)
}

/// Web-system rank keyed by (question, rater), after checking that every
/// pair has both systems ranked 1 and 2.
fn paired(records: &[RankingRecord]) -> Result<BTreeMap<(String, String), u8>, EvalError> {
    let mut seen: BTreeMap<(String, String), [Option<u8>; 2]> = BTreeMap::new();
    for r in records {
        let slot = &mut seen.entry((r.question.clone(), r.rater.clone())).or_default()[r.system as usize];
        if slot.replace(r.rank).is_some() {
            return Err(EvalError::IncompleteRankings(format!(
                "rater {} ranked {} twice on {}",
                r.rater,
                r.system.as_str(),
                r.question
            )));
        }
    }
    seen.into_iter()
        .map(|((q, rater), ranks)| match ranks {
            [Some(w), Some(n)] if (w == 1 && n == 2) || (w == 2 && n == 1) => Ok(((q, rater), w)),
            _ => Err(EvalError::IncompleteRankings(format!("rater {rater} on {q} lacks a 1/2 pair"))),
        })
        .collect()
}

/// Kendall's coefficient of concordance for a complete `m × n` rank matrix
/// (raters by items): `12 S / (m² (n³ − n))`.
pub fn kendalls_w_matrix(ranks: &[Vec<f64>]) -> Result<f64, EvalError> {
    let m = ranks.len();
    let n = ranks.first().map_or(0, Vec::len);
    if m < 2 || n < 2 || ranks.iter().any(|r| r.len() != n) {
        return Err(EvalError::IncompleteRankings(format!("{m} raters over {n} items")));
    }
    let sums: Vec<f64> = (0..n).map(|j| ranks.iter().map(|r| r[j]).sum()).collect();
    let mean = m as f64 * (n as f64 + 1.0) / 2.0;
    let s: f64 = sums.iter().map(|r| (r - mean).powi(2)).sum();
    let (m, n) = (m as f64, n as f64);
    Ok(12.0 * s / (m * m * (n * n * n - n)))
}

/// Concordance of the raters on a single question.
pub fn kendalls_w(records: &[RankingRecord]) -> Result<f64, EvalError> {
    let pairs = paired(records)?;
    let mut questions = pairs.keys().map(|(q, _)| q);
    if let Some(first) = questions.next() {
        if questions.any(|q| q != first) {
            return Err(EvalError::IncompleteRankings("records span several questions".into()));
        }
    }
    let matrix: Vec<Vec<f64>> = pairs.values().map(|&w| vec![f64::from(w), f64::from(3 - w)]).collect();
    kendalls_w_matrix(&matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRanks {
    pub web: f64,
    pub no_web: f64,
}

pub fn mean_rank(records: &[RankingRecord]) -> Result<MeanRanks, EvalError> {
    let pairs = paired(records)?;
    if pairs.is_empty() {
        return Err(EvalError::IncompleteRankings("no rankings".into()));
    }
    let n = pairs.len() as f64;
    let web: f64 = pairs.values().map(|&w| f64::from(w)).sum::<f64>() / n;
    let no_web: f64 = pairs.values().map(|&w| f64::from(3 - w)).sum::<f64>() / n;
    Ok(MeanRanks { web, no_web })
}

/// `(wins − losses) / pairs` from the web system's side.
pub fn cliffs_delta(records: &[RankingRecord]) -> Result<f64, EvalError> {
    let pairs = paired(records)?;
    if pairs.is_empty() {
        return Err(EvalError::IncompleteRankings("no rankings".into()));
    }
    let wins = pairs.values().filter(|&&w| w == 1).count() as f64;
    let losses = pairs.len() as f64 - wins;
    Ok((wins - losses) / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Smaller of the two signed-rank sums.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Nonzero differences.
    pub n: usize,
    pub z: f64,
    /// Normal approximation without tie correction.
    pub p: f64,
    /// Normal approximation with the tie-corrected variance.
    pub p_tie_corrected: f64,
    /// Exact permutation distribution of the observed (tied) ranks.
    pub p_exact: f64,
    pub one_tailed: bool,
}

/// Signed-rank test of `rank(no_web) − rank(web)`; the one-tailed
/// alternative is that the web system ranks better.
pub fn wilcoxon_signed_rank(records: &[RankingRecord], one_tailed: bool) -> Result<WilcoxonResult, EvalError> {
    let diffs: Vec<f64> = paired(records)?.values().map(|&w| f64::from(3 - w) - f64::from(w)).collect();
    wilcoxon_from_differences(&diffs, one_tailed)
}

/// Signed-rank test on raw paired differences. Zero differences are dropped
/// and tied magnitudes share their average rank.
pub fn wilcoxon_from_differences(diffs: &[f64], one_tailed: bool) -> Result<WilcoxonResult, EvalError> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    if nz.len() < WILCOXON_MIN_PAIRS {
        return Err(EvalError::TooFewPairs { have: nz.len(), need: WILCOXON_MIN_PAIRS });
    }
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
    let n = nz.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let tie_term: f64 = tie_groups(&ranks).iter().map(|&t| t * t * t - t).sum::<f64>() / 48.0;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tail = |sd: f64| {
        let z = (w_minus - mu) / sd;
        let lower = std_normal.cdf(z);
        let p = if one_tailed { lower } else { 2.0 * lower.min(1.0 - lower) };
        (z, p.min(1.0))
    };
    let (z, p) = tail(var.sqrt());
    let (_, p_tie_corrected) = tail((var - tie_term).max(f64::MIN_POSITIVE).sqrt());
    let p_exact = exact_p(&ranks, w_minus, one_tailed);
    Ok(WilcoxonResult {
        w: w_plus.min(w_minus),
        w_plus,
        w_minus,
        n: nz.len(),
        z,
        p,
        p_tie_corrected,
        p_exact,
        one_tailed,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn tie_groups(ranks: &[f64]) -> Vec<f64> {
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for r in ranks {
        *counts.entry(r.to_bits()).or_default() += 1.0;
    }
    counts.into_values().filter(|&t| t > 1.0).collect()
}

/// `P(W− ≤ observed)` when each rank's sign is a fair coin flip, by dynamic
/// programming over doubled (integer) ranks.
fn exact_p(ranks: &[f64], w_minus: f64, one_tailed: bool) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for s in (0..=reach).rev() {
            let stay = dist[s] * 0.5;
            let add = if s >= r { dist[s - r] * 0.5 } else { 0.0 };
            dist[s] = stay + add;
        }
    }
    let obs = (w_minus * 2.0).round() as usize;
    let lower: f64 = dist[..=obs.min(total)].iter().sum();
    if one_tailed {
        lower.min(1.0)
    } else {
        let upper: f64 = dist[obs.min(total)..].iter().sum();
        (2.0 * lower.min(upper)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question: String,
    pub raters: usize,
    pub web_first: usize,
    pub kendalls_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub questions: Vec<QuestionSummary>,
    pub mean_ranks: MeanRanks,
    pub web_first_votes: usize,
    pub total_votes: usize,
    pub cliffs_delta: f64,
    pub wilcoxon: WilcoxonResult,
}

/// Orders `Q2` before `Q10`.
fn natural_key(s: &str) -> (String, u64, String) {
    let digits_at = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
    let (head, rest) = s.split_at(digits_at);
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    (head.to_string(), rest[..end].parse().unwrap_or(0), rest[end..].to_string())
}

pub fn summarize_rankings(records: &[RankingRecord]) -> Result<RankingSummary, EvalError> {
    let pairs = paired(records)?;
    let mut by_question: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for ((q, _), &w) in &pairs {
        by_question.entry(q).or_default().push(w);
    }
    let mut questions = by_question
        .into_iter()
        .map(|(q, web_ranks)| {
            let matrix: Vec<Vec<f64>> =
                web_ranks.iter().map(|&w| vec![f64::from(w), f64::from(3 - w)]).collect();
            Ok(QuestionSummary {
                question: q.to_string(),
                raters: web_ranks.len(),
                web_first: web_ranks.iter().filter(|&&w| w == 1).count(),
                kendalls_w: kendalls_w_matrix(&matrix)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    questions.sort_by_key(|q| natural_key(&q.question));
    Ok(RankingSummary {
        questions,
        mean_ranks: mean_rank(records)?,
        web_first_votes: pairs.values().filter(|&&w| w == 1).count(),
        total_votes: pairs.len(),
        cliffs_delta: cliffs_delta(records)?,
        wilcoxon: wilcoxon_signed_rank(records, true)?,
    })
}

impl fmt::Display for RankingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "question  raters  web_first  kendalls_w")?;
        for q in &self.questions {
            writeln!(f, "{:<9} {:>6}  {:>9}  {:>10.2}", q.question, q.raters, q.web_first, q.kendalls_w)?;
        }
        writeln!(f)?;
        writeln!(f, "first-place votes (web): {} of {}", self.web_first_votes, self.total_votes)?;
        writeln!(f, "mean rank web:    {:.2}", self.mean_ranks.web)?;
        writeln!(f, "mean rank no_web: {:.2}", self.mean_ranks.no_web)?;
        writeln!(f, "cliffs_delta:     {:.2}", self.cliffs_delta)?;
        let w = &self.wilcoxon;
        writeln!(f, "wilcoxon W:       {} (W+ {}, W- {}, n {})", w.w, w.w_plus, w.w_minus, w.n)?;
        writeln!(f, "one-tailed p:     {:.4} (normal approximation)", w.p)?;
        writeln!(f, "                  {:.4} (tie-corrected variance)", w.p_tie_corrected)?;
        write!(f, "                  {:.4} (exact, tied ranks)", w.p_exact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Records for one question where `web_first` of `raters` rank web first.
    fn question(q: &str, raters: usize, web_first: usize) -> Vec<RankingRecord> {
        (0..raters)
            .flat_map(|r| {
                let w = if r < web_first { 1 } else { 2 };
                [
                    RankingRecord { rater: format!("R{r}"), question: q.into(), system: System::Web, rank: w },
                    RankingRecord { rater: format!("R{r}"), question: q.into(), system: System::NoWeb, rank: 3 - w },
                ]
            })
            .collect()
    }

    #[test]
    fn kendall_discrete_values() {
        assert_eq!(kendalls_w(&question("Q1", 4, 4)).unwrap(), 1.0);
        assert_eq!(kendalls_w(&question("Q2", 4, 3)).unwrap(), 0.25);
        assert_eq!(kendalls_w(&question("Q6", 4, 2)).unwrap(), 0.0);
        assert_eq!(kendalls_w(&question("Q4", 4, 1)).unwrap(), 0.25);
    }

    #[test]
    fn incomplete_pairs_are_rejected() {
        let mut recs = question("Q1", 4, 4);
        recs.pop();
        assert!(matches!(kendalls_w(&recs), Err(EvalError::IncompleteRankings(_))));
        let mut dup = question("Q1", 2, 1);
        dup[1].rank = 1;
        assert!(matches!(mean_rank(&dup), Err(EvalError::IncompleteRankings(_))));
    }

    #[test]
    fn mean_rank_and_delta_from_vote_counts() {
        let mut recs = question("A", 26, 26);
        recs.extend(question("B", 14, 0));
        let m = mean_rank(&recs).unwrap();
        assert!((m.web - 1.35).abs() < 1e-12 && (m.no_web - 1.65).abs() < 1e-12);
        assert!((cliffs_delta(&recs).unwrap() - 0.30).abs() < 1e-12);
        let even = question("C", 20, 10);
        assert_eq!(mean_rank(&even).unwrap().web, 1.5);
        assert_eq!(cliffs_delta(&even).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&question("D", 5, 5)).unwrap(), 1.0);
    }

    #[test]
    fn wilcoxon_on_26_to_14_vote_counts() {
        let diffs: Vec<f64> = std::iter::repeat(1.0).take(26).chain(std::iter::repeat(-1.0).take(14)).collect();
        let w = wilcoxon_from_differences(&diffs, true).unwrap();
        assert_eq!(w.w_minus, 287.0);
        assert_eq!(w.w, 287.0);
        assert_eq!(w.w_plus, 533.0);
        // Frozen from an independent computation of the normal tail.
        assert!((w.p - 0.049_16).abs() < 5e-4, "{}", w.p);
        assert!((w.p_tie_corrected - 0.028_91).abs() < 5e-4, "{}", w.p_tie_corrected);
        // With every magnitude tied this is the sign test: P(Bin(40, 1/2) <= 14).
        assert!((w.p_exact - 0.040_34).abs() < 5e-5, "{}", w.p_exact);
    }

    /// Enumerates every sign assignment.
    fn brute_force(diffs: &[f64]) -> (f64, f64) {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let w_minus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
        let n = nz.len();
        let mut le = 0usize;
        for mask in 0u32..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if s <= w_minus + 1e-9 {
                le += 1;
            }
        }
        (w_minus, le as f64 / (1u64 << n) as f64)
    }

    #[test]
    fn single_positive_among_five() {
        let diffs = [3.0, -1.0, -2.0, -4.0, -5.0];
        let w = wilcoxon_from_differences(&diffs, true).unwrap();
        let (w_minus, p) = brute_force(&diffs);
        assert_eq!(w.w_minus, w_minus);
        assert_eq!(w.w_minus, 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(w.w, 3.0);
        assert!((w.p_exact - p).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pattern_is_half() {
        let diffs = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let w = wilcoxon_from_differences(&diffs, true).unwrap();
        assert!((w.p - 0.5).abs() < 1e-12);
        let (_, exact) = brute_force(&diffs);
        // Exact lower tail includes the centre point; its mid-p is one half.
        assert!((exact - 0.65625).abs() < 1e-12);
        assert!((w.p_exact - exact).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_errors() {
        assert!(matches!(wilcoxon_from_differences(&[0.0; 6], true), Err(EvalError::AllZeroDifferences)));
        assert!(matches!(
            wilcoxon_from_differences(&[1.0, -1.0, 2.0, 0.0], true),
            Err(EvalError::TooFewPairs { have: 3, need: 5 })
        ));
    }

    #[test]
    fn csv_parsing_and_summary_order() {
        let text = "rater,question,system,rank\nR1,Q10,web,1\nR1,Q10,no_web,2\nR2,Q10,no-web,1\nR2,Q10,web,2\n\
                    R1,Q2,web,1\nR1,Q2,no_web,2\nR2,Q2,web,1\nR2,Q2,no_web,2\n\
                    R1,Q3,web,1\nR1,Q3,no_web,2\nR2,Q3,web,1\nR2,Q3,no_web,2\nR1,Q4,web,2\nR1,Q4,no_web,1\nR2,Q4,web,1\nR2,Q4,no_web,2\n";
        let recs = parse_rankings_csv(text.as_bytes()).unwrap();
        let s = summarize_rankings(&recs).unwrap();
        let order: Vec<&str> = s.questions.iter().map(|q| q.question.as_str()).collect();
        assert_eq!(order, ["Q2", "Q3", "Q4", "Q10"]);
        assert_eq!(s.questions[0].kendalls_w, 1.0);
        assert_eq!(s.questions[3].kendalls_w, 0.0);
        assert!(parse_rankings_csv("rater,question,system,rank\nR1,Q1,radio,1\n".as_bytes()).is_err());
    }

    fn ranking_strategy() -> impl Strategy<Value = Vec<RankingRecord>> {
        (2usize..7, proptest::collection::vec(proptest::collection::vec(any::<bool>(), 2..7), 1..6)).prop_map(
            |(_, qs)| {
                qs.iter()
                    .enumerate()
                    .flat_map(|(qi, votes)| {
                        votes
                            .iter()
                            .enumerate()
                            .flat_map(move |(ri, &web_wins)| {
                                let w = if web_wins { 1 } else { 2 };
                                [
                                    RankingRecord { rater: format!("R{ri}"), question: format!("Q{qi}"), system: System::Web, rank: w },
                                    RankingRecord { rater: format!("R{ri}"), question: format!("Q{qi}"), system: System::NoWeb, rank: 3 - w },
                                ]
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect()
            },
        )
    }

    fn swap_systems(recs: &[RankingRecord]) -> Vec<RankingRecord> {
        recs.iter().map(|r| RankingRecord { system: r.system.other(), ..r.clone() }).collect()
    }

    proptest! {
        #[test]
        fn kendall_in_unit_interval_and_rater_invariant(recs in ranking_strategy()) {
            let s = summarize_rankings(&recs);
            let qs: Vec<String> = recs.iter().map(|r| r.question.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            for q in qs {
                let one: Vec<RankingRecord> = recs.iter().filter(|r| r.question == q).cloned().collect();
                let w = kendalls_w(&one).unwrap();
                prop_assert!((0.0..=1.0).contains(&w));
                let relabeled: Vec<RankingRecord> = one.iter().map(|r| RankingRecord { rater: format!("X-{}", r.rater.len() * 7 + r.rater.as_bytes()[1] as usize), ..r.clone() }).collect();
                prop_assert_eq!(kendalls_w(&relabeled).unwrap(), w);
            }
            drop(s);
        }

        #[test]
        fn cliffs_delta_is_antisymmetric(recs in ranking_strategy()) {
            let d = cliffs_delta(&recs).unwrap();
            prop_assert_eq!(cliffs_delta(&swap_systems(&recs)).unwrap(), -d);
        }

        #[test]
        fn mean_ranks_sum_to_three(recs in ranking_strategy()) {
            let m = mean_rank(&recs).unwrap();
            prop_assert!((m.web + m.no_web - 3.0).abs() < 1e-12);
        }

        #[test]
        fn exact_tail_matches_enumeration(diffs in proptest::collection::vec(prop_oneof![Just(-2.0), Just(-1.0), Just(0.0), Just(1.0), Just(2.0), Just(3.0)], 5..13)) {
            if let Ok(w) = wilcoxon_from_differences(&diffs, true) {
                let (w_minus, p) = brute_force(&diffs);
                prop_assert_eq!(w.w_minus, w_minus);
                prop_assert!((w.p_exact - p).abs() < 1e-12);
            }
        }
    }
}
