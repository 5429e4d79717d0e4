//! Greedy next-view selection over UV-texel footprints.
//!
//! A candidate's footprint is the set of atlas texels it would cover. The
//! uncertainty criterion prefers footprints with high mean residual
//! uncertainty (uncovered texels count as 1); the coverage criterion prefers
//! footprints with the most uncovered texels.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uq,
    Coverage,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Uq => "uq",
            Strategy::Coverage => "coverage",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uq" => Ok(Strategy::Uq),
            "coverage" | "cvg" => Ok(Strategy::Coverage),
            _ => Err(Error::invalid(format!("unknown strategy {s:?}"))),
        }
    }
}

/// How footprint uncertainties are aggregated for ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UqScore {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug)]
pub struct SelectionState {
    pub residual_uncertainty: UncertaintyMap,
    pub coverage: Vec<bool>,
    /// Sorted texel indices per candidate view id.
    pub candidate_footprints: BTreeMap<u32, Vec<u32>>,
    pub used: Vec<u32>,
}

impl SelectionState {
    pub fn validate(&self) -> Result<()> {
        let n = self.residual_uncertainty.values.len();
        if self.coverage.len() != n {
            return Err(Error::dims("coverage and uncertainty resolution differ"));
        }
        for (id, fp) in &self.candidate_footprints {
            if fp.iter().any(|&t| t as usize >= n) {
                return Err(Error::dims(format!("footprint of view {id} exceeds the atlas")));
            }
        }
        if let Some(u) = self.used.iter().find(|u| !self.candidate_footprints.contains_key(u)) {
            return Err(Error::invalid(format!("used view {u} is not a candidate")));
        }
        Ok(())
    }

    fn footprint(&self, candidate: u32) -> Result<&[u32]> {
        self.candidate_footprints
            .get(&candidate)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown candidate view {candidate}")))
    }

    #[inline]
    fn texel_uncertainty(&self, t: u32) -> f64 {
        let t = t as usize;
        if self.coverage[t] {
            self.residual_uncertainty.values[t]
        } else {
            1.0
        }
    }

    pub fn uncovered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| !c).count()
    }
}

/// Mean uncertainty over the candidate's footprint; 0 for an empty footprint.
pub fn score_view_uq(candidate: u32, state: &SelectionState) -> Result<f64> {
    score_view_uq_with(candidate, state, UqScore::Mean)
}

pub fn score_view_uq_with(candidate: u32, state: &SelectionState, mode: UqScore) -> Result<f64> {
    let fp = state.footprint(candidate)?;
    if fp.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = fp.iter().map(|&t| state.texel_uncertainty(t)).sum();
    Ok(match mode {
        UqScore::Mean => sum / fp.len() as f64,
        UqScore::Sum => sum,
    })
}

/// Number of footprint texels not yet covered by any view.
pub fn score_view_cvg(candidate: u32, state: &SelectionState) -> Result<usize> {
    let fp = state.footprint(candidate)?;
    Ok(fp.iter().filter(|&&t| !state.coverage[t as usize]).count())
}

/// One scored candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub view_id: u32,
    pub score: f64,
    /// Mean footprint uncertainty, which the stopping threshold is tested on.
    pub mean_uncertainty: f64,
}

/// Scores every unused candidate, in ascending id order.
pub fn score_candidates(state: &SelectionState, strategy: Strategy, mode: UqScore) -> Result<Vec<CandidateScore>> {
    state
        .candidate_footprints
        .keys()
        .filter(|id| !state.used.contains(id))
        .map(|&id| {
            let mean = score_view_uq(id, state)?;
            let score = match strategy {
                Strategy::Uq => score_view_uq_with(id, state, mode)?,
                Strategy::Coverage => score_view_cvg(id, state)? as f64,
            };
            Ok(CandidateScore {
                view_id: id,
                score,
                mean_uncertainty: mean,
            })
        })
        .collect()
}

/// Highest score; ties go to the lowest view id.
pub fn pick_best(scores: &[CandidateScore]) -> Option<CandidateScore> {
    scores.iter().copied().fold(None, |best, s| match best {
        Some(b) if b.score > s.score || (b.score == s.score && b.view_id < s.view_id) => Some(b),
        _ => Some(s),
    })
}

/// Whether a pick should end selection before being added.
pub fn should_stop(best: &CandidateScore, strategy: Strategy, threshold: f64) -> bool {
    match strategy {
        Strategy::Uq => best.mean_uncertainty < threshold,
        Strategy::Coverage => best.score <= 0.0,
    }
}

/// Plans views without acquiring them: each pick marks its footprint covered
/// and treats it as fully resolved (uncertainty 0). Returns the used views
/// followed by the picks, in order.
pub fn greedy_select(state: &SelectionState, strategy: Strategy, max_views: usize, threshold: f64) -> Result<Vec<u32>> {
    greedy_select_with(state, strategy, max_views, threshold, UqScore::Mean).map(|(v, _)| v)
}

pub fn greedy_select_with(
    state: &SelectionState,
    strategy: Strategy,
    max_views: usize,
    threshold: f64,
    mode: UqScore,
) -> Result<(Vec<u32>, Vec<Vec<CandidateScore>>)> {
    state.validate()?;
    let mut st = state.clone();
    let mut history = Vec::new();
    while st.used.len() < max_views {
        let scores = score_candidates(&st, strategy, mode)?;
        let Some(best) = pick_best(&scores) else { break };
        history.push(scores);
        if should_stop(&best, strategy, threshold) {
            break;
        }
        for &t in &st.candidate_footprints[&best.view_id] {
            st.coverage[t as usize] = true;
            st.residual_uncertainty.values[t as usize] = 0.0;
        }
        st.used.push(best.view_id);
    }
    Ok((st.used, history))
}
