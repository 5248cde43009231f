use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::lm::TokenId;

/// N-gram orders entering the diversity product.
pub const DIVERSITY_ORDERS: [usize; 3] = [2, 3, 4];

/// `100 * (1 - unique / total)` over contiguous n-grams, or `None` when the
/// text has fewer than `n` tokens.
pub fn rep_n(text: &[TokenId], n: usize) -> Option<f64> {
    if n == 0 || text.len() < n {
        return None;
    }
    let total = text.len() - n + 1;
    let unique: HashSet<&[TokenId]> = text.windows(n).collect();
    Some(100.0 * (1.0 - unique.len() as f64 / total as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rep_2: Option<f64>,
    pub rep_3: Option<f64>,
    pub rep_4: Option<f64>,
    /// `prod (1 - rep_n / 100)` in `[0, 1]`; absent for texts shorter than 4 tokens.
    pub diversity: Option<f64>,
    /// Set when some rep-n is undefined and the text is left out of corpus means.
    pub flagged: bool,
}

pub fn diversity(text: &[TokenId]) -> DiversityReport {
    let [rep_2, rep_3, rep_4] = DIVERSITY_ORDERS.map(|n| rep_n(text, n));
    let diversity = match (rep_2, rep_3, rep_4) {
        (Some(a), Some(b), Some(c)) => {
            Some((1.0 - a / 100.0) * (1.0 - b / 100.0) * (1.0 - c / 100.0))
        }
        _ => None,
    };
    DiversityReport {
        rep_2,
        rep_3,
        rep_4,
        diversity,
        flagged: diversity.is_none(),
    }
}

/// Unweighted mean over texts with a defined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDiversity {
    pub rep_2: Option<f64>,
    pub rep_3: Option<f64>,
    pub rep_4: Option<f64>,
    pub diversity: Option<f64>,
    pub diversity_percent: Option<f64>,
    pub counted: usize,
    pub excluded: usize,
}

pub fn corpus_diversity<'a>(
    reports: impl IntoIterator<Item = &'a DiversityReport>,
) -> CorpusDiversity {
    let reports: Vec<&DiversityReport> = reports.into_iter().collect();
    let mean = |f: &dyn Fn(&DiversityReport) -> Option<f64>| {
        let vals: Vec<f64> = reports
            .iter()
            .filter(|r| !r.flagged)
            .filter_map(|r| f(r))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let diversity = mean(&|r| r.diversity);
    let excluded = reports.iter().filter(|r| r.flagged).count();
    CorpusDiversity {
        rep_2: mean(&|r| r.rep_2),
        rep_3: mean(&|r| r.rep_3),
        rep_4: mean(&|r| r.rep_4),
        diversity,
        diversity_percent: diversity.map(|d| 100.0 * d),
        counted: reports.len() - excluded,
        excluded,
    }
}
