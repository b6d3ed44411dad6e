use std::fmt::Write as _;

use super::run::ReportRow;
use crate::agent::Mode;
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str =
    "mode,checkpoint_epoch,seeds,start_distance_m,end_distance_m,difference_m,mean_reward,reward_ratio";

/// Seed-averaged distances at a mode's final checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub checkpoint_epoch: usize,
    pub seeds: usize,
    pub start_distance_m: f64,
    pub end_distance_m: f64,
    pub difference_m: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub modes: Vec<ModeSummary>,
    /// Semi-supervised mean reward over supervised mean reward, when both
    /// modes are present.
    pub reward_ratio: Option<f64>,
}

impl Summary {
    pub fn get(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let ratio = self.reward_ratio.map_or(String::new(), |r| format!("{r:.6}"));
        let mut s = format!("{SUMMARY_HEADER}\n");
        for m in &self.modes {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                m.mode,
                m.checkpoint_epoch,
                m.seeds,
                m.start_distance_m,
                m.end_distance_m,
                m.difference_m,
                m.mean_reward,
                ratio
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
            "mode", "epoch", "seeds", "start_m", "end_m", "diff_m", "reward"
        );
        for m in &self.modes {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                m.mode.as_str(),
                m.checkpoint_epoch,
                m.seeds,
                m.start_distance_m,
                m.end_distance_m,
                m.difference_m,
                m.mean_reward
            );
        }
        match self.reward_ratio {
            Some(r) => {
                let _ = writeln!(s, "reward ratio (semi/supervised): {r:.3}");
            }
            None => s.push_str("reward ratio (semi/supervised): n/a\n"),
        }
        s
    }
}

/// Per mode, averages the rows at that mode's last checkpoint over seeds.
pub fn summarize(rows: &[ReportRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot summarize an empty report"));
    }
    let mut modes = Vec::new();
    for mode in Mode::ALL {
        let Some(last) = rows.iter().filter(|r| r.mode == mode).map(|r| r.checkpoint_epoch).max() else {
            continue;
        };
        let sel: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| r.mode == mode && r.checkpoint_epoch == last)
            .collect();
        let n = sel.len() as f64;
        let mean = |f: fn(&ReportRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
        let start = mean(|r| r.start_distance_m);
        let end = mean(|r| r.end_distance_m);
        modes.push(ModeSummary {
            mode,
            checkpoint_epoch: last,
            seeds: sel.len(),
            start_distance_m: start,
            end_distance_m: end,
            difference_m: start - end,
            mean_reward: mean(|r| r.mean_reward),
        });
    }
    let reward = |m: Mode| modes.iter().find(|s| s.mode == m).map(|s| s.mean_reward);
    let reward_ratio = match (reward(Mode::SemiSupervised), reward(Mode::Supervised)) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    };
    Ok(Summary { modes, reward_ratio })
}
