//! Aggregate tables over dyad traces.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{AbstractionLevel, DyadTrace, TrialRecord, REPETITION_BLOCKS};
use crate::error::{Error, Result};
use crate::library_learning::FragmentLevel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfigKey {
    pub w: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl ConfigKey {
    pub fn of(t: &DyadTrace) -> Self {
        ConfigKey {
            w: t.config.w,
            beta: t.config.beta,
            alpha: t.config.alpha,
        }
    }

    fn same(&self, other: &ConfigKey) -> bool {
        self.w.to_bits() == other.w.to_bits()
            && self.beta.to_bits() == other.beta.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
    }
}

/// Traces grouped by (w, beta, alpha) in order of first appearance.
pub fn group_by_config(traces: &[DyadTrace]) -> Vec<(ConfigKey, Vec<&DyadTrace>)> {
    let mut groups: Vec<(ConfigKey, Vec<&DyadTrace>)> = Vec::new();
    for t in traces {
        let key = ConfigKey::of(t);
        match groups.iter_mut().find(|(k, _)| k.same(&key)) {
            Some((_, members)) => members.push(t),
            None => groups.push((key, vec![t])),
        }
    }
    groups
}

/// Traces grouped by w alone.
pub fn group_by_w(traces: &[DyadTrace]) -> Vec<(f64, Vec<&DyadTrace>)> {
    let mut groups: Vec<(f64, Vec<&DyadTrace>)> = Vec::new();
    for t in traces {
        match groups.iter_mut().find(|(w, _)| w.to_bits() == t.config.w.to_bits()) {
            Some((_, members)) => members.push(t),
            None => groups.push((t.config.w, vec![t])),
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub trial: usize,
    pub sub_tower: f64,
    pub tower: f64,
    pub scene: f64,
    pub other: f64,
    pub n_traces: usize,
}

impl TrajectoryRow {
    pub fn get(&self, level: FragmentLevel) -> f64 {
        match level {
            FragmentLevel::SubTower => self.sub_tower,
            FragmentLevel::Tower => self.tower,
            FragmentLevel::Scene => self.scene,
            FragmentLevel::Other => self.other,
        }
    }
}

/// Share of library fragments at each level after each trial, averaged
/// over traces. Row 0 is the empty starting library.
pub fn fragment_trajectory<'a>(traces: impl IntoIterator<Item = &'a DyadTrace>) -> Vec<TrajectoryRow> {
    let traces: Vec<&DyadTrace> = traces.into_iter().collect();
    let n_trials = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(n_trials + 1);
    for trial in 0..=n_trials {
        let mut sums = [0.0f64; 4];
        for t in &traces {
            if trial == 0 {
                continue;
            }
            let Some(rec) = t.records.get(trial - 1) else { continue };
            if rec.library.is_empty() {
                continue;
            }
            let n = rec.library.len() as f64;
            for id in &rec.library {
                let level = t.level_of(*id).unwrap_or(FragmentLevel::Other);
                sums[level as usize] += 1.0 / n;
            }
        }
        let k = traces.len().max(1) as f64;
        rows.push(TrajectoryRow {
            trial,
            sub_tower: sums[0] / k,
            tower: sums[1] / k,
            scene: sums[2] / k,
            other: sums[3] / k,
            n_traces: traces.len(),
        });
    }
    rows
}

/// First trial (1-based) after which the library holds a fragment of `level`.
pub fn first_adoption(trace: &DyadTrace, level: FragmentLevel) -> Option<usize> {
    trace
        .final_library
        .iter()
        .filter(|e| e.level == level)
        .map(|e| e.adopted_trial)
        .min()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProportionRow {
    pub repetition_block: usize,
    pub block: f64,
    pub sub_tower: f64,
    pub tower: f64,
    pub scene: f64,
    pub other: f64,
    pub n_traces: usize,
}

impl ProportionRow {
    pub fn get(&self, level: AbstractionLevel) -> f64 {
        match level {
            AbstractionLevel::Block => self.block,
            AbstractionLevel::SubTower => self.sub_tower,
            AbstractionLevel::Tower => self.tower,
            AbstractionLevel::Scene => self.scene,
            AbstractionLevel::Other => self.other,
        }
    }

    /// Share of placements produced by any learned chunk.
    pub fn abstraction(&self) -> f64 {
        1.0 - self.block
    }
}

fn in_block(t: &DyadTrace, block: usize) -> impl Iterator<Item = &TrialRecord> {
    t.records.iter().filter(move |r| r.repetition_block == block)
}

/// Per repetition block, the share of intended block placements issued at
/// each level, averaged over dyads. Moves carry no placements.
pub fn abstraction_proportions<'a>(traces: impl IntoIterator<Item = &'a DyadTrace>) -> Vec<ProportionRow> {
    let traces: Vec<&DyadTrace> = traces.into_iter().collect();
    (1..=REPETITION_BLOCKS)
        .map(|block| {
            let mut sums = [0.0f64; 5];
            let mut n = 0usize;
            for t in &traces {
                let mut counts = [0usize; 5];
                for r in in_block(t, block) {
                    for (c, x) in counts.iter_mut().zip(r.placements_by_level) {
                        *c += x;
                    }
                }
                let total: usize = counts.iter().sum();
                if total == 0 {
                    continue;
                }
                n += 1;
                for (s, c) in sums.iter_mut().zip(counts) {
                    *s += c as f64 / total as f64;
                }
            }
            let k = n.max(1) as f64;
            ProportionRow {
                repetition_block: block,
                block: sums[0] / k,
                sub_tower: sums[1] / k,
                tower: sums[2] / k,
                scene: sums[3] / k,
                other: sums[4] / k,
                n_traces: n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub repetition_block: usize,
    pub mean_f1: f64,
    pub mean_tokens_sent: f64,
    pub n_traces: usize,
}

pub fn accuracy_and_efficiency<'a>(traces: impl IntoIterator<Item = &'a DyadTrace>) -> Vec<AccuracyRow> {
    let traces: Vec<&DyadTrace> = traces.into_iter().collect();
    (1..=REPETITION_BLOCKS)
        .map(|block| {
            let (mut f1, mut tokens, mut n) = (0.0, 0.0, 0usize);
            for t in &traces {
                let recs: Vec<&TrialRecord> = in_block(t, block).collect();
                if recs.is_empty() {
                    continue;
                }
                let k = recs.len() as f64;
                f1 += recs.iter().map(|r| r.f1).sum::<f64>() / k;
                tokens += recs.iter().map(|r| r.tokens_sent as f64).sum::<f64>() / k;
                n += 1;
            }
            let k = n.max(1) as f64;
            AccuracyRow {
                repetition_block: block,
                mean_f1: f1 / k,
                mean_tokens_sent: tokens / k,
                n_traces: n,
            }
        })
        .collect()
}

fn normalized(p: &[f64], len: usize) -> Result<Vec<f64>> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Unnormalizable("negative or non-finite mass".into()));
    }
    let z: f64 = p.iter().sum();
    if z <= 0.0 {
        return Err(Error::Unnormalizable("zero total mass".into()));
    }
    let mut out: Vec<f64> = p.iter().map(|x| x / z).collect();
    out.resize(len, 0.0);
    Ok(out)
}

/// Jensen-Shannon divergence in bits. Inputs are normalized first; the
/// shorter one is zero-extended.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    let n = p.len().max(q.len());
    let p = normalized(p, n)?;
    let q = normalized(q, n)?;
    let mut d = 0.0;
    for (a, b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            d += 0.5 * a * (a / m).log2();
        }
        if *b > 0.0 {
            d += 0.5 * b * (b / m).log2();
        }
    }
    Ok(d.clamp(0.0, 1.0))
}

/// JSD between two word-frequency maps over their union vocabulary.
pub fn jsd_maps(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> Result<f64> {
    let vocab: Vec<&String> = {
        let mut v: Vec<&String> = p.keys().chain(q.keys()).collect();
        v.sort();
        v.dedup();
        v
    };
    let pv: Vec<f64> = vocab.iter().map(|w| p.get(*w).copied().unwrap_or(0.0)).collect();
    let qv: Vec<f64> = vocab.iter().map(|w| q.get(*w).copied().unwrap_or(0.0)).collect();
    jsd(&pv, &qv)
}

pub fn word_frequencies<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for r in records {
        for w in &r.utterance {
            *counts.entry(w.surface.clone()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JsdRow {
    pub repetition_block: usize,
    pub mean_jsd: f64,
    pub pairs: usize,
}

/// Mean JSD between the word distributions of every pair of dyads, per block.
pub fn pairwise_jsd<'a>(traces: impl IntoIterator<Item = &'a DyadTrace>) -> Result<Vec<JsdRow>> {
    let traces: Vec<&DyadTrace> = traces.into_iter().collect();
    (1..=REPETITION_BLOCKS)
        .map(|block| {
            let dists: Vec<BTreeMap<String, f64>> = traces
                .iter()
                .map(|t| word_frequencies(in_block(t, block)))
                .filter(|d| !d.is_empty())
                .collect();
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..dists.len() {
                for j in i + 1..dists.len() {
                    total += jsd_maps(&dists[i], &dists[j])?;
                    pairs += 1;
                }
            }
            Ok(JsdRow {
                repetition_block: block,
                mean_jsd: if pairs == 0 { 0.0 } else { total / pairs as f64 },
                pairs,
            })
        })
        .collect()
}

fn csv_string<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn abstraction_csv(traces: &[DyadTrace]) -> Result<String> {
    csv_string(
        &["w", "beta", "alpha", "repetition_block", "block", "sub_tower", "tower", "scene", "other", "n_traces"],
        |out| {
            for (key, group) in group_by_config(traces) {
                for r in abstraction_proportions(group) {
                    out.write_record([
                        key.w.to_string(),
                        key.beta.to_string(),
                        key.alpha.to_string(),
                        r.repetition_block.to_string(),
                        r.block.to_string(),
                        r.sub_tower.to_string(),
                        r.tower.to_string(),
                        r.scene.to_string(),
                        r.other.to_string(),
                        r.n_traces.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn accuracy_csv(traces: &[DyadTrace]) -> Result<String> {
    csv_string(
        &["w", "beta", "alpha", "repetition_block", "mean_f1", "mean_tokens_sent", "n_traces"],
        |out| {
            for (key, group) in group_by_config(traces) {
                for r in accuracy_and_efficiency(group) {
                    out.write_record([
                        key.w.to_string(),
                        key.beta.to_string(),
                        key.alpha.to_string(),
                        r.repetition_block.to_string(),
                        r.mean_f1.to_string(),
                        r.mean_tokens_sent.to_string(),
                        r.n_traces.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn trajectory_csv(traces: &[DyadTrace]) -> Result<String> {
    csv_string(
        &["w", "trial", "sub_tower", "tower", "scene", "other", "n_traces"],
        |out| {
            for (w, group) in group_by_w(traces) {
                for r in fragment_trajectory(group) {
                    out.write_record([
                        w.to_string(),
                        r.trial.to_string(),
                        r.sub_tower.to_string(),
                        r.tower.to_string(),
                        r.scene.to_string(),
                        r.other.to_string(),
                        r.n_traces.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn jsd_csv(traces: &[DyadTrace]) -> Result<String> {
    csv_string(&["w", "beta", "alpha", "repetition_block", "mean_jsd", "pairs"], |out| {
        for (key, group) in group_by_config(traces) {
            for r in pairwise_jsd(group)? {
                out.write_record([
                    key.w.to_string(),
                    key.beta.to_string(),
                    key.alpha.to_string(),
                    r.repetition_block.to_string(),
                    r.mean_jsd.to_string(),
                    r.pairs.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((jsd(&[1.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(jsd(&[0.0, 0.0], &[1.0]).is_err());
        assert!(jsd(&[-1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn jsd_on_maps() {
        let p: BTreeMap<String, f64> = [("h".to_string(), 2.0)].into();
        let q: BTreeMap<String, f64> = [("v".to_string(), 5.0)].into();
        assert!((jsd_maps(&p, &q).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(jsd_maps(&p, &p).unwrap(), 0.0);
    }
}
