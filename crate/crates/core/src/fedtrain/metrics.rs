//! Per-round training metrics and their CSV form.

use std::io::Write;

use serde::Serialize;

use crate::cnn::{ModelState, Network, ParamSet};
use crate::dataset::{Sample, ShardedDataset};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// One-based.
    pub round: usize,
    pub mode: String,
    pub k_users: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub user_accs: Vec<f64>,
    /// Cumulative over all rounds so far.
    pub uplink_elems: u64,
}

/// Global accuracy on the pooled validation set and accuracy restricted to
/// each user's validation samples.
pub fn validation_accuracy(
    net: &Network,
    params: &ParamSet,
    state: &ModelState,
    dataset: &ShardedDataset,
) -> Result<(f64, Vec<f64>)> {
    let all: Vec<&Sample> = dataset.validation.iter().collect();
    if all.is_empty() {
        return Ok((0.0, vec![0.0; dataset.k_users]));
    }
    let inputs: Vec<&[f64]> = all.iter().map(|s| s.x.as_slice()).collect();
    let predicted = net.predict_many(params, state, &inputs)?;
    let mut hits = vec![0usize; dataset.k_users];
    let mut totals = vec![0usize; dataset.k_users];
    for (p, s) in predicted.iter().zip(&all) {
        let k = s.user_id - 1;
        totals[k] += 1;
        if *p == s.label {
            hits[k] += 1;
        }
    }
    let global = hits.iter().sum::<usize>() as f64 / all.len() as f64;
    let per_user = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok((global, per_user))
}

pub fn csv_header(k_users: usize) -> String {
    let mut cols = vec!["round".to_string(), "mode".into(), "K".into(), "loss".into(), "val_acc".into()];
    cols.extend((1..=k_users).map(|k| format!("user_acc_{k}")));
    cols.push("uplink_elems".into());
    cols.join(",")
}

pub fn csv_row(m: &RoundMetrics) -> String {
    let mut cols = vec![
        m.round.to_string(),
        m.mode.clone(),
        m.k_users.to_string(),
        format!("{:.9}", m.loss),
        format!("{:.6}", m.val_acc),
    ];
    cols.extend(m.user_accs.iter().map(|a| format!("{a:.6}")));
    cols.push(m.uplink_elems.to_string());
    cols.join(",")
}

pub fn write_csv<W: Write>(history: &[RoundMetrics], k_users: usize, mut w: W) -> Result<()> {
    writeln!(w, "{}", csv_header(k_users))?;
    for m in history {
        writeln!(w, "{}", csv_row(m))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = RoundMetrics {
            round: 3,
            mode: "fl".into(),
            k_users: 2,
            loss: 0.5,
            val_acc: 0.25,
            user_accs: vec![0.5, 0.0],
            uplink_elems: 42,
        };
        let mut out = Vec::new();
        write_csv(&[m], 2, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "round,mode,K,loss,val_acc,user_acc_1,user_acc_2,uplink_elems\n\
             3,fl,2,0.500000000,0.250000,0.500000,0.000000,42\n"
        );
    }
}
