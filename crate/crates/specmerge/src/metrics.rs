//! Evaluation metrics for one continual run: per-step accumulated accuracy,
//! its plain and class-count-weighted averages, and accuracy grouped by task
//! size.
//!
//! The weighted average uses `w_t = (sum_{i<=t} |C_i|) / ((C*t)/T)`, which
//! up-weights late steps where many classes have accumulated; with equal
//! splits every weight is 1 and it reduces to the plain average.

use crate::error::{Error, Result};
use crate::stream::StreamProtocol;
use std::collections::BTreeMap;

/// Correct/total counts for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTally {
    pub correct: usize,
    pub total: usize,
}

/// Evaluation snapshot after one incremental step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_index: usize,
    pub accumulated_class_count: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<usize, ClassTally>,
}

/// Accuracy per task-size tier; `None` marks a tier with no steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAccuracies {
    pub large: Option<f64>,
    pub middle: Option<f64>,
    pub small: Option<f64>,
}

/// The full metric suite of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<StepRecord>,
    pub a_final: f64,
    pub a_bar: f64,
    pub wa_bar: f64,
    pub groups: GroupAccuracies,
}

/// Fraction of correct predictions plus per-class tallies.
pub fn step_accuracy(
    predictions: &[(usize, usize)],
) -> Result<(f64, BTreeMap<usize, ClassTally>)> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput { what: "predictions" });
    }
    let mut per_class: BTreeMap<usize, ClassTally> = BTreeMap::new();
    let mut correct = 0usize;
    for (pred, truth) in predictions {
        let tally = per_class.entry(*truth).or_default();
        tally.total += 1;
        if pred == truth {
            tally.correct += 1;
            correct += 1;
        }
    }
    Ok((correct as f64 / predictions.len() as f64, per_class))
}

/// Arithmetic mean of the per-step accuracies.
pub fn average_accuracy(records: &[StepRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput { what: "records" });
    }
    Ok(records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64)
}

/// Weighted average with `w_t = (sum_{i<=t} |C_i|) / ((C*t)/T)`.
pub fn weighted_average_accuracy(records: &[StepRecord], class_counts: &[usize]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput { what: "records" });
    }
    if records.len() != class_counts.len() {
        return Err(Error::LengthMismatch {
            op: "weighted_average_accuracy",
            expected: records.len(),
            got: class_counts.len(),
        });
    }
    let total: usize = class_counts.iter().sum();
    if total == 0 || class_counts.contains(&0) {
        return Err(Error::EmptyInput {
            what: "per-step class counts",
        });
    }
    let t_steps = records.len() as f64;
    let c = total as f64;
    let mut accum = 0usize;
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, (rec, count)) in records.iter().zip(class_counts).enumerate() {
        accum += count;
        let t = (idx + 1) as f64;
        let w = accum as f64 / (c * t / t_steps);
        num += w * rec.accuracy;
        den += w;
    }
    Ok(num / den)
}

/// Tier assignment per step: steps ranked by class count (descending, ties by
/// step order) are cut into thirds; the top third is `large`, the bottom
/// third `small`, the remainder `middle`, so boundary ties land in the
/// larger tier. Fewer than three steps leaves the unfilled tiers empty.
fn tier_of_steps(protocol: &StreamProtocol) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let t = protocol.num_steps;
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|a, b| {
        protocol.steps[*b]
            .class_ids
            .len()
            .cmp(&protocol.steps[*a].class_ids.len())
            .then(a.cmp(b))
    });
    let third = t / 3;
    let (mut large, mut middle, mut small) = (Vec::new(), Vec::new(), Vec::new());
    for (rank, step) in order.into_iter().enumerate() {
        if rank < third {
            large.push(step);
        } else if rank >= t - third {
            small.push(step);
        } else {
            middle.push(step);
        }
    }
    (large, middle, small)
}

/// Accuracy over all classes of each task-size tier, computed from the
/// final-step per-class tallies.
pub fn group_by_task_size(
    final_tallies: &BTreeMap<usize, ClassTally>,
    protocol: &StreamProtocol,
) -> Result<GroupAccuracies> {
    for step in &protocol.steps {
        for c in &step.class_ids {
            if !final_tallies.contains_key(c) {
                return Err(Error::UnknownLabel { label: *c });
            }
        }
    }
    let (large, middle, small) = tier_of_steps(protocol);
    let tier_accuracy = |steps: &[usize]| -> Option<f64> {
        if steps.is_empty() {
            return None;
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for s in steps {
            for c in &protocol.steps[*s].class_ids {
                let tally = final_tallies[c];
                correct += tally.correct;
                total += tally.total;
            }
        }
        Some(correct as f64 / total as f64)
    };
    Ok(GroupAccuracies {
        large: tier_accuracy(&large),
        middle: tier_accuracy(&middle),
        small: tier_accuracy(&small),
    })
}

/// Assembles the report: final accuracy, averages, and tier grouping.
pub fn build_report(records: Vec<StepRecord>, protocol: &StreamProtocol) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput { what: "records" });
    }
    let class_counts = protocol.step_sizes();
    let a_final = records.last().unwrap().accuracy;
    let a_bar = average_accuracy(&records)?;
    let wa_bar = weighted_average_accuracy(&records, &class_counts)?;
    let groups = group_by_task_size(&records.last().unwrap().per_class, protocol)?;
    Ok(MetricsReport {
        records,
        a_final,
        a_bar,
        wa_bar,
        groups,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "na".to_string(),
    }
}

/// Renders the metrics CSV: `step,acc,accum_classes` rows followed by the
/// summary block `A_T,Abar,wAbar,large,middle,small`.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("step,acc,accum_classes\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{:.6},{}\n",
            r.step_index, r.accuracy, r.accumulated_class_count
        ));
    }
    out.push_str("A_T,Abar,wAbar,large,middle,small\n");
    out.push_str(&format!(
        "{:.6},{:.6},{:.6},{},{},{}\n",
        report.a_final,
        report.a_bar,
        report.wa_bar,
        fmt_opt(report.groups.large),
        fmt_opt(report.groups.middle),
        fmt_opt(report.groups.small),
    ));
    out
}
