//! Confusion-matrix metrics and the CPU-hour cost model.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, class: crate::types::ConfusionClass) {
        use crate::types::ConfusionClass::*;
        match class {
            Tp => self.tp += 1,
            Fp => self.fp += 1,
            Fn => self.fn_ += 1,
            Tn => self.tn += 1,
        }
    }

    pub fn metrics(&self) -> Metrics {
        compute_metrics(self.tp, self.fp, self.fn_, self.tn)
    }
}

/// Undefined ratios are reported as 0 with the matching flag set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy_undefined: bool,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(tp: u64, fp: u64, fn_: u64, tn: u64) -> Metrics {
    let (accuracy, accuracy_undefined) = ratio(tp + tn, tp + tn + fp + fn_);
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        accuracy_undefined,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    /// USD per CPU-hour on the provisioned cluster.
    pub provisioned_rate: f64,
    /// USD per CPU-hour on serverless capacity.
    pub serverless_rate: f64,
    /// Free serverless CPU-hours per day.
    pub free_serverless_allowance: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            provisioned_rate: 0.3,
            serverless_rate: 0.5,
            free_serverless_allowance: 2000.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.provisioned_rate.is_finite()
            && self.provisioned_rate > 0.0
            && self.serverless_rate.is_finite()
            && self.serverless_rate > 0.0
            && self.free_serverless_allowance.is_finite()
            && self.free_serverless_allowance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "cost model rates must be positive, allowance nonnegative".into(),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub fn_wasted_cpu_h: f64,
    pub fp_serverless_cpu_h: f64,
    pub tp_serverless_cpu_h: f64,
    pub monetary_cost_usd: f64,
}

impl CostBreakdown {
    pub fn serverless_cpu_h(&self) -> f64 {
        self.tp_serverless_cpu_h + self.fp_serverless_cpu_h
    }
}

/// CPU seconds summed per confusion class, converted to hours and billed.
pub fn compute_cost(
    fn_cpu_s: f64,
    tp_cpu_s: f64,
    fp_cpu_s: f64,
    model: &CostModel,
) -> CostBreakdown {
    let fn_wasted_cpu_h = fn_cpu_s / 3600.0;
    let tp_serverless_cpu_h = tp_cpu_s / 3600.0;
    let fp_serverless_cpu_h = fp_cpu_s / 3600.0;
    let billable =
        (tp_serverless_cpu_h + fp_serverless_cpu_h - model.free_serverless_allowance).max(0.0);
    CostBreakdown {
        fn_wasted_cpu_h,
        fp_serverless_cpu_h,
        tp_serverless_cpu_h,
        monetary_cost_usd: fn_wasted_cpu_h * model.provisioned_rate
            + billable * model.serverless_rate,
    }
}
