//! Mean absolute error and Pearson correlation.

use crate::error::{Error, Result};

/// Standard deviations below this make Pearson's r undefined.
pub const MIN_STD: f64 = 1e-12;

fn check_lengths(preds: &[f64], golds: &[f64], min: usize) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Alignment(format!(
            "metric inputs differ in length: {} predictions, {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.len() < min {
        return Err(Error::Alignment(format!(
            "metric needs at least {min} pairs, got {}",
            preds.len()
        )));
    }
    Ok(())
}

pub fn mae(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds, golds, 1)?;
    let total: f64 = preds.iter().zip(golds).map(|(p, g)| (p - g).abs()).sum();
    Ok(total / preds.len() as f64)
}

/// Pearson's r by single-pass co-moment updates; `None` when either input is
/// (numerically) constant.
pub fn pearson(preds: &[f64], golds: &[f64]) -> Result<Option<f64>> {
    check_lengths(preds, golds, 2)?;
    let (mut mean_p, mut mean_g) = (0.0, 0.0);
    let (mut m2_p, mut m2_g, mut co) = (0.0, 0.0, 0.0);
    for (i, (&p, &g)) in preds.iter().zip(golds).enumerate() {
        let n = (i + 1) as f64;
        let dp = p - mean_p;
        mean_p += dp / n;
        let dg = g - mean_g;
        mean_g += dg / n;
        m2_p += dp * (p - mean_p);
        m2_g += dg * (g - mean_g);
        co += dp * (g - mean_g);
    }
    let n = preds.len() as f64;
    let (sd_p, sd_g) = ((m2_p / n).sqrt(), (m2_g / n).sqrt());
    if sd_p < MIN_STD || sd_g < MIN_STD {
        return Ok(None);
    }
    Ok(Some((co / (m2_p.sqrt() * m2_g.sqrt())).clamp(-1.0, 1.0)))
}

/// One scored instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub sentence_id: String,
    pub anchor_index: usize,
    pub gold: f64,
    pub pred: f64,
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub pearson_r: Option<f64>,
    pub n: usize,
    pub per_instance: Vec<InstancePrediction>,
}

impl EvalReport {
    pub fn from_predictions(per_instance: Vec<InstancePrediction>) -> Result<Self> {
        let preds: Vec<f64> = per_instance.iter().map(|p| p.pred).collect();
        let golds: Vec<f64> = per_instance.iter().map(|p| p.gold).collect();
        let mae = mae(&preds, &golds)?;
        let pearson_r = if preds.len() >= 2 {
            pearson(&preds, &golds)?
        } else {
            None
        };
        Ok(Self {
            mae,
            pearson_r,
            n: per_instance.len(),
            per_instance,
        })
    }

    /// `r` formatted for reports, `NA` when undefined.
    pub fn r_display(&self) -> String {
        format_r(self.pearson_r)
    }

    /// `sentence_id<TAB>anchor<TAB>gold<TAB>pred<TAB>alpha_1,...,alpha_n` lines.
    pub fn dump(&self) -> String {
        self.per_instance.iter().map(format_dump_line).collect()
    }
}

pub fn format_r(r: Option<f64>) -> String {
    r.map_or_else(|| "NA".to_string(), |r| r.to_string())
}

pub fn format_dump_line(p: &InstancePrediction) -> String {
    let alphas: Vec<String> = p.attention.iter().map(f64::to_string).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\n",
        p.sentence_id,
        p.anchor_index,
        p.gold,
        p.pred,
        alphas.join(",")
    )
}
