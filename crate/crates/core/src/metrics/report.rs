//! Assembling metric values into a report with bit-stable CSV output.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::FieldGrid;
use crate::error::{Error, Result};
use crate::metrics::pointwise::{abs_bias, rmse, GridWeights, WeightingMode};
use crate::metrics::prob::{crps_field, ensemble_spread, ssr};
use crate::metrics::spectrum::{sdiv_from_spectra, sres_from_spectra, power_spectrum};
use crate::metrics::ssim::ms_ssim;
use crate::sampler::EnsembleForecast;

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub variable: String,
    pub lead_hours: i64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub ensemble_size: usize,
    pub weighting: WeightingMode,
}

impl MetricsReport {
    /// Value of one (variable, lead, metric) cell.
    pub fn value(&self, variable: &str, lead_hours: i64, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.lead_hours == lead_hours && r.metric == metric)
            .map(|r| r.value)
    }

    /// Mean of a metric over all variables at one lead.
    pub fn mean_over_variables(&self, lead_hours: i64, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.lead_hours == lead_hours && r.metric == metric && r.value.is_finite())
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn lead_times(&self) -> Vec<i64> {
        let mut leads: Vec<i64> = self.rows.iter().map(|r| r.lead_hours).collect();
        leads.sort_unstable();
        leads.dedup();
        leads
    }

    /// CSV with rows ordered by (variable, lead, metric); fixed float
    /// formatting keeps repeated runs byte-identical.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&MetricRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            (a.variable.as_str(), a.lead_hours, a.metric.as_str())
                .cmp(&(b.variable.as_str(), b.lead_hours, b.metric.as_str()))
        });
        let mut out = String::from("variable,lead_hours,metric,value,ensemble_size\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variable,
                r.lead_hours,
                r.metric,
                format_value(r.value),
                self.ensemble_size
            ));
        }
        out
    }

    /// Arithmetic mean of several reports cell-by-cell (aggregation over
    /// initial conditions). All reports must share ensemble size and
    /// weighting.
    pub fn mean_of(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::Input("cannot average zero reports".into()));
        }
        let mut acc: BTreeMap<(String, i64, String), (f64, usize)> = BTreeMap::new();
        for report in reports {
            for row in &report.rows {
                let entry = acc
                    .entry((row.variable.clone(), row.lead_hours, row.metric.clone()))
                    .or_insert((0.0, 0));
                entry.0 += row.value;
                entry.1 += 1;
            }
        }
        let rows = acc
            .into_iter()
            .map(|((variable, lead_hours, metric), (sum, count))| MetricRow {
                variable,
                lead_hours,
                metric,
                value: sum / count as f64,
            })
            .collect();
        Ok(MetricsReport {
            rows,
            ensemble_size: reports[0].ensemble_size,
            weighting: reports[0].weighting,
        })
    }
}

pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Verify one ensemble forecast against truth fields (one truth frame per
/// lead, same order as `forecast.lead_hours`). Produces RMSE, ABS BIAS,
/// MS-SSIM, SDIV, SRES, CRPS, SSR, and spread per (variable, lead), plus
/// the climatology RMSE baseline when a climatological mean is given.
pub fn evaluate_ensemble(
    forecast: &EnsembleForecast,
    truth: &[FieldGrid],
    climatology_mean: Option<&[f64]>,
    weighting: WeightingMode,
) -> Result<MetricsReport> {
    if truth.len() != forecast.lead_hours.len() {
        return Err(Error::Input(format!(
            "{} truth frames for {} leads",
            truth.len(),
            forecast.lead_hours.len()
        )));
    }
    if forecast.members.is_empty() {
        return Err(Error::Input("forecast has no members".into()));
    }
    let first = &truth[0];
    let (v, h, w) = (first.channels, first.height, first.width);
    let hw = h * w;
    let weights = GridWeights::for_mode(weighting, h, w);
    let m = forecast.members.len();

    let mut rows = Vec::new();
    for (lead_idx, (&lead, truth_frame)) in forecast.lead_hours.iter().zip(truth).enumerate() {
        for c in 0..v {
            let var = &truth_frame.variable_names[c];
            let obs: Vec<f64> = truth_frame.channel(c).iter().map(|&x| x as f64).collect();
            let members: Vec<Vec<f64>> = forecast
                .members
                .iter()
                .map(|mem| mem.fields[lead_idx].channel(c).iter().map(|&x| x as f64).collect())
                .collect();
            let mut mean = vec![0.0f64; hw];
            for mem in &members {
                for (a, &x) in mean.iter_mut().zip(mem) {
                    *a += x / m as f64;
                }
            }

            let mut push = |metric: &str, value: f64| {
                rows.push(MetricRow {
                    variable: var.clone(),
                    lead_hours: lead,
                    metric: metric.to_string(),
                    value,
                });
            };

            push("rmse", rmse(&mean, &obs, &weights)?);
            push("abs_bias", abs_bias(&mean, &obs, &weights)?);
            push("ms_ssim", ms_ssim(&mean, &obs, h, w)?);
            let truth_spec = power_spectrum(&obs, h, w)?;
            // Spectral metrics: mean over members of per-member spectra
            // against the truth spectrum.
            let mut sdiv_acc = 0.0;
            let mut sres_acc = 0.0;
            for mem in &members {
                let ps = power_spectrum(mem, h, w)?;
                sdiv_acc += sdiv_from_spectra(&ps, &truth_spec);
                sres_acc += sres_from_spectra(&ps, &truth_spec);
            }
            push("sdiv", sdiv_acc / m as f64);
            push("sres", sres_acc / m as f64);
            push("crps", crps_field(&members, &obs, &weights)?);
            if m >= 2 {
                let s = ssr(&members, &obs, &weights)?;
                push("ssr", s.unwrap_or(f64::NAN));
                push("spread", ensemble_spread(&members, &weights)?);
            }
            if let Some(clim) = climatology_mean {
                let clim_c: Vec<f64> = clim[c * hw..(c + 1) * hw].to_vec();
                push("climatology_rmse", rmse(&clim_c, &obs, &weights)?);
            }
        }
    }
    Ok(MetricsReport { rows, ensemble_size: m, weighting })
}
