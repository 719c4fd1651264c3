//! CSV tables exchanged between subcommands.

use std::io::Write;

use anyhow::{bail, Context, Result};
use uwb_nlos::corpus::ChannelState;
use uwb_nlos::density::TrainingSample;
use uwb_nlos::features::{DistanceFreeFeatures, FeatureVector};

pub const FEATURE_HEADER: &str = "record_id,state,d_m,b_s,r_max,tau_m_s,tau_ds_s2,energy,rise_time_s,kurtosis";
pub const DISTANCE_FREE_HEADER: &str = "r_max0,tau_m_slope,tau_ds_slope";

#[derive(Debug, Clone, Copy)]
pub struct FeatureRow {
    pub record_id: usize,
    pub sample: TrainingSample,
}

pub fn write_feature_rows<W: Write>(
    mut out: W,
    rows: &[FeatureRow],
    distance_free: Option<&[DistanceFreeFeatures]>,
) -> Result<()> {
    write!(out, "{FEATURE_HEADER}")?;
    if distance_free.is_some() {
        write!(out, ",{DISTANCE_FREE_HEADER}")?;
    }
    writeln!(out)?;
    for (i, r) in rows.iter().enumerate() {
        let s = &r.sample;
        write!(out, "{},{},{:?},{:?}", r.record_id, s.state.as_str(), s.distance, s.bias)?;
        for v in s.features.to_array() {
            write!(out, ",{v:?}")?;
        }
        if let Some(df) = distance_free {
            let f = &df[i];
            write!(out, ",{:?},{:?},{:?}", f.r_max0, f.tau_m_slope, f.tau_ds_slope)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a table written by [`write_feature_rows`]; extra columns are ignored.
pub fn read_feature_rows(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.starts_with(FEATURE_HEADER) => {}
        _ => bail!("features table must start with `{FEATURE_HEADER}`"),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() < 10 {
                bail!("line {}: expected at least 10 columns, got {}", i + 1, f.len());
            }
            let num = |k: usize| -> Result<f64> {
                f[k].parse().with_context(|| format!("line {}: bad number `{}`", i + 1, f[k]))
            };
            let mut x = [0.0; 6];
            for (j, v) in x.iter_mut().enumerate() {
                *v = num(4 + j)?;
            }
            Ok(FeatureRow {
                record_id: f[0].parse().with_context(|| format!("line {}: bad record id", i + 1))?,
                sample: TrainingSample {
                    state: f[1].parse::<ChannelState>().with_context(|| format!("line {}", i + 1))?,
                    distance: num(2)?,
                    bias: num(3)?,
                    features: FeatureVector::from_array(x),
                },
            })
        })
        .collect()
}
