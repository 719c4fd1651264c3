//! Text model files.
//!
//! ```text
//! UWBNLOS-DENSITY
//! version=1
//! dims=4
//! smoothing=interpolated
//! ...                      (key=value header, floats in shortest round-trip form)
//! end_header
//!   1.2345678901234567e+26 (one cell per line, LOS grid then NLOS grid)
//! ```
//!
//! Axes are written as `lower,width,bins` joined by `;`. Fitted components
//! store their parameters in the header and have no cells.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{
    Axis, DensityModel, FeatureDensity, FittedNlos, Gaussian, HistogramGrid, NlosDensity, Parameterization,
    Smoothing,
};
use crate::config::KvConfig;
use crate::error::{parse_err, Error, Location, Result};
use crate::features::FeatureModelParams;

pub const MODEL_MAGIC: &str = "UWBNLOS-DENSITY";
pub const MODEL_VERSION: u32 = 1;

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn axes_line(axes: &[Axis]) -> String {
    axes.iter()
        .map(|a| format!("{:?},{:?},{}", a.lower, a.width, a.bins))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_model<W: Write>(mut out: W, model: &DensityModel) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "version={MODEL_VERSION}")?;
    writeln!(out, "dims={}", model.dims())?;
    writeln!(out, "smoothing={}", model.smoothing())?;
    writeln!(out, "parameterization={}", model.parameterization())?;
    writeln!(out, "p_los={:?}", model.p_los())?;
    writeln!(out, "floor={:?}", model.floor())?;
    writeln!(out, "wall_delay={:?}", model.wall_delay())?;
    let fp = model.feature_params();
    writeln!(out, "r_max_slope={:?}", fp.r_max_slope)?;
    writeln!(out, "tau_ds_offset={:?}", fp.tau_ds_offset)?;
    let mut cells: Vec<&[f64]> = Vec::new();
    match model.los() {
        FeatureDensity::Grid(g) => {
            writeln!(out, "los=grid")?;
            writeln!(out, "los_axes={}", axes_line(g.axes()))?;
            cells.push(g.density());
        }
        FeatureDensity::Gaussian(g) => {
            writeln!(out, "los=gaussian")?;
            writeln!(out, "los_mean={}", join(g.mean()))?;
            writeln!(out, "los_cov={}", join(&g.covariance()))?;
        }
    }
    match model.nlos() {
        NlosDensity::Grid(g) => {
            writeln!(out, "nlos=grid")?;
            writeln!(out, "nlos_axes={}", axes_line(g.axes()))?;
            cells.push(g.density());
        }
        NlosDensity::Fitted(f) => {
            writeln!(out, "nlos=fitted")?;
            writeln!(out, "nlos_b0={:?}", f.b0)?;
            writeln!(out, "nlos_lambda={:?}", f.lambda)?;
            writeln!(out, "nlos_intercept={}", join(&f.intercept))?;
            writeln!(out, "nlos_slope={}", join(&f.slope))?;
            writeln!(out, "nlos_cov={}", join(&f.residual.covariance()))?;
        }
    }
    writeln!(out, "end_header")?;
    for v in cells.into_iter().flatten() {
        writeln!(out, "{v:>24.16e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &DensityModel) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

fn header_err(msg: impl Into<String>) -> Error {
    parse_err(Location::Header, msg)
}

fn required<T: std::str::FromStr>(kv: &mut KvConfig, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    kv.take(key)?.ok_or_else(|| header_err(format!("missing `{key}`")))
}

fn list(kv: &mut KvConfig, key: &str) -> Result<Vec<f64>> {
    Ok(kv.take_list(key)?.unwrap_or_default())
}

fn parse_axes(kv: &mut KvConfig, key: &str) -> Result<Vec<Axis>> {
    let text: String = kv.take(key)?.unwrap_or_default();
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|spec| {
            let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
            let bad = || header_err(format!("malformed axis `{spec}` in `{key}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lower = parts[0].parse().map_err(|_| bad())?;
            let width = parts[1].parse().map_err(|_| bad())?;
            let bins = parts[2].parse().map_err(|_| bad())?;
            Axis::new(lower, width, bins)
        })
        .collect()
}

pub fn read_model<R: Read>(input: R) -> Result<DensityModel> {
    let mut lines = BufReader::new(input).lines();
    let mut next = || lines.next();
    match next().transpose()? {
        Some(l) if l.trim() == MODEL_MAGIC => {}
        _ => return Err(header_err(format!("missing `{MODEL_MAGIC}` magic"))),
    }
    let mut header = String::new();
    loop {
        match next().transpose()? {
            None => return Err(header_err("missing `end_header`")),
            Some(l) if l.trim() == "end_header" => break,
            Some(l) => {
                header.push_str(&l);
                header.push('\n');
            }
        }
    }
    let mut kv = KvConfig::parse(&header)?;
    let version: u32 = required(&mut kv, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            what: "density model",
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let dims: usize = required(&mut kv, "dims")?;
    let smoothing: Smoothing = required(&mut kv, "smoothing")?;
    let parameterization: Parameterization = required(&mut kv, "parameterization")?;
    let p_los: f64 = required(&mut kv, "p_los")?;
    let floor: f64 = required(&mut kv, "floor")?;
    let wall_delay: f64 = required(&mut kv, "wall_delay")?;
    let feature_params = FeatureModelParams {
        r_max_slope: required(&mut kv, "r_max_slope")?,
        tau_ds_offset: required(&mut kv, "tau_ds_offset")?,
    };
    let los_kind: String = required(&mut kv, "los")?;
    let nlos_kind: String = required(&mut kv, "nlos")?;

    let mut cell_start = 0;
    let mut read_cells = |n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let line = next()
                .transpose()?
                .ok_or_else(|| parse_err(Location::Record(cell_start + out.len()), "missing cell value"))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: f64 = t.parse().map_err(|_| {
                parse_err(Location::Record(cell_start + out.len()), format!("invalid cell value `{t}`"))
            })?;
            out.push(v);
        }
        cell_start += n;
        Ok(out)
    };

    let los = match los_kind.as_str() {
        "grid" => {
            let axes = parse_axes(&mut kv, "los_axes")?;
            let n = axes.iter().map(|a| a.bins).product();
            FeatureDensity::Grid(HistogramGrid::new(axes, read_cells(n)?)?)
        }
        "gaussian" => {
            let mean = list(&mut kv, "los_mean")?;
            let cov = list(&mut kv, "los_cov")?;
            FeatureDensity::Gaussian(Gaussian::from_covariance(mean, &cov)?.0)
        }
        other => return Err(header_err(format!("unknown LOS component `{other}`"))),
    };
    let nlos = match nlos_kind.as_str() {
        "grid" => {
            let axes = parse_axes(&mut kv, "nlos_axes")?;
            let n = axes.iter().map(|a| a.bins).product();
            NlosDensity::Grid(HistogramGrid::new(axes, read_cells(n)?)?)
        }
        "fitted" => {
            let b0 = required(&mut kv, "nlos_b0")?;
            let lambda = required(&mut kv, "nlos_lambda")?;
            let intercept = list(&mut kv, "nlos_intercept")?;
            let slope = list(&mut kv, "nlos_slope")?;
            let cov = list(&mut kv, "nlos_cov")?;
            let residual = Gaussian::from_covariance(vec![0.0; intercept.len()], &cov)?.0;
            NlosDensity::Fitted(FittedNlos::new(b0, lambda, intercept, slope, residual)?)
        }
        other => return Err(header_err(format!("unknown NLOS component `{other}`"))),
    };
    kv.finish()?;
    while let Some(line) = next().transpose()? {
        if !line.trim().is_empty() {
            return Err(parse_err(Location::Record(cell_start), "trailing data after the last cell"));
        }
    }
    DensityModel::new(
        dims,
        smoothing,
        parameterization,
        p_los,
        floor,
        wall_delay,
        feature_params,
        los,
        nlos,
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DensityModel> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::tests::corpus_samples;
    use super::super::{build_model, ModelSpec};
    use super::*;

    #[test]
    fn round_trip_preserves_every_variant() {
        let (samples, wall) = corpus_samples();
        for dims in [2, 4] {
            for smoothing in [Smoothing::Raw, Smoothing::Interpolated, Smoothing::Fitted] {
                let spec = ModelSpec::new(dims, smoothing, Parameterization::DistanceFree, wall);
                let (m, _) = build_model(&samples, &spec).unwrap();
                let mut buf = Vec::new();
                write_model(&mut buf, &m).unwrap();
                let back = read_model(&buf[..]).unwrap();
                assert_eq!(back.dims(), m.dims());
                assert_eq!(back.feature_params(), m.feature_params());
                match smoothing {
                    // Cells and parameters print in round-trip precision.
                    Smoothing::Fitted => {
                        let s = &samples[3];
                        let x = m.model_features(&s.features, s.distance).unwrap();
                        let a = m.evaluate_likelihood(2e-9, &x, 1e-9).unwrap();
                        let b = back.evaluate_likelihood(2e-9, &x, 1e-9).unwrap();
                        assert!((a - b).abs() <= 1e-12 * a.abs());
                    }
                    _ => assert_eq!(back, m),
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_model(&b"nope\n"[..]), Err(Error::Parse { .. })));
        let (samples, wall) = corpus_samples();
        let spec = ModelSpec::new(2, Smoothing::Raw, Parameterization::DistanceDependent, wall);
        let (m, _) = build_model(&samples, &spec).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v2 = text.replace("version=1", "version=2");
        assert!(matches!(read_model(v2.as_bytes()), Err(Error::Version { found: 2, .. })));
        let truncated: String = text.lines().take(text.lines().count() - 5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_model(truncated.as_bytes()),
            Err(Error::Parse { location: Location::Record(_), .. })
        ));
    }
}
