//! File formats: pattern CSV, run configuration JSON and atomic writes.
//!
//! A pattern file is CSV with header `x,y,t`. The window may be declared on
//! a leading comment line:
//!
//! ```text
//! # window: 0,1,0,1,0,1
//! x,y,t
//! 0.25,0.5,0.125
//! ```
//!
//! with the six numbers `x0,x1,y0,y1,t0,t1`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EventPoint, PointPattern, SpacetimeWindow};
use crate::inference::{FitMethod, FitOptions, IrregularParams};
use crate::model::{GeyerModel, ScaleShape, TrendFunction};
use crate::quadrature::{GridSpec, QuadratureGrid};
use crate::simulate::{InitialState, McmcConfig};
use crate::study::StudyConfig;

const WINDOW_PREFIX: &str = "# window:";

pub fn write_pattern_csv<W: Write>(pattern: &PointPattern, mut w: W) -> Result<()> {
    let win = pattern.window();
    writeln!(
        w,
        "{WINDOW_PREFIX} {},{},{},{},{},{}",
        win.x[0], win.x[1], win.y[0], win.y[1], win.t[0], win.t[1]
    )?;
    writeln!(w, "x,y,t")?;
    for p in pattern.points() {
        writeln!(w, "{},{},{}", p.x, p.y, p.t)?;
    }
    Ok(())
}

pub fn pattern_csv_string(pattern: &PointPattern) -> String {
    let mut buf = Vec::new();
    write_pattern_csv(pattern, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn parse_window(line: usize, text: &str) -> Result<SpacetimeWindow> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("line {line}: window declaration: {e}")))?;
    if v.len() != 6 {
        return Err(Error::Parse(format!(
            "line {line}: window declaration needs 6 numbers, found {}",
            v.len()
        )));
    }
    SpacetimeWindow::new([v[0], v[1]], [v[2], v[3]], [v[4], v[5]])
        .map_err(|e| Error::Validation(format!("line {line}: {e}")))
}

/// Parses a pattern file. The declared window wins over `fallback`; one of
/// them must be present.
pub fn parse_pattern_csv(text: &str, fallback: Option<SpacetimeWindow>) -> Result<PointPattern> {
    let mut window = None;
    let mut header_seen = false;
    let mut points = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix(WINDOW_PREFIX) {
            if header_seen || window.is_some() {
                return Err(Error::Parse(format!("line {line}: unexpected window declaration")));
            }
            window = Some(parse_window(line, rest)?);
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = l.split(',').map(str::trim).collect();
            if cols != ["x", "y", "t"] {
                return Err(Error::Parse(format!("line {line}: expected header x,y,t, found {l:?}")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "line {line}: expected 3 fields, found {}",
                fields.len()
            )));
        }
        let mut c = [0.0; 3];
        for (i, f) in fields.iter().enumerate() {
            c[i] = f
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: {f:?} is not a number")))?;
            if !c[i].is_finite() {
                return Err(Error::Parse(format!("line {line}: {f:?} is not finite")));
            }
        }
        points.push((line, EventPoint::new(c[0], c[1], c[2])));
    }
    if !header_seen {
        return Err(Error::Parse("missing header x,y,t".into()));
    }
    let window = window.or(fallback).ok_or_else(|| {
        Error::Validation("pattern file declares no window and none was configured".into())
    })?;
    if let Some((line, p)) = points.iter().find(|(_, p)| !window.contains(p)) {
        return Err(Error::Validation(format!(
            "line {line}: point ({}, {}, {}) lies outside the window",
            p.x, p.y, p.t
        )));
    }
    PointPattern::new(window, points.into_iter().map(|(_, p)| p).collect())
}

pub fn read_pattern_csv(path: &Path, fallback: Option<SpacetimeWindow>) -> Result<PointPattern> {
    let text = fs::read_to_string(path)?;
    parse_pattern_csv(&text, fallback)
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} is not a file path", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp.{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::from)
}

/// Refuses to clobber existing outputs unless `overwrite` is set.
pub fn check_outputs(paths: &[PathBuf], overwrite: bool) -> Result<()> {
    if overwrite {
        return Ok(());
    }
    let existing: Vec<String> = paths
        .iter()
        .filter(|p| p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "refusing to overwrite existing output ({}); pass --overwrite",
            existing.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub method: FitMethod,
    /// Defaults to the shapes of `model`.
    #[serde(default)]
    pub irregular: Option<Vec<ScaleShape>>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Logistic dummy intensity; defaults to `4 n / |W|`.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Seed of the logistic dummy points.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub options: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub candidates: Vec<IrregularParams>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub options: FitOptions,
}

fn default_true() -> bool {
    true
}

fn default_rho_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub name: String,
    pub n_replicates: usize,
    pub methods: Vec<FitMethod>,
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_rho_factor")]
    pub rho_factor: f64,
    #[serde(default)]
    pub options: FitOptions,
    #[serde(default = "default_true")]
    pub svg: bool,
}

fn default_gnz_patterns() -> usize {
    200
}

fn default_gnz_grid() -> QuadratureGrid {
    QuadratureGrid {
        nx: 20,
        ny: 20,
        nt: 20,
        dummy_per_cell: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnzSection {
    #[serde(default = "default_gnz_patterns")]
    pub n_patterns: usize,
    #[serde(default = "default_gnz_grid")]
    pub grid: QuadratureGrid,
    #[serde(default)]
    pub master_seed: u64,
    /// Model whose conditional intensity enters the residual; defaults to
    /// the simulation model.
    #[serde(default)]
    pub eval_model: Option<GeyerModel>,
}

/// Top-level configuration shared by all commands. Each command requires
/// the sections it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<GeyerModel>,
    #[serde(default)]
    pub mcmc: Option<McmcConfig>,
    #[serde(default)]
    pub fit: Option<FitSection>,
    #[serde(default)]
    pub profile: Option<ProfileSection>,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub gnz: Option<GnzSection>,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{path}: {msg}"))
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite (got {v})")))
    }
}

fn check_nonneg(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be non-negative and finite (got {v})")))
    }
}

fn validate_window(path: &str, w: &SpacetimeWindow) -> Result<()> {
    for (name, iv) in [("x", w.x), ("y", w.y), ("t", w.t)] {
        if !(iv[0].is_finite() && iv[1].is_finite() && iv[0] < iv[1]) {
            return Err(invalid(
                &format!("{path}.{name}"),
                format!("must be a finite interval with low < high (got [{}, {}])", iv[0], iv[1]),
            ));
        }
    }
    Ok(())
}

fn validate_shape(path: &str, s: &ScaleShape) -> Result<()> {
    check_positive(&format!("{path}.r"), s.r)?;
    check_positive(&format!("{path}.q"), s.q)?;
    check_nonneg(&format!("{path}.s"), s.s)
}

fn validate_trend(path: &str, t: &TrendFunction) -> Result<()> {
    check_positive(&format!("{path}.beta"), t.beta())?;
    t.validate().map_err(|e| invalid(path, e))
}

pub fn validate_model(path: &str, m: &GeyerModel) -> Result<()> {
    validate_window(&format!("{path}.window"), &m.window)?;
    validate_trend(&format!("{path}.trend"), &m.trend)?;
    if m.scales.is_empty() {
        return Err(invalid(&format!("{path}.scales"), "needs at least one scale"));
    }
    for (j, s) in m.scales.iter().enumerate() {
        let p = format!("{path}.scales[{j}]");
        check_positive(&format!("{p}.gamma"), s.gamma)?;
        validate_shape(&p, &s.shape())?;
    }
    m.validate().map_err(|e| invalid(path, e))
}

fn validate_mcmc(path: &str, c: &McmcConfig) -> Result<()> {
    if c.n_steps == 0 {
        return Err(invalid(&format!("{path}.n_steps"), "must be positive"));
    }
    if c.burn_in > c.n_steps {
        return Err(invalid(
            &format!("{path}.burn_in"),
            format!("must not exceed n_steps ({} > {})", c.burn_in, c.n_steps),
        ));
    }
    if c.thin == 0 {
        return Err(invalid(&format!("{path}.thin"), "must be positive"));
    }
    if let InitialState::Poisson { rate } = c.initial {
        check_nonneg(&format!("{path}.initial.rate"), rate)?;
    }
    Ok(())
}

fn validate_grid_spec(path: &str, g: &GridSpec) -> Result<()> {
    match g {
        GridSpec::Auto => Ok(()),
        GridSpec::Fixed(q) => validate_grid(path, q),
    }
}

fn validate_grid(path: &str, q: &QuadratureGrid) -> Result<()> {
    for (name, v) in [("nx", q.nx), ("ny", q.ny), ("nt", q.nt), ("dummy_per_cell", q.dummy_per_cell)] {
        if v == 0 {
            return Err(invalid(&format!("{path}.{name}"), "must be positive"));
        }
    }
    Ok(())
}

fn validate_options(path: &str, o: &FitOptions) -> Result<()> {
    check_positive(&format!("{path}.tol"), o.tol)?;
    if o.max_iter == 0 {
        return Err(invalid(&format!("{path}.max_iter"), "must be positive"));
    }
    Ok(())
}

fn validate_methods(path: &str, methods: &[FitMethod]) -> Result<()> {
    if methods.is_empty() {
        return Err(invalid(path, "must list at least one method"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(invalid(&format!("{path}[{i}]"), format!("duplicate method {}", m.as_str())));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses JSON; syntax errors map to [`Error::Parse`], schema errors
    /// (unknown keys, wrong types) to [`Error::Validation`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Validation(format!("config: {e}")),
            _ => Error::Parse(format!("config: {e}")),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every present section and reports the first offending field.
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            validate_model("model", m)?;
        }
        if let Some(c) = &self.mcmc {
            validate_mcmc("mcmc", c)?;
        }
        if let Some(f) = &self.fit {
            if let Some(ir) = &f.irregular {
                for (j, s) in ir.iter().enumerate() {
                    validate_shape(&format!("fit.irregular[{j}]"), s)?;
                }
            }
            validate_grid_spec("fit.grid", &f.grid)?;
            if let Some(rho) = f.rho {
                check_positive("fit.rho", rho)?;
            }
            validate_options("fit.options", &f.options)?;
        }
        if let Some(p) = &self.profile {
            if p.candidates.is_empty() {
                return Err(invalid("profile.candidates", "must not be empty"));
            }
            for (i, c) in p.candidates.iter().enumerate() {
                for (j, s) in c.scales.iter().enumerate() {
                    validate_shape(&format!("profile.candidates[{i}].scales[{j}]"), s)?;
                }
            }
            validate_grid_spec("profile.grid", &p.grid)?;
            validate_options("profile.options", &p.options)?;
        }
        if let Some(s) = &self.study {
            if s.n_replicates == 0 {
                return Err(invalid("study.n_replicates", "must be at least 1"));
            }
            validate_methods("study.methods", &s.methods)?;
            validate_grid_spec("study.grid", &s.grid)?;
            check_positive("study.rho_factor", s.rho_factor)?;
            validate_options("study.options", &s.options)?;
        }
        if let Some(g) = &self.gnz {
            if g.n_patterns < 2 {
                return Err(invalid("gnz.n_patterns", "must be at least 2"));
            }
            validate_grid("gnz.grid", &g.grid)?;
            if let Some(m) = &g.eval_model {
                validate_model("gnz.eval_model", m)?;
                if let Some(base) = &self.model {
                    if base.window != m.window {
                        return Err(invalid("gnz.eval_model.window", "must equal model.window"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn require_model(&self) -> Result<&GeyerModel> {
        self.model.as_ref().ok_or_else(|| invalid("model", "section is required"))
    }

    pub fn require_mcmc(&self) -> Result<&McmcConfig> {
        self.mcmc.as_ref().ok_or_else(|| invalid("mcmc", "section is required"))
    }

    pub fn require_fit(&self) -> Result<&FitSection> {
        self.fit.as_ref().ok_or_else(|| invalid("fit", "section is required"))
    }

    pub fn require_profile(&self) -> Result<&ProfileSection> {
        self.profile.as_ref().ok_or_else(|| invalid("profile", "section is required"))
    }

    pub fn require_gnz(&self) -> Result<&GnzSection> {
        self.gnz.as_ref().ok_or_else(|| invalid("gnz", "section is required"))
    }

    /// Trend factor `μ` used by the fitters.
    pub fn trend_mu(&self) -> TrendFunction {
        self.model
            .as_ref()
            .map(|m| m.trend.clone())
            .unwrap_or_else(|| TrendFunction::constant(1.0))
    }

    /// Irregular parameters for `fit`: explicit ones or the model's.
    pub fn fit_irregular(&self) -> Result<IrregularParams> {
        let f = self.require_fit()?;
        match (&f.irregular, &self.model) {
            (Some(s), _) => IrregularParams::new(s.clone()),
            (None, Some(m)) => Ok(IrregularParams::of_model(m)),
            (None, None) => Err(invalid("fit.irregular", "required when no model section is given")),
        }
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        let s = self.study.as_ref().ok_or_else(|| invalid("study", "section is required"))?;
        Ok(StudyConfig {
            name: s.name.clone(),
            model: self.require_model()?.clone(),
            n_replicates: s.n_replicates,
            mcmc: self.require_mcmc()?.clone(),
            methods: s.methods.clone(),
            master_seed: s.master_seed,
            grid: s.grid,
            rho_factor: s.rho_factor,
            fit: s.options,
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_round_trip() {
        let w = SpacetimeWindow::new([0.0, 2.0], [0.0, 1.0], [-1.0, 1.0]).unwrap();
        let p = PointPattern::new(
            w,
            vec![EventPoint::new(0.1, 0.2, 0.3), EventPoint::new(1.0 / 3.0, 0.7, -0.9)],
        )
        .unwrap();
        let text = pattern_csv_string(&p);
        assert!(text.starts_with("# window: 0,2,0,1,-1,1\nx,y,t\n"));
        let back = parse_pattern_csv(&text, None).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "# window: 0,1,0,1,0,1\nx,y,t\n0.1,0.2,0.3\n0.1,abc,0.3\n";
        match parse_pattern_csv(text, None) {
            Err(Error::Parse(m)) => assert!(m.starts_with("line 4:"), "{m}"),
            other => panic!("{other:?}"),
        }
        match parse_pattern_csv("x,y,t\n0.1,0.2\n", Some(SpacetimeWindow::unit())) {
            Err(Error::Parse(m)) => assert!(m.starts_with("line 2:"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outside_point_is_validation_error() {
        let text = "x,y,t\n0.1,0.2,1.5\n";
        assert!(matches!(
            parse_pattern_csv(text, Some(SpacetimeWindow::unit())),
            Err(Error::Validation(_))
        ));
        assert!(matches!(parse_pattern_csv("x,y,t\n", None), Err(Error::Validation(_))));
    }

    #[test]
    fn fallback_window() {
        let p = parse_pattern_csv("x,y,t\n", Some(SpacetimeWindow::unit())).unwrap();
        assert!(p.is_empty());
    }

    fn model_json(r: f64) -> String {
        format!(
            r#"{{"model": {{"window": {{"x": [0,1], "y": [0,1], "t": [0,1]}},
                "trend": {{"kind": "constant", "beta": 70}},
                "scales": [{{"gamma": 0.5, "r": {r}, "q": 0.05, "s": 1}}]}}}}"#
        )
    }

    #[test]
    fn config_names_offending_field() {
        assert!(RunConfig::from_json(&model_json(0.1)).is_ok());
        match RunConfig::from_json(&model_json(-0.1)) {
            Err(Error::Validation(m)) => assert!(m.starts_with("model.scales[0].r:"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let t = r#"{"model": null, "extra": 1}"#;
        assert!(matches!(RunConfig::from_json(t), Err(Error::Validation(_))));
        let t = model_json(0.1).replace("\"s\": 1", "\"s\": 1, \"z\": 2");
        assert!(matches!(RunConfig::from_json(&t), Err(Error::Validation(_))));
    }

    #[test]
    fn syntax_error_is_parse_error() {
        assert!(matches!(RunConfig::from_json("{\"model\": "), Err(Error::Parse(_))));
    }

    #[test]
    fn grid_spec_json() {
        let g: GridSpec = serde_json::from_str(r#"{"kind": "fixed", "nx": 4, "ny": 4, "nt": 4}"#).unwrap();
        assert_eq!(g, GridSpec::Fixed(QuadratureGrid { nx: 4, ny: 4, nt: 4, dummy_per_cell: 1 }));
        let g: GridSpec = serde_json::from_str(r#"{"kind": "auto"}"#).unwrap();
        assert_eq!(g, GridSpec::Auto);
    }

    #[test]
    fn atomic_write_and_overwrite_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        check_outputs(std::slice::from_ref(&p), false).unwrap();
        atomic_write(&p, b"one").unwrap();
        assert!(check_outputs(std::slice::from_ref(&p), false).is_err());
        check_outputs(std::slice::from_ref(&p), true).unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
