//! Plain-text experiment configuration: parsing, validation, canonical
//! serialization. The format is line-oriented `key = value` with `[section]`
//! headers and `#` comments; lists are whitespace- or comma-separated.

use crate::gmm::GaussianMixture;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn validation(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), msg: msg.into() }
}

/// How component means are generated for a (K, d) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeanPlacement {
    /// K vertices of a regular simplex with the given pairwise distance,
    /// embedded in the first K−1 coordinates: the geometry is identical
    /// across ambient dimensions.
    Simplex { separation: f64 },
    /// K means uniform in the radius-R ball, drawn from `placement_seed`.
    RandomBall { radius: f64 },
    /// A fixed mixture loaded from a spec file.
    File { path: String, gmm: GaussianMixture },
}

impl Serialize for GaussianMixture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("GaussianMixture", 3)?;
        st.serialize_field("k", &self.k())?;
        st.serialize_field("d", &self.dim())?;
        st.serialize_field("weights", self.weights())?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSpec {
    pub placement: MeanPlacement,
    pub k: Vec<usize>,
    pub d: Vec<usize>,
    /// c_R: mean norms must stay within min(T)^{c_R}.
    pub norm_cap_exponent: f64,
    pub placement_seed: u64,
    pub deltas: Vec<f64>,
    pub contaminant_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleSpec {
    pub t: Vec<usize>,
    pub c0: f64,
    pub c1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    GaussianField,
    MeanJitter,
}

impl OracleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OracleKind::Exact => "exact",
            OracleKind::GaussianField => "gaussian-field",
            OracleKind::MeanJitter => "mean-jitter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub amplitudes: Vec<f64>,
    pub c_clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub chains: usize,
    pub projections: usize,
    pub bins: usize,
    pub score_error_samples: usize,
    pub probes: bool,
    pub probe_c1: f64,
    pub probe_c2: f64,
    pub probe_samples: usize,
    pub mmd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub target: TargetSpec,
    pub schedule: ScheduleSpec,
    pub oracle: OracleSpec,
    pub run: RunSpec,
}

impl ExperimentSpec {
    /// Canonical text form; `parse_config_str` of this string reproduces the
    /// spec exactly.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n\n[target]\n", self.seed));
        match &self.target.placement {
            MeanPlacement::Simplex { separation } => {
                s.push_str("kind = simplex\n");
                s.push_str(&format!("separation = {separation}\n"));
            }
            MeanPlacement::RandomBall { radius } => {
                s.push_str("kind = random-ball\n");
                s.push_str(&format!("radius = {radius}\n"));
            }
            MeanPlacement::File { path, .. } => {
                s.push_str("kind = file\n");
                s.push_str(&format!("file = {path}\n"));
            }
        }
        s.push_str(&format!("k = {}\n", join_usize(&self.target.k)));
        s.push_str(&format!("d = {}\n", join_usize(&self.target.d)));
        s.push_str(&format!("norm_cap_exponent = {}\n", self.target.norm_cap_exponent));
        s.push_str(&format!("placement_seed = {}\n", self.target.placement_seed));
        s.push_str(&format!("delta = {}\n", join_f64(&self.target.deltas)));
        s.push_str(&format!("contaminant_variance = {}\n", self.target.contaminant_variance));
        s.push_str("\n[schedule]\n");
        s.push_str(&format!("t = {}\n", join_usize(&self.schedule.t)));
        s.push_str(&format!("c0 = {}\n", self.schedule.c0));
        s.push_str(&format!("c1 = {}\n", self.schedule.c1));
        s.push_str("\n[oracle]\n");
        s.push_str(&format!("kind = {}\n", self.oracle.kind.as_str()));
        s.push_str(&format!("amplitude = {}\n", join_f64(&self.oracle.amplitudes)));
        s.push_str(&format!("c_clip = {}\n", self.oracle.c_clip));
        s.push_str("\n[run]\n");
        s.push_str(&format!("chains = {}\n", self.run.chains));
        s.push_str(&format!("projections = {}\n", self.run.projections));
        s.push_str(&format!("bins = {}\n", self.run.bins));
        s.push_str(&format!("score_error_samples = {}\n", self.run.score_error_samples));
        s.push_str(&format!("probes = {}\n", self.run.probes));
        s.push_str(&format!("probe_c1 = {}\n", self.run.probe_c1));
        s.push_str(&format!("probe_c2 = {}\n", self.run.probe_c2));
        s.push_str(&format!("probe_samples = {}\n", self.run.probe_samples));
        s.push_str(&format!("mmd = {}\n", self.run.mmd));
        s
    }

    /// FNV-1a over the canonical form, as provenance for every report cell.
    pub fn config_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_canonical_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Means for one (K, d) cell per the placement rule.
    pub fn build_means(&self, k: usize, d: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
        match &self.target.placement {
            MeanPlacement::Simplex { separation } => {
                if k > d + 1 {
                    return Err(validation(
                        "target.d",
                        format!("simplex with K={k} needs d ≥ K−1 = {}", k - 1),
                    ));
                }
                Ok(simplex_means(k, d, *separation))
            }
            MeanPlacement::RandomBall { radius } => {
                let mut rng =
                    rng::derive_rng(self.target.placement_seed, &[k as u64, d as u64]);
                Ok((0..k)
                    .map(|_| {
                        let mut v: Vec<f64> =
                            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                        let r = *radius * rng.random::<f64>().powf(1.0 / d as f64);
                        v.iter_mut().for_each(|x| *x *= r / norm);
                        v
                    })
                    .collect())
            }
            MeanPlacement::File { gmm, .. } => {
                Ok((0..gmm.k()).map(|i| gmm.mean(i).to_vec()).collect())
            }
        }
    }

    /// The mixture for one (K, d) cell; equal weights for generated targets.
    pub fn build_gmm(&self, k: usize, d: usize) -> Result<GaussianMixture, ConfigError> {
        if let MeanPlacement::File { gmm, .. } = &self.target.placement {
            return Ok(gmm.clone());
        }
        let means = self.build_means(k, d)?;
        let mut weights = vec![1.0 / k as f64; k];
        let sum: f64 = weights.iter().sum();
        weights[0] += 1.0 - sum;
        GaussianMixture::new(weights, means)
            .map_err(|e| validation("target", format!("generated mixture invalid: {e}")))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schedule.t.is_empty() {
            return Err(validation("schedule.t", "at least one T value required"));
        }
        for &t in &self.schedule.t {
            if t < 2 {
                return Err(validation("schedule.t", format!("T={t} must be at least 2")));
            }
        }
        let constants_ok = self.schedule.c0.is_finite()
            && self.schedule.c1.is_finite()
            && self.schedule.c0 > 0.0
            && self.schedule.c1 > 0.0
            && self.schedule.c1 / self.schedule.c0 > 4.0;
        if !constants_ok {
            return Err(validation(
                "schedule.c1",
                format!(
                    "constants must satisfy c1/c0 > 4; got c0={}, c1={} (ratio {})",
                    self.schedule.c0,
                    self.schedule.c1,
                    self.schedule.c1 / self.schedule.c0
                ),
            ));
        }
        if self.target.k.is_empty() || self.target.d.is_empty() {
            return Err(validation("target.k", "k and d lists must be nonempty"));
        }
        for &k in &self.target.k {
            if k < 1 {
                return Err(validation("target.k", "K must be at least 1"));
            }
        }
        for &d in &self.target.d {
            if d < 1 {
                return Err(validation("target.d", "d must be at least 1"));
            }
        }
        for &delta in &self.target.deltas {
            if !(0.0..1.0).contains(&delta) {
                return Err(validation("target.delta", format!("delta={delta} outside [0,1)")));
            }
        }
        let variance_ok = self.target.contaminant_variance.is_finite()
            && self.target.contaminant_variance > 0.0;
        if !variance_ok {
            return Err(validation("target.contaminant_variance", "must be positive"));
        }
        for &a in &self.oracle.amplitudes {
            if a < 0.0 {
                return Err(validation("oracle.amplitude", format!("amplitude={a} negative")));
            }
        }
        let clip_ok = self.oracle.c_clip.is_finite() && self.oracle.c_clip > 0.0;
        if !clip_ok {
            return Err(validation("oracle.c_clip", "must be positive"));
        }
        if self.run.chains == 0 {
            return Err(validation("run.chains", "must be at least 1"));
        }
        if let MeanPlacement::File { gmm, .. } = &self.target.placement {
            if self.target.k != vec![gmm.k()] {
                return Err(validation(
                    "target.k",
                    format!("file target fixes K={}; omit k or set it to match", gmm.k()),
                ));
            }
            if self.target.d != vec![gmm.dim()] {
                return Err(validation(
                    "target.d",
                    format!("file target fixes d={}; omit d or set it to match", gmm.dim()),
                ));
            }
        }
        // mean-norm cap: max_k ‖μ_k‖ ≤ min(T)^{c_R} for every (K, d) cell
        let min_t = *self.schedule.t.iter().min().expect("nonempty") as f64;
        let cap = min_t.powf(self.target.norm_cap_exponent);
        for &k in &self.target.k {
            for &d in &self.target.d {
                let means = self.build_means(k, d)?;
                let max_norm = means
                    .iter()
                    .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if max_norm > cap {
                    return Err(validation(
                        "target",
                        format!(
                            "mean norm {max_norm:.4} exceeds the declared cap \
                             min(T)^c_R = {min_t}^{} = {cap:.4} at K={k}, d={d}",
                            self.target.norm_cap_exponent
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// K regular-simplex vertices with the given pairwise distance, centered,
/// in the first K−1 of d coordinates (Helmert construction).
fn simplex_means(k: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    (0..k)
        .map(|i| {
            let mut m = vec![0.0; d];
            for j in 1..k {
                let denom = (j as f64 * (j + 1) as f64).sqrt();
                // Helmert row j applied to (e_i − 1/K): centroid part cancels
                let h = if i < j {
                    1.0 / denom
                } else if i == j {
                    -(j as f64) / denom
                } else {
                    0.0
                };
                m[j - 1] = scale * h;
            }
            m
        })
        .collect()
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

pub fn parse_config(path: &std::path::Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config_str(&text, path.parent())
}

/// Parses a config document; `base_dir` anchors relative target-file paths.
pub fn parse_config_str(
    text: &str,
    base_dir: Option<&std::path::Path>,
) -> Result<ExperimentSpec, ConfigError> {
    let mut section = String::new();
    let mut entries: Vec<(String, String, String, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: "unterminated section header".into(),
                });
            }
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
            line: line_no,
            msg: "expected `key = value`".into(),
        })?;
        entries.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().to_string(),
            line_no,
        ));
    }

    let mut seed: Option<u64> = None;
    let mut kind: Option<String> = None;
    let mut separation = 4.0f64;
    let mut radius = 3.0f64;
    let mut file: Option<String> = None;
    let mut k_list = vec![1usize];
    let mut d_list = vec![1usize];
    let mut norm_cap_exponent = 2.0f64;
    let mut placement_seed = 1u64;
    let mut deltas = vec![0.0f64];
    let mut contaminant_variance = 2.0f64;
    let mut t_list: Option<Vec<usize>> = None;
    let mut c0 = 2.0f64;
    let mut c1 = 10.0f64;
    let mut oracle_kind = OracleKind::Exact;
    let mut amplitudes = vec![0.0f64];
    let mut c_clip = 4.0f64;
    let mut chains = 100_000usize;
    let mut projections = 32usize;
    let mut bins = 200usize;
    let mut score_error_samples = 20_000usize;
    let mut probes = false;
    let mut probe_c1 = 8.0f64;
    let mut probe_c2 = 8.0f64;
    let mut probe_samples = 100_000usize;
    let mut mmd = false;

    for (section, key, value, line) in entries {
        let err = |msg: String| ConfigError::Parse { line, msg };
        match (section.as_str(), key.as_str()) {
            ("", "seed") => seed = Some(value.parse().map_err(|_| err(format!("bad seed `{value}`")))?),
            ("target", "kind") => kind = Some(value.clone()),
            ("target", "separation") => separation = parse_one(&value, line)?,
            ("target", "radius") => radius = parse_one(&value, line)?,
            ("target", "file") => file = Some(value.clone()),
            ("target", "k") => k_list = parse_usize_list(&value, line)?,
            ("target", "d") => d_list = parse_usize_list(&value, line)?,
            ("target", "norm_cap_exponent") => norm_cap_exponent = parse_one(&value, line)?,
            ("target", "placement_seed") => {
                placement_seed =
                    value.parse().map_err(|_| err(format!("bad placement_seed `{value}`")))?
            }
            ("target", "delta") => deltas = parse_f64_list(&value, line)?,
            ("target", "contaminant_variance") => {
                contaminant_variance = parse_one(&value, line)?
            }
            ("schedule", "t") => t_list = Some(parse_usize_list(&value, line)?),
            ("schedule", "c0") => c0 = parse_one(&value, line)?,
            ("schedule", "c1") => c1 = parse_one(&value, line)?,
            ("oracle", "kind") => {
                oracle_kind = match value.as_str() {
                    "exact" => OracleKind::Exact,
                    "gaussian-field" => OracleKind::GaussianField,
                    "mean-jitter" => OracleKind::MeanJitter,
                    other => return Err(err(format!("unknown oracle kind `{other}`"))),
                }
            }
            ("oracle", "amplitude") => amplitudes = parse_f64_list(&value, line)?,
            ("oracle", "c_clip") => c_clip = parse_one(&value, line)?,
            ("run", "chains") => chains = parse_count(&value, line)?,
            ("run", "projections") => projections = parse_count(&value, line)?,
            ("run", "bins") => bins = parse_count(&value, line)?,
            ("run", "score_error_samples") => score_error_samples = parse_count(&value, line)?,
            ("run", "probes") => probes = parse_bool(&value, line)?,
            ("run", "probe_c1") => probe_c1 = parse_one(&value, line)?,
            ("run", "probe_c2") => probe_c2 = parse_one(&value, line)?,
            ("run", "probe_samples") => probe_samples = parse_count(&value, line)?,
            ("run", "mmd") => mmd = parse_bool(&value, line)?,
            (s, k) => {
                return Err(err(format!("unknown key `{k}` in section `[{s}]`")));
            }
        }
    }

    let seed = seed.ok_or_else(|| {
        validation("seed", "a master seed is required; wall-clock defaults are not allowed")
    })?;
    let t = t_list
        .ok_or_else(|| validation("schedule.t", "at least one T value is required"))?;

    let placement = match kind.as_deref() {
        None | Some("simplex") => MeanPlacement::Simplex { separation },
        Some("random-ball") => MeanPlacement::RandomBall { radius },
        Some("file") => {
            let rel = file
                .ok_or_else(|| validation("target.file", "kind = file requires a path"))?;
            let full = match base_dir {
                Some(dir) => dir.join(&rel),
                None => std::path::PathBuf::from(&rel),
            };
            let text = std::fs::read_to_string(&full).map_err(|e| ConfigError::Io {
                path: full.display().to_string(),
                msg: e.to_string(),
            })?;
            let gmm = GaussianMixture::from_spec_str(&text)
                .map_err(|e| validation("target.file", e.to_string()))?;
            k_list = vec![gmm.k()];
            d_list = vec![gmm.dim()];
            MeanPlacement::File { path: rel, gmm }
        }
        Some(other) => {
            return Err(validation("target.kind", format!("unknown kind `{other}`")));
        }
    };

    let spec = ExperimentSpec {
        seed,
        target: TargetSpec {
            placement,
            k: k_list,
            d: d_list,
            norm_cap_exponent,
            placement_seed,
            deltas,
            contaminant_variance,
        },
        schedule: ScheduleSpec { t, c0, c1 },
        oracle: OracleSpec { kind: oracle_kind, amplitudes, c_clip },
        run: RunSpec {
            chains,
            projections,
            bins,
            score_error_samples,
            probes,
            probe_c1,
            probe_c2,
            probe_samples,
            mmd,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_one(s: &str, line: usize) -> Result<f64, ConfigError> {
    s.trim()
        .parse()
        .map_err(|_| ConfigError::Parse { line, msg: format!("bad number `{s}`") })
}

fn parse_count(s: &str, line: usize) -> Result<usize, ConfigError> {
    s.trim()
        .parse()
        .map_err(|_| ConfigError::Parse { line, msg: format!("bad count `{s}`") })
}

fn parse_bool(s: &str, line: usize) -> Result<bool, ConfigError> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(ConfigError::Parse { line, msg: format!("bad boolean `{other}`") }),
    }
}

fn parse_f64_list(s: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    let items: Result<Vec<f64>, _> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(ConfigError::Parse { line, msg: format!("bad number list `{s}`") }),
    }
}

fn parse_usize_list(s: &str, line: usize) -> Result<Vec<usize>, ConfigError> {
    let items: Result<Vec<usize>, _> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>())
        .collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(ConfigError::Parse { line, msg: format!("bad count list `{s}`") }),
    }
}
