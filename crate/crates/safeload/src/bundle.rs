//! Artifact bundles on disk: a directory of small text files.
//!
//! ```text
//! manifest.txt        format, local-model threshold, index settings
//! schema.txt          feature groups and their index ranges
//! rule.txt            the discriminative rule expression
//! global_model.txt    boosted-tree ensemble
//! local_models/<c>.txt
//! quota.txt           quota parameters and previous-day MO counts
//! provenance.txt      training-trace digest, build timestamp, seed
//! index/<c>.txt       optional carried-over false negatives
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use safeload_core::correction::CorrectionIndex;
use safeload_core::model::{HybridRouter, TreeEnsemble};
use safeload_core::pipeline::{ArtifactBundle, Provenance, QuotaSnapshot};
use safeload_core::quota::QuotaParams;
use safeload_core::rules::DiscriminativeRule;
use safeload_core::types::validate_id;
use safeload_core::{FeatureGroup, FeatureSchema, FeatureVector};

use crate::traceio::parse_finite;

pub const BUNDLE_FORMAT: &str = "safeload-bundle/1";
pub const SCHEMA_FORMAT: &str = "safeload-schema/1";
pub const QUOTA_FORMAT: &str = "safeload-quota/1";
pub const PROVENANCE_FORMAT: &str = "safeload-provenance/1";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt artifact {file}: {detail}")]
    CorruptArtifact { file: String, detail: String },
    #[error("schema mismatch: bundle dimension {bundle}, expected {expected}")]
    SchemaMismatch { bundle: usize, expected: usize },
}

fn corrupt(file: &str, detail: impl Into<String>) -> BundleError {
    BundleError::CorruptArtifact {
        file: file.into(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Key/value lines of a small artifact, in file order.
struct Fields<'a> {
    file: &'a str,
    lines: Vec<(&'a str, &'a str)>,
    at: usize,
}

impl<'a> Fields<'a> {
    fn new(file: &'a str, text: &'a str, format: &str) -> Result<Self, BundleError> {
        let lines: Vec<(&str, &str)> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.split_once(' ').unwrap_or((l, "")))
            .collect();
        let mut fields = Self { file, lines, at: 0 };
        let found = fields.next("format")?;
        if found != format {
            return Err(corrupt(file, format!("unsupported format {found:?}")));
        }
        Ok(fields)
    }

    fn next(&mut self, key: &str) -> Result<&'a str, BundleError> {
        match self.lines.get(self.at) {
            Some(&(k, v)) if k == key => {
                self.at += 1;
                Ok(v)
            }
            _ => Err(corrupt(self.file, format!("missing {key} line"))),
        }
    }

    fn float(&mut self, key: &str) -> Result<f64, BundleError> {
        let v = self.next(key)?;
        parse_finite(v).ok_or_else(|| corrupt(self.file, format!("bad {key} {v:?}")))
    }

    fn int<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, BundleError> {
        let v = self.next(key)?;
        v.parse()
            .map_err(|_| corrupt(self.file, format!("bad {key} {v:?}")))
    }

    fn rest(&mut self) -> &[(&'a str, &'a str)] {
        let rest = &self.lines[self.at..];
        self.at = self.lines.len();
        rest
    }
}

pub fn render_schema(schema: &FeatureSchema) -> String {
    let mut out = format!("format {SCHEMA_FORMAT}\ndimension {}\n", schema.dimension());
    for (group, range) in schema.groups() {
        let _ = writeln!(out, "group {} {} {}", group.name(), range.start, range.end);
    }
    out
}

pub fn parse_schema(text: &str) -> Result<FeatureSchema, BundleError> {
    const FILE: &str = "schema.txt";
    let mut f = Fields::new(FILE, text, SCHEMA_FORMAT)?;
    let dimension: usize = f.int("dimension")?;
    let mut groups = Vec::new();
    for &(key, value) in f.rest() {
        let parts: Vec<&str> = value.split(' ').collect();
        let parsed = match (key, parts.as_slice()) {
            ("group", [name, start, end]) => FeatureGroup::from_name(name)
                .zip(start.parse::<usize>().ok())
                .zip(end.parse::<usize>().ok())
                .map(|((g, s), e)| (g, s..e)),
            _ => None,
        };
        groups.push(parsed.ok_or_else(|| corrupt(FILE, format!("bad line {key} {value}")))?);
    }
    let schema = FeatureSchema::from_ranges(groups).map_err(|e| corrupt(FILE, e.to_string()))?;
    if schema.dimension() != dimension {
        return Err(corrupt(FILE, "dimension disagrees with group ranges"));
    }
    Ok(schema)
}

pub fn render_quota(quota: &QuotaSnapshot) -> String {
    let p = &quota.params;
    let mut out = format!(
        "format {QUOTA_FORMAT}\ngamma {}\nbeta {}\nc_min {}\ndaily_multiplier {}\nmin_daily_quota {}\n",
        p.gamma, p.beta, p.c_min, p.daily_multiplier, p.min_daily_quota
    );
    for (cluster, mo) in &quota.prev_day_mo {
        let _ = writeln!(out, "prev_day_mo {cluster} {mo}");
    }
    out
}

pub fn parse_quota(text: &str) -> Result<QuotaSnapshot, BundleError> {
    const FILE: &str = "quota.txt";
    let mut f = Fields::new(FILE, text, QUOTA_FORMAT)?;
    let params = QuotaParams {
        gamma: f.float("gamma")?,
        beta: f.float("beta")?,
        c_min: f.float("c_min")?,
        daily_multiplier: f.float("daily_multiplier")?,
        min_daily_quota: f.float("min_daily_quota")?,
    };
    params
        .validate()
        .map_err(|e| corrupt(FILE, e.to_string()))?;
    let mut prev_day_mo = BTreeMap::new();
    for &(key, value) in f.rest() {
        let entry = match (key, value.split_once(' ')) {
            ("prev_day_mo", Some((cluster, n))) if validate_id(cluster).is_ok() => {
                n.parse::<u64>().ok().map(|n| (cluster.to_string(), n))
            }
            _ => None,
        };
        let (cluster, n) = entry.ok_or_else(|| corrupt(FILE, format!("bad line {key} {value}")))?;
        if prev_day_mo.insert(cluster, n).is_some() {
            return Err(corrupt(FILE, "duplicate cluster"));
        }
    }
    Ok(QuotaSnapshot {
        params,
        prev_day_mo,
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_digest(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

pub fn render_provenance(p: &Provenance) -> String {
    format!(
        "format {PROVENANCE_FORMAT}\ntrace_sha256 {}\nbuild_timestamp_ms {}\nseed {}\n",
        hex(&p.trace_digest),
        p.build_timestamp_ms,
        p.seed
    )
}

pub fn parse_provenance(text: &str) -> Result<Provenance, BundleError> {
    const FILE: &str = "provenance.txt";
    let mut f = Fields::new(FILE, text, PROVENANCE_FORMAT)?;
    let digest = f.next("trace_sha256")?;
    let trace_digest = parse_digest(digest)
        .ok_or_else(|| corrupt(FILE, "digest must be 64 lowercase hex digits"))?;
    Ok(Provenance {
        trace_digest,
        build_timestamp_ms: f.int("build_timestamp_ms")?,
        seed: f.int("seed")?,
    })
}

fn render_index_cluster(index: &CorrectionIndex, cluster: &str) -> String {
    let mut out = String::new();
    for e in index.entries(cluster) {
        let _ = write!(out, "{}", e.inserted_ms);
        for (k, v) in e.features.as_slice().iter().enumerate() {
            out.push(if k == 0 { ' ' } else { ',' });
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_index_line(line: &str) -> Option<(u64, FeatureVector)> {
    let (at, values) = line.split_once(' ')?;
    let values: Option<Vec<f64>> = values.split(',').map(parse_finite).collect();
    Some((at.parse().ok()?, FeatureVector::new(values?).ok()?))
}

fn read(dir: &Path, name: &str) -> Result<String, BundleError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => corrupt(name, "missing"),
        _ => io_err(&path)(e),
    })
}

fn write(path: PathBuf, text: &str) -> Result<(), BundleError> {
    fs::write(&path, text).map_err(io_err(&path))
}

/// Sorted `<cluster>.txt` files of a subdirectory; absent means none.
fn cluster_files(dir: &Path, sub: &str) -> Result<Vec<(String, PathBuf)>, BundleError> {
    let path = dir.join(sub);
    if !path.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&path).map_err(io_err(&path))? {
        let entry = entry.map_err(io_err(&path))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let cluster = name
            .strip_suffix(".txt")
            .filter(|c| validate_id(c).is_ok())
            .ok_or_else(|| corrupt(sub, format!("unexpected file {name:?}")))?;
        out.push((cluster.to_string(), entry.path()));
    }
    out.sort();
    Ok(out)
}

fn render_manifest(bundle: &ArtifactBundle) -> String {
    let capacity = bundle
        .index
        .capacity()
        .map_or("none".to_string(), |c| c.to_string());
    format!(
        "format {BUNDLE_FORMAT}\nlocal_threshold {}\nindex_threshold {}\nindex_capacity {capacity}\n",
        bundle.router.local_threshold(),
        bundle.index.threshold()
    )
}

pub fn save_bundle(bundle: &ArtifactBundle, dir: impl AsRef<Path>) -> Result<(), BundleError> {
    let dir = dir.as_ref();
    bundle
        .check()
        .map_err(|e| corrupt("bundle", e.to_string()))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    // stale per-cluster files from an earlier bundle would be picked up on load
    for sub in ["local_models", "index"] {
        let path = dir.join(sub);
        if path.is_dir() {
            for (_, file) in cluster_files(dir, sub)? {
                fs::remove_file(&file).map_err(io_err(&file))?;
            }
        }
    }
    write(dir.join("manifest.txt"), &render_manifest(bundle))?;
    write(dir.join("schema.txt"), &render_schema(&bundle.schema))?;
    write(dir.join("rule.txt"), &format!("{}\n", bundle.rule))?;
    write(
        dir.join("global_model.txt"),
        &bundle.router.global().to_string(),
    )?;
    if !bundle.router.locals().is_empty() {
        let locals = dir.join("local_models");
        fs::create_dir_all(&locals).map_err(io_err(&locals))?;
        for (cluster, model) in bundle.router.locals() {
            write(locals.join(format!("{cluster}.txt")), &model.to_string())?;
        }
    }
    write(dir.join("quota.txt"), &render_quota(&bundle.quota))?;
    write(
        dir.join("provenance.txt"),
        &render_provenance(&bundle.provenance),
    )?;
    if !bundle.index.is_empty() {
        let index = dir.join("index");
        fs::create_dir_all(&index).map_err(io_err(&index))?;
        for (cluster, _) in bundle.index.sizes() {
            write(
                index.join(format!("{cluster}.txt")),
                &render_index_cluster(&bundle.index, cluster),
            )?;
        }
    }
    Ok(())
}

/// Loads a bundle, optionally insisting on a feature dimension.
pub fn load_bundle(
    dir: impl AsRef<Path>,
    expected_dimension: Option<usize>,
) -> Result<ArtifactBundle, BundleError> {
    let dir = dir.as_ref();
    let manifest = read(dir, "manifest.txt")?;
    let mut m = Fields::new("manifest.txt", &manifest, BUNDLE_FORMAT)?;
    let local_threshold: usize = m.int("local_threshold")?;
    let index_threshold = m.float("index_threshold")?;
    let capacity = match m.next("index_capacity")? {
        "none" => None,
        n => Some(
            n.parse::<usize>()
                .map_err(|_| corrupt("manifest.txt", "bad index_capacity"))?,
        ),
    };

    let schema = parse_schema(&read(dir, "schema.txt")?)?;
    if let Some(expected) = expected_dimension {
        if schema.dimension() != expected {
            return Err(BundleError::SchemaMismatch {
                bundle: schema.dimension(),
                expected,
            });
        }
    }
    let rule: DiscriminativeRule = read(dir, "rule.txt")?
        .trim_end()
        .parse()
        .map_err(|e: safeload_core::Error| corrupt("rule.txt", e.to_string()))?;
    let model = |name: &str, text: &str| -> Result<TreeEnsemble, BundleError> {
        text.parse()
            .map_err(|e: safeload_core::Error| corrupt(name, e.to_string()))
    };
    let global = model("global_model.txt", &read(dir, "global_model.txt")?)?;
    let mut locals = BTreeMap::new();
    for (cluster, path) in cluster_files(dir, "local_models")? {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        locals.insert(
            cluster.clone(),
            model(&format!("local_models/{cluster}.txt"), &text)?,
        );
    }
    let router = HybridRouter::new(global, locals, local_threshold)
        .map_err(|e| corrupt("local_models", e.to_string()))?;

    let quota = parse_quota(&read(dir, "quota.txt")?)?;
    let provenance = parse_provenance(&read(dir, "provenance.txt")?)?;

    let mut index = CorrectionIndex::new(index_threshold, capacity)
        .map_err(|e| corrupt("manifest.txt", e.to_string()))?;
    for (cluster, path) in cluster_files(dir, "index")? {
        let file = format!("index/{cluster}.txt");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for line in text.lines() {
            let (at, features) = parse_index_line(line)
                .ok_or_else(|| corrupt(&file, format!("bad entry {line:?}")))?;
            index
                .insert_fn(&cluster, features, at)
                .map_err(|e| corrupt(&file, e.to_string()))?;
        }
    }

    let bundle = ArtifactBundle {
        schema,
        rule,
        router,
        quota,
        provenance,
        index,
    };
    bundle.check().map_err(|e| match e {
        safeload_core::Error::SchemaMismatch { bundle, expected } => corrupt(
            "global_model.txt",
            format!("model dimension {bundle} disagrees with schema dimension {expected}"),
        ),
        other => corrupt("bundle", other.to_string()),
    })?;
    Ok(bundle)
}
