//! Flat `section.key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Paths are resolved against
//! the directory of the file. Every stage parameter has a key; unknown
//! keys are rejected so typos surface early.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pvmap_core::pipeline::PipelineConfig;

use crate::error::{CliError, CliResult};

/// Input and output locations. Optional inputs are skipped when absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub cameras: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Directory of `<frame_id>.ppm` images.
    pub images: Option<PathBuf>,
    pub corrections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Reference model in the model.json schema.
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub paths: Paths,
    /// Global ids aligning the model with the reference.
    pub anchors: Vec<usize>,
    pub simulate_preset: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pipeline: PipelineConfig::new(1),
            seed: 0,
            paths: Paths::default(),
            anchors: Vec::new(),
            simulate_preset: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, found `{value}`"))),
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(r) => CliError::input(path, r),
            e => e,
        })
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: `{k}` given twice", ln + 1)));
            }
        }
        // rows_per_bench first: it shapes the structure defaults
        let mut cfg = Config::default();
        if let Some(v) = entries.get("structure.rows_per_bench") {
            cfg.pipeline = PipelineConfig::new(parse("structure.rows_per_bench", v)?);
        }
        for (k, v) in &entries {
            cfg.set(k, v, base)?;
        }
        cfg.pipeline = cfg.pipeline.clone().with_seed(cfg.seed);
        cfg.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> CliResult<()> {
        let p = &mut self.pipeline;
        let path = || Some(base.join(v));
        match key {
            "seed" => self.seed = parse(key, v)?,
            "input.cameras" => self.paths.cameras = path(),
            "input.cloud" => self.paths.cloud = path(),
            "input.detections" => self.paths.detections = path(),
            "input.images" => self.paths.images = path(),
            "input.corrections" => self.paths.corrections = path(),
            "input.truth" => self.paths.truth = path(),
            "input.reference" => self.paths.reference = path(),
            "output.dir" => self.paths.output = path(),
            "evaluate.anchors" => {
                self.anchors = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<CliResult<_>>()?
            }
            "simulate.preset" => self.simulate_preset = Some(v.to_string()),
            "fuse.overlap_threshold" => p.fuse.overlap_threshold = parse(key, v)?,
            "fuse.dim_tolerance" => p.fuse.dim_tolerance = parse(key, v)?,
            "fuse.fusion_min_sep" => p.fuse.fusion_min_sep = parse(key, v)?,
            "fuse.edge_margin" => p.fuse.edge_margin = parse(key, v)?,
            "structure.rows_per_bench" => p.structure.rows_per_bench = parse(key, v)?,
            "structure.th" => p.structure.th = parse(key, v)?,
            "structure.n_max" => p.structure.n_max = parse(key, v)?,
            "structure.min_inliers" => p.structure.min_inliers = parse(key, v)?,
            "structure.ransac_trials" => p.structure.ransac_trials = parse(key, v)?,
            "structure.darkness_ratio" => p.structure.darkness_ratio = parse(key, v)?,
            "structure.north_up" => p.structure.north_up = parse_bool(key, v)?,
            "lift.knn_k" => p.lift.knn_k = parse(key, v)?,
            "lift.max_ray_residual" => p.lift.max_ray_residual = parse(key, v)?,
            "lift.voxel_cell_factor" => p.lift.voxel_cell_factor = parse(key, v)?,
            "match.dist_threshold" => p.fusion.dist_threshold = parse(key, v)?,
            "match.match_radius" => p.fusion.match_radius = parse(key, v)?,
            "match.th" => p.fusion.th = parse(key, v)?,
            "match.n_max" => p.fusion.n_max = parse(key, v)?,
            "match.max_repair_rounds" => p.fusion.max_repair_rounds = parse(key, v)?,
            "match.bench_overlap" => p.fusion.bench_overlap = parse(key, v)?,
            "optimize.ransac3d_threshold" => p.optimize.ransac3d_threshold = parse(key, v)?,
            "optimize.ransac3d_trials" => p.optimize.ransac3d_trials = parse(key, v)?,
            "optimize.enforce_pitch" => {
                p.optimize.enforce_pitch = match v {
                    "" | "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Config text listing every stage parameter. Paths are written
    /// relative to `base` when they lie below it.
    pub fn to_text(&self, base: &Path) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let rel = |q: &Path| q.strip_prefix(base).unwrap_or(q).display().to_string();
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(preset) = &self.simulate_preset {
            let _ = writeln!(s, "simulate.preset = {preset}");
        }
        s.push('\n');
        for (key, path) in [
            ("input.cameras", &self.paths.cameras),
            ("input.cloud", &self.paths.cloud),
            ("input.detections", &self.paths.detections),
            ("input.images", &self.paths.images),
            ("input.corrections", &self.paths.corrections),
            ("input.truth", &self.paths.truth),
            ("input.reference", &self.paths.reference),
            ("output.dir", &self.paths.output),
        ] {
            if let Some(q) = path {
                let _ = writeln!(s, "{key} = {}", rel(q));
            }
        }
        if !self.anchors.is_empty() {
            let list: Vec<String> = self.anchors.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(s, "evaluate.anchors = {}", list.join(", "));
        }
        let sections: [(&str, Vec<(&str, String)>); 5] = [
            (
                "fuse",
                vec![
                    ("overlap_threshold", p.fuse.overlap_threshold.to_string()),
                    ("dim_tolerance", p.fuse.dim_tolerance.to_string()),
                    ("fusion_min_sep", p.fuse.fusion_min_sep.to_string()),
                    ("edge_margin", p.fuse.edge_margin.to_string()),
                ],
            ),
            (
                "structure",
                vec![
                    ("rows_per_bench", p.structure.rows_per_bench.to_string()),
                    ("th", p.structure.th.to_string()),
                    ("n_max", p.structure.n_max.to_string()),
                    ("min_inliers", p.structure.min_inliers.to_string()),
                    ("ransac_trials", p.structure.ransac_trials.to_string()),
                    ("darkness_ratio", p.structure.darkness_ratio.to_string()),
                    ("north_up", p.structure.north_up.to_string()),
                ],
            ),
            (
                "lift",
                vec![
                    ("knn_k", p.lift.knn_k.to_string()),
                    ("max_ray_residual", p.lift.max_ray_residual.to_string()),
                    ("voxel_cell_factor", p.lift.voxel_cell_factor.to_string()),
                ],
            ),
            (
                "match",
                vec![
                    ("dist_threshold", p.fusion.dist_threshold.to_string()),
                    ("match_radius", p.fusion.match_radius.to_string()),
                    ("th", p.fusion.th.to_string()),
                    ("n_max", p.fusion.n_max.to_string()),
                    ("max_repair_rounds", p.fusion.max_repair_rounds.to_string()),
                    ("bench_overlap", p.fusion.bench_overlap.to_string()),
                ],
            ),
            (
                "optimize",
                vec![
                    ("ransac3d_threshold", p.optimize.ransac3d_threshold.to_string()),
                    ("ransac3d_trials", p.optimize.ransac3d_trials.to_string()),
                    ("enforce_pitch", p.optimize.enforce_pitch.map_or("none".into(), |v| v.to_string())),
                ],
            ),
        ];
        for (section, keys) in sections {
            s.push('\n');
            for (k, v) in keys {
                let _ = writeln!(s, "{section}.{k} = {v}");
            }
        }
        s
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        path.as_deref()
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn output_dir(&self) -> CliResult<&Path> {
        self.require(&self.paths.output, "output.dir")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let text = "seed = 9\nstructure.rows_per_bench = 4 # four rows\nfuse.fusion_min_sep = 0.3\ninput.cloud = c.txt\n";
        let c = Config::parse(text, Path::new("/data")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.pipeline.structure.rows_per_bench, 4);
        assert_eq!(c.pipeline.structure.seed, 9);
        assert_eq!(c.pipeline.optimize.seed, 9);
        assert_eq!(c.pipeline.fuse.fusion_min_sep, 0.3);
        assert_eq!(c.paths.cloud, Some(PathBuf::from("/data/c.txt")));
        assert_eq!(c.pipeline.lift, PipelineConfig::new(4).lift);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        assert!(Config::parse("fuse.overlap = 1", Path::new(".")).is_err());
        assert!(Config::parse("lift.knn_k = 0", Path::new(".")).is_err());
        assert!(Config::parse("lift.knn_k = five", Path::new(".")).is_err());
        assert!(Config::parse("seed = 1\nseed = 2", Path::new(".")).is_err());
        assert!(Config::parse("no equals sign", Path::new(".")).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::parse("structure.rows_per_bench = 6\nseed = 3\nevaluate.anchors = 1, 5, 9", Path::new("/x")).unwrap();
        c.pipeline.optimize.enforce_pitch = Some(1.02);
        c.paths.output = Some(PathBuf::from("/x/out"));
        c.paths.images = Some(PathBuf::from("/x/images"));
        let back = Config::parse(&c.to_text(Path::new("/x")), Path::new("/x")).unwrap();
        assert_eq!(back, c);
    }
}
