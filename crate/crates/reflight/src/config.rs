//! Pipeline configuration: defaults, a plain-text key-value config file, and
//! the option surface shared by every CLI stage.

use std::path::{Path, PathBuf};

use crate::cloud::FusionParams;
use crate::privacy::DefensePolicy;
use crate::scene::CaptureConfig;
use crate::{Error, Result};

/// Which virtual objects a run renders and attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Sphere,
    Mirror,
}

impl ObjectKind {
    pub fn label(self) -> &'static str {
        match self {
            ObjectKind::Sphere => "sphere",
            ObjectKind::Mirror => "mirror",
        }
    }
}

/// Rendering variants compared by the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseVariant {
    /// No defense; the raw reconstructed environment.
    Undefended,
    /// Index-based point-cloud color swap before environment projection.
    Ipc2s,
    /// Restricted rendering: metallic clamped to 0.8, roughness raised to 0.2.
    R2,
}

impl DefenseVariant {
    pub fn label(self) -> &'static str {
        match self {
            DefenseVariant::Undefended => "undefended",
            DefenseVariant::Ipc2s => "ipc2s",
            DefenseVariant::R2 => "r2",
        }
    }
}

/// Everything a full pipeline run needs; stages use the subset they care
/// about. One seed drives all randomness.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Scene ids from the default suite, subset of a–d.
    pub scenes: Vec<char>,
    pub objects: Vec<ObjectKind>,
    pub defenses: Vec<DefenseVariant>,
    /// External detector command; built-in detector when absent.
    pub detector_cmd: Option<String>,
    pub policy: DefensePolicy,
    pub fusion: FusionParams,
    /// Sensor resolutions at the mobile capture scale instead of desk scale.
    pub paper_res: bool,
    pub cubemap_resolution: usize,
    pub prefilter_levels: usize,
    pub render_resolution: usize,
    /// Camera distance from the virtual object, meters.
    pub view_distance: f64,
    /// Render camera horizontal field of view, degrees.
    pub fov_deg: f64,
    pub sphere_radius: f64,
    /// Mirror half side length, meters (square face).
    pub mirror_half_extent: f64,
    /// Lat-long width for sphere unwrapping (height is half).
    pub pano_width: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 7,
            scenes: vec!['a', 'b', 'c', 'd'],
            objects: vec![ObjectKind::Sphere, ObjectKind::Mirror],
            defenses: vec![
                DefenseVariant::Undefended,
                DefenseVariant::Ipc2s,
                DefenseVariant::R2,
            ],
            detector_cmd: None,
            policy: DefensePolicy::default(),
            fusion: FusionParams::default(),
            paper_res: false,
            cubemap_resolution: 1024,
            prefilter_levels: 5,
            render_resolution: 1024,
            view_distance: 0.8,
            fov_deg: 90.0,
            sphere_radius: 0.25,
            mirror_half_extent: 0.75,
            pano_width: 1024,
        }
    }
}

impl PipelineConfig {
    /// Capture resolutions implied by the `paper_res` switch.
    pub fn capture_config(&self) -> CaptureConfig {
        if self.paper_res {
            CaptureConfig::paper(self.seed)
        } else {
            CaptureConfig::desk(self.seed)
        }
    }

    pub fn scene_dir(&self, id: char) -> PathBuf {
        self.out_dir.join(format!("scene_{id}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.scenes.is_empty() || self.objects.is_empty() || self.defenses.is_empty() {
            return Err(Error::InvalidInput(
                "scene, object, and defense selections must be nonempty".into(),
            ));
        }
        for id in &self.scenes {
            if !('a'..='d').contains(id) {
                return Err(Error::InvalidInput(format!("unknown scene id `{id}`")));
            }
        }
        if self.cubemap_resolution < 8
            || self.render_resolution < 32
            || self.prefilter_levels < 2
            || self.pano_width < 16
        {
            return Err(Error::InvalidInput("resolution settings too small".into()));
        }
        if self.view_distance <= 0.0
            || !(1.0..180.0).contains(&self.fov_deg)
            || self.sphere_radius <= 0.0
            || self.mirror_half_extent <= 0.0
        {
            return Err(Error::InvalidInput(
                "view/object geometry settings invalid".into(),
            ));
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidInput(format!("invalid {what} value `{value}`"));
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "scenes" => self.scenes = parse_scenes(value)?,
            "objects" => self.objects = parse_objects(value)?,
            "defenses" => self.defenses = parse_defenses(value)?,
            "detector_cmd" => {
                self.detector_cmd = if value.is_empty() {
                    None
                } else {
                    Some(value.to_string())
                }
            }
            "dynamic_environment" => {
                self.policy.dynamic_environment = value.parse().map_err(|_| bad(key))?
            }
            "min_detector_confidence" => {
                self.policy.min_detector_confidence = value.parse().map_err(|_| bad(key))?
            }
            "expansion_margin" => {
                self.policy.expansion_margin = value.parse().map_err(|_| bad(key))?
            }
            "paper_res" => self.paper_res = value.parse().map_err(|_| bad(key))?,
            "cubemap_resolution" => {
                self.cubemap_resolution = value.parse().map_err(|_| bad(key))?
            }
            "prefilter_levels" => self.prefilter_levels = value.parse().map_err(|_| bad(key))?,
            "render_resolution" => self.render_resolution = value.parse().map_err(|_| bad(key))?,
            "view_distance" => self.view_distance = value.parse().map_err(|_| bad(key))?,
            "fov_deg" => self.fov_deg = value.parse().map_err(|_| bad(key))?,
            "sphere_radius" => self.sphere_radius = value.parse().map_err(|_| bad(key))?,
            "mirror_half_extent" => {
                self.mirror_half_extent = value.parse().map_err(|_| bad(key))?
            }
            "pano_width" => self.pano_width = value.parse().map_err(|_| bad(key))?,
            "icp_max_correspondence" => {
                self.fusion.icp.max_corr = value.parse().map_err(|_| bad(key))?
            }
            "fusion_voxel" => self.fusion.voxel = value.parse().map_err(|_| bad(key))?,
            "fusion_register" => self.fusion.register = value.parse().map_err(|_| bad(key))?,
            other => return Err(Error::InvalidConfigKey(other.to_string())),
        }
        Ok(())
    }

    /// Load `key = value` lines (`#` comments, blank lines ignored) on top of
    /// the current settings.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        for (lineno, raw) in std::fs::read_to_string(path)?.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidInput(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

pub fn parse_scenes(value: &str) -> Result<Vec<char>> {
    if value == "all" {
        return Ok(vec!['a', 'b', 'c', 'd']);
    }
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let mut chars = part.chars();
        match (chars.next(), chars.next()) {
            (Some(c @ 'a'..='d'), None) => out.push(c),
            _ => return Err(Error::InvalidInput(format!("unknown scene `{part}`"))),
        }
    }
    Ok(out)
}

pub fn parse_objects(value: &str) -> Result<Vec<ObjectKind>> {
    match value {
        "both" | "all" => Ok(vec![ObjectKind::Sphere, ObjectKind::Mirror]),
        _ => value
            .split(',')
            .map(|p| match p.trim() {
                "sphere" => Ok(ObjectKind::Sphere),
                "mirror" => Ok(ObjectKind::Mirror),
                other => Err(Error::InvalidInput(format!("unknown object `{other}`"))),
            })
            .collect(),
    }
}

pub fn parse_defenses(value: &str) -> Result<Vec<DefenseVariant>> {
    match value {
        "auto" | "all" => Ok(vec![
            DefenseVariant::Undefended,
            DefenseVariant::Ipc2s,
            DefenseVariant::R2,
        ]),
        _ => value
            .split(',')
            .map(|p| match p.trim() {
                "none" | "undefended" => Ok(DefenseVariant::Undefended),
                "ipc2s" => Ok(DefenseVariant::Ipc2s),
                "r2" => Ok(DefenseVariant::R2),
                other => Err(Error::InvalidInput(format!("unknown defense `{other}`"))),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\nseed = 42\nscenes = a,c\nobjects = mirror\ndefenses = none,r2\ncubemap_resolution = 128\ndynamic_environment = true\n",
        )
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.scenes, vec!['a', 'c']);
        assert_eq!(cfg.objects, vec![ObjectKind::Mirror]);
        assert_eq!(
            cfg.defenses,
            vec![DefenseVariant::Undefended, DefenseVariant::R2]
        );
        assert_eq!(cfg.cubemap_resolution, 128);
        assert!(cfg.policy.dynamic_environment);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.set("frobnicate", "1").unwrap_err();
        match err {
            Error::InvalidConfigKey(k) => assert_eq!(k, "frobnicate"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn selection_shorthands() {
        assert_eq!(parse_scenes("all").unwrap(), vec!['a', 'b', 'c', 'd']);
        assert_eq!(parse_objects("both").unwrap().len(), 2);
        assert_eq!(parse_defenses("auto").unwrap().len(), 3);
        assert!(parse_scenes("z").is_err());
    }
}
