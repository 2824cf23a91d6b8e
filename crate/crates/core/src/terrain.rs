//! Ladder and rough terrain generation plus the adaptive difficulty
//! curriculum.
//!
//! Terrain lives in the sagittal plane: a 1D height field over x for ground,
//! boxes, slopes and the end platform, plus a list of elliptic rung cross
//! sections for ladders. Ladder width is carried through generation and the
//! ladder-state observation but does not enter planar dynamics.

use crate::math::Vec2;
use crate::rng::Rng;
use rand::Rng as _;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TerrainError {
    #[error("invalid ladder spec: {0}")]
    InvalidSpec(String),
}

/// The five ladder parameters plus rung layout controls.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    /// Ladder-presence flag carried into the ladder-state observation.
    pub present: bool,
    pub length_m: f64,
    pub width_m: f64,
    pub spacing_m: f64,
    pub rung_minor_radius_m: f64,
    /// Elliptic major semi-axis; equals the minor radius for cylindrical rungs.
    pub rung_major_radius_m: f64,
    /// Inclination from horizontal; pi/2 is vertical.
    pub incline_rad: f64,
    pub num_rungs: usize,
    /// Horizontal offset of the ladder top from the end platform lip.
    pub platform_offset_m: f64,
}

impl LadderSpec {
    /// Check every structural invariant, naming the violated bound.
    pub fn validate(&self) -> Result<(), TerrainError> {
        let fail = |msg: String| Err(TerrainError::InvalidSpec(msg));
        if self.num_rungs < 2 {
            return fail(format!("num_rungs = {} violates num_rungs >= 2", self.num_rungs));
        }
        let span = (self.num_rungs - 1) as f64 * self.spacing_m;
        if span > self.length_m + 1e-12 {
            return fail(format!(
                "(num_rungs - 1) * spacing = {span:.6} exceeds length {:.6}",
                self.length_m
            ));
        }
        if self.rung_minor_radius_m <= 0.0 {
            return fail(format!(
                "rung_minor_radius = {} violates rung_minor_radius > 0",
                self.rung_minor_radius_m
            ));
        }
        if self.rung_major_radius_m < self.rung_minor_radius_m {
            return fail(format!(
                "rung_major_radius = {} violates major >= minor = {}",
                self.rung_major_radius_m, self.rung_minor_radius_m
            ));
        }
        if !(self.incline_rad > 0.0 && self.incline_rad <= std::f64::consts::FRAC_PI_2 + 1e-12) {
            return fail(format!(
                "incline = {} rad violates 0 < incline <= pi/2",
                self.incline_rad
            ));
        }
        if !(0.0..=0.15 + 1e-12).contains(&self.platform_offset_m) {
            return fail(format!(
                "platform_offset = {} violates 0 <= offset <= 0.15",
                self.platform_offset_m
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainKind {
    Ladder,
    Rough,
    Flat,
}

impl TerrainKind {
    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Ladder => "ladder",
            TerrainKind::Rough => "rough",
            TerrainKind::Flat => "flat",
        }
    }
}

/// Goal position and heading in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalPose {
    pub position: Vec2,
    pub heading: f64,
}

/// Axis-aligned spawn box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnRegion {
    pub min: Vec2,
    pub max: Vec2,
}

/// 1D height field over x, piecewise linear between uniformly spaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub x0: f64,
    pub cell_m: f64,
    pub heights: Vec<f64>,
}

impl HeightField {
    pub fn flat(x0: f64, cell_m: f64, cells: usize, height: f64) -> Self {
        HeightField { x0, cell_m, heights: vec![height; cells] }
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.cell_m * (self.heights.len().saturating_sub(1)) as f64
    }

    /// Terrain height at x; clamps beyond the sampled range.
    pub fn height_at(&self, x: f64) -> f64 {
        if self.heights.is_empty() {
            return 0.0;
        }
        let t = (x - self.x0) / self.cell_m;
        if t <= 0.0 {
            return self.heights[0];
        }
        let last = self.heights.len() - 1;
        if t >= last as f64 {
            return self.heights[last];
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        self.heights[i] * (1.0 - frac) + self.heights[i + 1] * frac
    }

    /// Outward (upward) surface normal at x.
    pub fn normal_at(&self, x: f64) -> Vec2 {
        let t = (x - self.x0) / self.cell_m;
        let last = self.heights.len().saturating_sub(1);
        if t <= 0.0 || t >= last as f64 || last == 0 {
            return Vec2::new(0.0, 1.0);
        }
        let i = t.floor() as usize;
        let slope = (self.heights[i + 1] - self.heights[i]) / self.cell_m;
        Vec2::new(-slope, 1.0).normalized()
    }
}

/// One generated terrain: geometry, spawn region and goal.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainInstance {
    pub kind: TerrainKind,
    pub ladder: Option<LadderSpec>,
    /// Rung centers in the world sagittal plane, base rung first.
    pub rung_centers: Vec<Vec2>,
    pub platform_height_m: f64,
    pub rough_cells: HeightField,
    pub spawn_region: SpawnRegion,
    pub goal_pose: GoalPose,
    /// Curriculum level (or scaled difficulty for rough terrain) and seed
    /// recorded for the dump header.
    pub level: u32,
    pub seed: u64,
}

impl TerrainInstance {
    pub fn height_at(&self, x: f64) -> f64 {
        self.rough_cells.height_at(x)
    }

    pub fn normal_at(&self, x: f64) -> Vec2 {
        self.rough_cells.normal_at(x)
    }

    /// Rung cross-section semi-axes (major, minor); zero-length for no ladder.
    pub fn rung_radii(&self) -> (f64, f64) {
        match &self.ladder {
            Some(l) => (l.rung_major_radius_m, l.rung_minor_radius_m),
            None => (0.0, 0.0),
        }
    }

    /// Serialize to the line-oriented dump format: header `kind level seed`,
    /// one `rung x z` line per rung, then the row-major height-field block.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.kind.name(), self.level, self.seed);
        for c in &self.rung_centers {
            let _ = writeln!(out, "rung {:.9} {:.9}", c.x, c.z);
        }
        let hf = &self.rough_cells;
        let _ = writeln!(out, "heightfield 1 {} {:.9} {:.9}", hf.heights.len(), hf.cell_m, hf.x0);
        let row: Vec<String> = hf.heights.iter().map(|h| format!("{h:.9}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
        out
    }
}

/// Geometry defaults shared by generation and the curriculum.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainConfig {
    pub cell_m: f64,
    /// Flat approach length before the ladder base.
    pub approach_m: f64,
    /// Extent of the platform past the lip.
    pub platform_run_m: f64,
    /// Vertical gap kept between the top rung and the platform lip.
    pub foot_clearance_m: f64,
    pub rough_max_amplitude_m: f64,
    pub rough_extent_m: f64,
    pub curriculum_levels: usize,
    pub incline_min_rad: f64,
    pub incline_max_rad: f64,
    pub length_min_m: f64,
    pub length_max_m: f64,
    pub major_radius_max_m: f64,
    pub minor_radius_m: f64,
    pub spacing_range_m: (f64, f64),
    pub width_range_m: (f64, f64),
    pub platform_offset_max_m: f64,
    /// Height of the goal base pose above the local ground. The goal is a
    /// commanded base position, so it sits at standing height, not on the
    /// floor; the default matches the default robot's standing base height.
    pub goal_height_m: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            cell_m: 0.1,
            approach_m: 2.5,
            platform_run_m: 2.0,
            foot_clearance_m: 0.06,
            rough_max_amplitude_m: 0.2,
            rough_extent_m: 8.0,
            curriculum_levels: 10,
            incline_min_rad: 45f64.to_radians(),
            incline_max_rad: 90f64.to_radians(),
            length_min_m: 1.2,
            length_max_m: 3.0,
            major_radius_max_m: 0.10,
            minor_radius_m: 0.025,
            spacing_range_m: (0.275, 0.325),
            width_range_m: (1.0, 1.25),
            platform_offset_max_m: 0.15,
            goal_height_m: 0.58,
        }
    }
}

/// Per-level ladder parameters; linear interpolation between the configured
/// endpoints, so the major radius is non-increasing and incline and length
/// are non-decreasing in the level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelParams {
    pub incline_rad: f64,
    pub length_m: f64,
    pub major_radius_m: f64,
}

/// Adaptive curriculum position of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub level: usize,
    pub promotions: u64,
    pub demotions: u64,
    pub schedule: Vec<LevelParams>,
}

/// Episode outcome driving curriculum updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOutcome {
    ReachedGoal,
    Terminated,
    TimedOut,
}

impl CurriculumState {
    pub fn new(cfg: &TerrainConfig) -> Self {
        let n = cfg.curriculum_levels.max(2);
        let schedule = (0..n)
            .map(|lvl| {
                let t = lvl as f64 / (n - 1) as f64;
                LevelParams {
                    incline_rad: cfg.incline_min_rad + t * (cfg.incline_max_rad - cfg.incline_min_rad),
                    length_m: cfg.length_min_m + t * (cfg.length_max_m - cfg.length_min_m),
                    major_radius_m: cfg.major_radius_max_m
                        + t * (cfg.minor_radius_m - cfg.major_radius_max_m),
                }
            })
            .collect();
        CurriculumState { level: 0, promotions: 0, demotions: 0, schedule }
    }

    pub fn max_level(&self) -> usize {
        self.schedule.len() - 1
    }

    pub fn params(&self) -> LevelParams {
        self.schedule[self.level]
    }
}

/// Promote on reaching the goal, demote on termination, hold on timeout.
pub fn curriculum_update(mut state: CurriculumState, outcome: EpisodeOutcome) -> CurriculumState {
    match outcome {
        EpisodeOutcome::ReachedGoal => {
            if state.level < state.max_level() {
                state.level += 1;
            }
            state.promotions += 1;
        }
        EpisodeOutcome::Terminated => {
            state.level = state.level.saturating_sub(1);
            state.demotions += 1;
        }
        EpisodeOutcome::TimedOut => {}
    }
    state
}

/// Sample a ladder spec for the current curriculum level. Incline, length and
/// major radius come from the level schedule; spacing and width are drawn from
/// the configured ranges and the platform offset uniformly from [0, 0.15].
pub fn curriculum_sample(state: &CurriculumState, cfg: &TerrainConfig, rng: &mut Rng) -> LadderSpec {
    let p = state.params();
    let spacing = rng.gen_range(cfg.spacing_range_m.0..=cfg.spacing_range_m.1);
    let width = rng.gen_range(cfg.width_range_m.0..=cfg.width_range_m.1);
    let offset = rng.gen_range(0.0..=cfg.platform_offset_max_m);
    // Rungs fill the ladder: highest count with (n-1)*spacing <= length.
    let num_rungs = ((p.length_m / spacing).floor() as usize + 1).max(2);
    LadderSpec {
        present: true,
        length_m: p.length_m,
        width_m: width,
        spacing_m: spacing,
        rung_minor_radius_m: cfg.minor_radius_m,
        rung_major_radius_m: p.major_radius_m.max(cfg.minor_radius_m),
        incline_rad: p.incline_rad,
        num_rungs,
        platform_offset_m: offset,
    }
}

/// Evaluation ladders: length 1-3 m, width 1.0-1.25 m, spacing 27.5-32.5 cm,
/// purely cylindrical rungs.
pub fn sample_eval_ladders(count: usize, cfg: &TerrainConfig, rng: &mut Rng) -> Vec<LadderSpec> {
    assert!(count >= 1, "eval ladder count must be >= 1");
    (0..count)
        .map(|_| {
            let length = rng.gen_range(1.0..=3.0);
            let spacing = rng.gen_range(cfg.spacing_range_m.0..=cfg.spacing_range_m.1);
            let width = rng.gen_range(cfg.width_range_m.0..=cfg.width_range_m.1);
            let offset = rng.gen_range(0.0..=cfg.platform_offset_max_m);
            let num_rungs = ((length / spacing).floor() as usize + 1).max(2);
            LadderSpec {
                present: true,
                length_m: length,
                width_m: width,
                spacing_m: spacing,
                rung_minor_radius_m: cfg.minor_radius_m,
                rung_major_radius_m: cfg.minor_radius_m,
                incline_rad: 75f64.to_radians(),
                num_rungs,
                platform_offset_m: offset,
            }
        })
        .collect()
}

/// Generate the planar composite of approach ground, ladder and end platform.
///
/// The ladder base sits at the origin with the first rung centered on it;
/// rungs ascend along the incline direction with exact `spacing_m`
/// separation. The platform lip is horizontally offset from the ladder top by
/// `platform_offset_m` and its surface stays `foot_clearance_m` below the top
/// rung at every incline.
pub fn generate_ladder(
    spec: &LadderSpec,
    cfg: &TerrainConfig,
    level: u32,
    seed: u64,
    rng: &mut Rng,
) -> Result<TerrainInstance, TerrainError> {
    spec.validate()?;
    let dir = Vec2::new(spec.incline_rad.cos(), spec.incline_rad.sin());
    let rung_centers: Vec<Vec2> =
        (0..spec.num_rungs).map(|k| dir * (k as f64 * spec.spacing_m)).collect();
    let top_rung = rung_centers[spec.num_rungs - 1];
    let ladder_top = dir * spec.length_m;
    let platform_height = (top_rung.z - cfg.foot_clearance_m).max(0.0);
    let lip_x = ladder_top.x + spec.platform_offset_m;

    let x0 = -cfg.approach_m;
    let x_end = lip_x + cfg.platform_run_m;
    let cells = ((x_end - x0) / cfg.cell_m).ceil() as usize + 1;
    let mut heights = vec![0.0; cells];
    for (i, h) in heights.iter_mut().enumerate() {
        let x = x0 + i as f64 * cfg.cell_m;
        if x >= lip_x {
            *h = platform_height;
        }
    }

    let goal_x = rng.gen_range(lip_x + 0.4..=lip_x + cfg.platform_run_m - 0.5);
    Ok(TerrainInstance {
        kind: TerrainKind::Ladder,
        ladder: Some(spec.clone()),
        rung_centers,
        platform_height_m: platform_height,
        rough_cells: HeightField { x0, cell_m: cfg.cell_m, heights },
        spawn_region: SpawnRegion {
            min: Vec2::new(-cfg.approach_m + 0.5, 0.0),
            max: Vec2::new(-0.6, 0.0),
        },
        goal_pose: GoalPose {
            position: Vec2::new(goal_x, platform_height + cfg.goal_height_m),
            heading: 0.0,
        },
        level,
        seed,
    })
}

/// Rough terrain from boxes and slopes. The raw segment profile is rescaled
/// so the peak-to-peak amplitude equals `difficulty * rough_max_amplitude_m`
/// exactly; difficulty 0 produces a flat field.
pub fn generate_rough(
    difficulty: f64,
    cfg: &TerrainConfig,
    seed: u64,
    rng: &mut Rng,
) -> TerrainInstance {
    let difficulty = difficulty.clamp(0.0, 1.0);
    let x0 = -cfg.rough_extent_m / 2.0;
    let cells = (cfg.rough_extent_m / cfg.cell_m).ceil() as usize + 1;
    let mut heights = vec![0.0; cells];

    if difficulty > 0.0 {
        // Random segments of 4-10 cells, each a box (constant) or a slope.
        let mut i = 0usize;
        let mut level = rng.gen_range(0.0..1.0);
        while i < cells {
            let seg = rng.gen_range(4..=10).min(cells - i);
            let next = rng.gen_range(0.0..1.0f64);
            let is_slope = rng.gen_bool(0.5);
            for j in 0..seg {
                heights[i + j] = if is_slope {
                    level + (next - level) * (j as f64 / seg as f64)
                } else {
                    level
                };
            }
            level = if is_slope { next } else { rng.gen_range(0.0..1.0) };
            i += seg;
        }
        let lo = heights.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let amp = difficulty * cfg.rough_max_amplitude_m;
        if span > 1e-12 {
            for h in heights.iter_mut() {
                *h = (*h - lo) / span * amp;
            }
        } else {
            for h in heights.iter_mut() {
                *h = 0.0;
            }
        }
    }

    let kind = if difficulty == 0.0 { TerrainKind::Flat } else { TerrainKind::Rough };
    let spawn_lo = x0 + 0.5;
    let goal_x = rng.gen_range(0.5..=cfg.rough_extent_m / 2.0 - 0.5);
    let hf = HeightField { x0, cell_m: cfg.cell_m, heights };
    let goal_z = hf.height_at(goal_x) + cfg.goal_height_m;
    TerrainInstance {
        kind,
        ladder: None,
        rung_centers: Vec::new(),
        platform_height_m: 0.0,
        rough_cells: hf,
        spawn_region: SpawnRegion {
            min: Vec2::new(spawn_lo, 0.0),
            max: Vec2::new(-0.5, 0.0),
        },
        goal_pose: GoalPose { position: Vec2::new(goal_x, goal_z), heading: 0.0 },
        level: (difficulty * 100.0).round() as u32,
        seed,
    }
}
