use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in world coordinates (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0; 3], [1.0; 3])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::from_fn(|k, _| if self.max[k] > self.min[k] { rng.random_range(self.min[k]..self.max[k]) } else { self.min[k] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointLandmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub descriptor: Vec<f64>,
    /// Detection confidence under ideal conditions.
    pub confidence: f64,
}

/// A fixed sample on a line landmark; the source of L-points.
#[derive(Debug, Clone, PartialEq)]
pub struct LineAnchor {
    pub id: u64,
    /// Position along the segment, 0 at `a` and 1 at `b`.
    pub t: f64,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineLandmark {
    pub id: u64,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub anchors: Vec<LineAnchor>,
    pub confidence: f64,
}

impl LineLandmark {
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.a + (self.b - self.a) * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub points: Vec<PointLandmark>,
    pub lines: Vec<LineLandmark>,
    pub bounds: Bounds,
    pub descriptor_dim: usize,
}

/// A grid of identical copies of a rectangular window motif on a facade
/// plane `z = depth`. Copies share byte-identical anchor descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitiveConfig {
    pub rows: usize,
    pub cols: usize,
    /// Lower-left corner of the grid on the facade (x, y) and its depth.
    pub origin: [f64; 2],
    pub depth: f64,
    /// Window width and height (m).
    pub window: [f64; 2],
    /// Distance between neighbouring copies (m).
    pub pitch: [f64; 2],
}

impl Default for RepetitiveConfig {
    fn default() -> Self {
        Self { rows: 3, cols: 4, origin: [-4.5, -3.0], depth: 10.0, window: [1.2, 1.6], pitch: [2.5, 2.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_points: usize,
    pub n_lines: usize,
    pub bounds: Bounds,
    pub descriptor_dim: usize,
    /// Segment length range for random lines (m).
    pub line_length: [f64; 2],
    /// Spacing of anchors along each line (m).
    pub anchor_spacing: f64,
    pub repetitive: Option<RepetitiveConfig>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            n_lines: 30,
            bounds: Bounds::new([-10.0, -4.0, 3.0], [10.0, 4.0, 30.0]),
            descriptor_dim: 32,
            line_length: [1.5, 4.0],
            anchor_spacing: 0.25,
            repetitive: None,
        }
    }
}

pub(crate) fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Id of anchor `k` on line landmark `line_id`.
pub fn anchor_id(line_id: u64, k: usize) -> u64 {
    (line_id << 20) | k as u64
}

fn anchors_for(rng: &mut ChaCha8Rng, line_id: u64, length: f64, spacing: f64, dim: usize) -> Vec<LineAnchor> {
    let count = ((length / spacing).round() as usize + 1).max(2);
    (0..count)
        .map(|k| LineAnchor { id: anchor_id(line_id, k), t: k as f64 / (count - 1) as f64, descriptor: unit_gaussian(rng, dim) })
        .collect()
}

/// Deterministic world for `seed`: points and line segments uniform in
/// the bounds, plus the repetitive window grid when configured.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.descriptor_dim;
    let points = (0..cfg.n_points)
        .map(|k| PointLandmark {
            id: k as u64 + 1,
            position: cfg.bounds.sample(&mut rng),
            descriptor: unit_gaussian(&mut rng, dim),
            confidence: rng.random_range(0.5..1.0),
        })
        .collect();

    let mut lines = Vec::with_capacity(cfg.n_lines);
    let mut next_line = 1u64;
    for _ in 0..cfg.n_lines {
        // Rejection-sample segments that lie entirely inside the bounds.
        let (a, b) = loop {
            let a = cfg.bounds.sample(&mut rng);
            let dir = Vector3::from_vec(unit_gaussian(&mut rng, 3));
            let len = rng.random_range(cfg.line_length[0]..=cfg.line_length[1]);
            let b = a + dir * len;
            if cfg.bounds.contains(&b) {
                break (a, b);
            }
        };
        let anchors = anchors_for(&mut rng, next_line, (b - a).norm(), cfg.anchor_spacing, dim);
        lines.push(LineLandmark { id: next_line, a, b, anchors, confidence: rng.random_range(0.5..1.0) });
        next_line += 1;
    }

    if let Some(rep) = &cfg.repetitive {
        let [w, h] = rep.window;
        let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
        let motif: Vec<(Vec<LineAnchor>, f64)> = (0..4)
            .map(|e| {
                let len = if e % 2 == 0 { w } else { h };
                (anchors_for(&mut rng, 0, len, cfg.anchor_spacing, dim), rng.random_range(0.5..1.0))
            })
            .collect();
        for r in 0..rep.rows {
            for c in 0..rep.cols {
                let ox = rep.origin[0] + c as f64 * rep.pitch[0];
                let oy = rep.origin[1] + r as f64 * rep.pitch[1];
                for (e, (anchors, conf)) in motif.iter().enumerate() {
                    let (p, q) = (corners[e], corners[(e + 1) % 4]);
                    let id = next_line;
                    next_line += 1;
                    lines.push(LineLandmark {
                        id,
                        a: Vector3::new(ox + p[0], oy + p[1], rep.depth),
                        b: Vector3::new(ox + q[0], oy + q[1], rep.depth),
                        anchors: anchors
                            .iter()
                            .enumerate()
                            .map(|(k, an)| LineAnchor { id: anchor_id(id, k), t: an.t, descriptor: an.descriptor.clone() })
                            .collect(),
                        confidence: *conf,
                    });
                }
            }
        }
    }
    World { points, lines, bounds: cfg.bounds, descriptor_dim: dim }
}
