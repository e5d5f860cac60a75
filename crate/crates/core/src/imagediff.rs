//! Change detection between two aligned images via window-level KLIEP.
//!
//! Each sliding window is one variable and each within-window pixel offset
//! is one sample, so a `w x w` window yields `w^2` samples of RGB points.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeltaParams, EdgeSet, FeatureMap, FeatureTensor};
use crate::solver::{lambda_max, solve_group_lasso, SolverOptions, SolveReport};

/// Halvings of `lambda` allowed before giving up on the target.
pub const MAX_HALVINGS: u32 = 15;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    maxval: u16,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_maxval(width, height, 255, data)
    }

    pub fn with_maxval(width: usize, height: usize, maxval: u16, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("image dimensions must be >= 1".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Argument(format!("maxval {maxval} outside 1..=255")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|&b| b as u16 > maxval) {
            return Err(Error::Data(format!("sample above maxval {maxval}")));
        }
        Ok(Self { width, height, maxval, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn maxval(&self) -> u16 {
        self.maxval
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = (y * self.width + x) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let k = (y * self.width + x) * 3;
        self.data[k..k + 3].copy_from_slice(&rgb);
    }

    /// Channel values scaled to `[0, 1]`.
    pub fn normalized(&self, x: usize, y: usize) -> [f64; 3] {
        let m = self.maxval as f64;
        self.pixel(x, y).map(|c| c as f64 / m)
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::parse_ppm(BufReader::new(file)).map_err(|e| match e {
            Error::Data(msg) => Error::Format { path: path.to_path_buf(), msg },
            other => other,
        })
    }

    /// Parses binary PPM (P6) with `maxval <= 255`.
    pub fn parse_ppm(mut r: impl BufRead) -> Result<Self> {
        let mut magic = [0u8; 2];
        r.read_exact(&mut magic).map_err(|_| Error::Data("truncated header".into()))?;
        if &magic != b"P6" {
            return Err(Error::Data("not a binary PPM (magic P6)".into()));
        }
        let width = header_number(&mut r)?;
        let height = header_number(&mut r)?;
        let maxval = header_number(&mut r)?;
        if width == 0 || height == 0 {
            return Err(Error::Data("zero image dimension".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Data(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height * 3];
        r.read_exact(&mut data)
            .map_err(|_| Error::Data("truncated pixel data".into()))?;
        Self::with_maxval(width, height, maxval as u16, data).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.encode_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn encode_ppm(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        w.write_all(&self.data)?;
        Ok(())
    }
}

/// Reads one whitespace-delimited header integer, skipping `#` comments.
/// Consumes exactly one whitespace byte after the number.
fn header_number(r: &mut impl BufRead) -> Result<usize> {
    let mut byte = [0u8; 1];
    let mut digits = String::new();
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Data("truncated header".into()));
        }
        let c = byte[0];
        if c == b'#' && digits.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !digits.is_empty() {
                break;
            }
        } else if c.is_ascii_digit() {
            digits.push(c as char);
        } else {
            return Err(Error::Data(format!("unexpected byte {c:#04x} in header")));
        }
    }
    digits
        .parse()
        .map_err(|_| Error::Data(format!("header number `{digits}` out of range")))
}

/// Sliding-window layout over an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub window: usize,
    pub stride: usize,
    pub gx: usize,
    pub gy: usize,
}

impl WindowGrid {
    pub fn new(width: usize, height: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Argument("window and stride must be >= 1".into()));
        }
        if window > width || window > height {
            return Err(Error::Argument(format!(
                "window {window} does not fit a {width}x{height} image"
            )));
        }
        Ok(Self {
            window,
            stride,
            gx: (width - window) / stride + 1,
            gy: (height - window) / stride + 1,
        })
    }

    pub fn for_image(img: &Image, window: usize, stride: usize) -> Result<Self> {
        Self::new(img.width(), img.height(), window, stride)
    }

    pub fn m(&self) -> usize {
        self.gx * self.gy
    }

    /// Grid cell `(column, row)` of window `u`; windows are numbered row-major.
    pub fn cell(&self, u: usize) -> (usize, usize) {
        (u % self.gx, u / self.gx)
    }

    /// Top-left pixel of window `u`.
    pub fn origin(&self, u: usize) -> (usize, usize) {
        let (c, r) = self.cell(u);
        (c * self.stride, r * self.stride)
    }
}

/// Pixel samples per window: `pixels[i * m + u]` is offset `i` of window `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowDataset {
    pub n: usize,
    pub m: usize,
    pub maxval: u16,
    pub pixels: Vec<[u8; 3]>,
}

impl WindowDataset {
    pub fn sample(&self, i: usize, u: usize) -> [u8; 3] {
        self.pixels[i * self.m + u]
    }

    pub fn normalized(&self, i: usize, u: usize) -> [f64; 3] {
        let m = self.maxval as f64;
        self.sample(i, u).map(|c| c as f64 / m)
    }
}

pub fn tile_windows(img: &Image, grid: &WindowGrid) -> Result<WindowDataset> {
    let w = grid.window;
    let last = grid.origin(grid.m() - 1);
    if last.0 + w > img.width() || last.1 + w > img.height() {
        return Err(Error::Argument("window grid exceeds the image".into()));
    }
    let (n, m) = (w * w, grid.m());
    let mut pixels = Vec::with_capacity(n * m);
    for i in 0..n {
        let (dx, dy) = (i % w, i / w);
        for u in 0..m {
            let (x0, y0) = grid.origin(u);
            pixels.push(img.pixel(x0 + dx, y0 + dy));
        }
    }
    Ok(WindowDataset { n, m, maxval: img.maxval(), pixels })
}

/// 4-neighbour window pairs; no self pairs.
pub fn neighbor_edges(grid: &WindowGrid) -> Result<EdgeSet> {
    let mut pairs = Vec::with_capacity(2 * grid.m());
    for r in 0..grid.gy {
        for c in 0..grid.gx {
            let u = r * grid.gx + c;
            if c + 1 < grid.gx {
                pairs.push((u + 1, u));
            }
            if r + 1 < grid.gy {
                pairs.push((u + grid.gx, u));
            }
        }
    }
    EdgeSet::build(grid.m(), Some(&pairs))
}

/// RBF features `exp(-||x_u - x_v||^2 / bandwidth)` on `[0,1]`-scaled RGB.
///
/// Squared distances are accumulated in integers, so any offset that moves
/// both windows' pixels equally leaves the features bit-identical.
pub fn window_features(ds: &WindowDataset, edges: Arc<EdgeSet>, bandwidth: f64) -> Result<FeatureTensor> {
    let fmap = FeatureMap::rbf(bandwidth)?;
    if edges.m() != ds.m {
        return Err(Error::Shape(format!("{} edge variables for {} windows", edges.m(), ds.m)));
    }
    let scale = (ds.maxval as f64).powi(2) * bandwidth;
    let width = edges.len();
    let mut values = vec![0.0; ds.n * width];
    if width > 0 {
        values.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
            for (slot, &(u, v)) in row.iter_mut().zip(edges.edges()) {
                let (a, b) = (ds.sample(i, u), ds.sample(i, v));
                let d2: i64 = (0..3).map(|k| (a[k] as i64 - b[k] as i64).pow(2)).sum();
                *slot = (-(d2 as f64) / scale).exp();
            }
        });
    }
    FeatureTensor::from_parts(ds.n, values, edges, fmap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub window: usize,
    pub stride: usize,
    pub bandwidth: f64,
    /// Stop once more than this many edges are active.
    pub target: usize,
    pub solver: SolverOptions,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            window: 16,
            stride: 5,
            bandwidth: 0.5,
            target: 40,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangedEdge {
    /// 1-based window indices, `u > v`.
    pub u: usize,
    pub v: usize,
    /// 0-based `(column, row)` grid cells.
    pub u_cell: (usize, usize),
    pub v_cell: (usize, usize),
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    /// The ratio is `image_p / image_q`.
    pub direction: String,
    pub grid: WindowGrid,
    pub windows: usize,
    pub samples: usize,
    pub candidate_edges: usize,
    pub target: usize,
    pub lambda_max: f64,
    /// `lambda` of the returned solution.
    pub lambda: f64,
    pub halvings: u32,
    pub active: usize,
    pub warning: Option<String>,
    pub solves: Vec<SolveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub lambda: f64,
    pub active: usize,
    pub iterations: usize,
    pub objective: f64,
}

impl SolveSummary {
    fn new(r: &SolveReport) -> Self {
        Self {
            lambda: r.lambda,
            active: r.active.len(),
            iterations: r.iterations,
            objective: r.objective(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub changed: Vec<ChangedEdge>,
    pub overlay: Image,
    pub report: DetectReport,
}

/// Halves `lambda` from `lambda_max` until more than `target` edges are
/// active or `lambda_max / 2^15` is reached.
pub fn detect_changes(image_p: &Image, image_q: &Image, cfg: &DetectConfig) -> Result<Detection> {
    if image_p.width() != image_q.width()
        || image_p.height() != image_q.height()
        || image_p.maxval() != image_q.maxval()
    {
        return Err(Error::Shape("images differ in size or maxval".into()));
    }
    if cfg.target == 0 {
        return Err(Error::Argument("target active-set size must be >= 1".into()));
    }
    cfg.solver.validate()?;
    let grid = WindowGrid::for_image(image_p, cfg.window, cfg.stride)?;
    let edges = Arc::new(neighbor_edges(&grid)?);
    let fp = window_features(&tile_windows(image_p, &grid)?, edges.clone(), cfg.bandwidth)?;
    let fq = window_features(&tile_windows(image_q, &grid)?, edges.clone(), cfg.bandwidth)?;

    let lmax = if edges.is_empty() { 0.0 } else { lambda_max(&fp, &fq)? };
    let mut report = DetectReport {
        direction: "image_p / image_q".into(),
        grid,
        windows: grid.m(),
        samples: fp.n(),
        candidate_edges: edges.len(),
        target: cfg.target,
        lambda_max: lmax,
        lambda: lmax,
        halvings: 0,
        active: 0,
        warning: None,
        solves: Vec::new(),
    };
    if !(lmax > 0.0) {
        report.warning = Some("lambda_max is zero: the images give identical feature means".into());
        return Ok(Detection {
            changed: Vec::new(),
            overlay: image_q.clone(),
            report,
        });
    }

    let mut lambda = lmax;
    let mut current: Option<DeltaParams> = None;
    loop {
        let (delta, solve) = solve_group_lasso(&fp, &fq, lambda, &cfg.solver, current.as_ref())?;
        report.solves.push(SolveSummary::new(&solve));
        report.lambda = lambda;
        report.active = solve.active.len();
        current = Some(delta);
        if report.active > cfg.target {
            break;
        }
        if report.halvings >= MAX_HALVINGS {
            report.warning = Some(format!(
                "lambda floor lambda_max/2^{MAX_HALVINGS} reached with {} active edges (target > {})",
                report.active, cfg.target
            ));
            break;
        }
        lambda *= 0.5;
        report.halvings += 1;
    }

    let delta = current.expect("at least one solve");
    let changed: Vec<ChangedEdge> = delta
        .support()
        .into_iter()
        .map(|k| {
            let (u, v) = edges.get(k);
            ChangedEdge {
                u: u + 1,
                v: v + 1,
                u_cell: grid.cell(u),
                v_cell: grid.cell(v),
                norm: delta.block_norm(k),
            }
        })
        .collect();
    let overlay = overlay(image_q, &grid, &changed);
    Ok(Detection { changed, overlay, report })
}

/// Copy of `base` with the borders of every window in `changed` drawn green.
pub fn overlay(base: &Image, grid: &WindowGrid, changed: &[ChangedEdge]) -> Image {
    let mut out = base.clone();
    let green = [0, base.maxval() as u8, 0];
    let mut windows: Vec<usize> = changed.iter().flat_map(|e| [e.u - 1, e.v - 1]).collect();
    windows.sort_unstable();
    windows.dedup();
    let w = grid.window;
    for u in windows {
        let (x0, y0) = grid.origin(u);
        for t in 0..w {
            out.set_pixel(x0 + t, y0, green);
            out.set_pixel(x0 + t, y0 + w - 1, green);
            out.set_pixel(x0, y0 + t, green);
            out.set_pixel(x0 + w - 1, y0 + t, green);
        }
    }
    out
}

/// Procedural parking-lot scene and a later view of it: some cars leave or
/// arrive, lighting drops and raindrop speckles move.
pub fn demo_scene(seed: u64) -> Result<(Image, Image)> {
    const W: usize = 200;
    const H: usize = 150;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = vec![0u8; W * H * 3];
    for y in 0..H {
        for x in 0..W {
            let grain: i32 = rng.random_range(-6..=6);
            let stripe = if x % 40 < 2 && (20..130).contains(&y) { 90 } else { 0 };
            let g = (70 + grain + stripe).clamp(0, 255) as u8;
            base[(y * W + x) * 3..(y * W + x) * 3 + 3].copy_from_slice(&[g, g, g.saturating_add(4)]);
        }
    }
    let slots: Vec<(usize, usize)> = (0..5)
        .flat_map(|c| [(c * 40 + 6, 24), (c * 40 + 6, 84)])
        .collect();
    let palette = [[180, 30, 30], [30, 60, 170], [220, 220, 210], [20, 20, 20], [200, 170, 40]];
    let mut before: Vec<Option<[u8; 3]>> = slots
        .iter()
        .map(|_| rng.random_bool(0.7).then(|| palette[rng.random_range(0..palette.len())]))
        .collect();
    let mut after = before.clone();
    // guarantee visible changes: two departures and two arrivals
    for k in [1usize, 6] {
        before[k] = Some(palette[k % palette.len()]);
        after[k] = None;
    }
    for k in [3usize, 8] {
        before[k] = None;
        after[k] = Some(palette[(k + 2) % palette.len()]);
    }

    let render = |cars: &[Option<[u8; 3]>], dim: i32, rng: &mut ChaCha8Rng| -> Result<Image> {
        let mut data = base.clone();
        for (slot, car) in slots.iter().zip(cars) {
            if let Some(rgb) = car {
                for y in slot.1..slot.1 + 40 {
                    for x in slot.0..slot.0 + 28 {
                        let k = (y * W + x) * 3;
                        data[k..k + 3].copy_from_slice(rgb);
                    }
                }
            }
        }
        for c in data.iter_mut() {
            *c = (*c as i32 - dim).clamp(0, 255) as u8;
        }
        for _ in 0..60 {
            let (x, y) = (rng.random_range(0..W), rng.random_range(0..H));
            let k = (y * W + x) * 3;
            for c in &mut data[k..k + 3] {
                *c = c.saturating_add(60);
            }
        }
        Image::new(W, H, data)
    };
    let p = render(&before, 0, &mut rng)?;
    let q = render(&after, 12, &mut rng)?;
    Ok((p, q))
}
