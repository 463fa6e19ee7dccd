//! Procedural "moving shapes" videos with exact masks, tags, captions and
//! question/answer items.
//!
//! Shapes are rasterized with a pixel-center test: pixel `(y, x)` belongs to
//! a shape when `(x + 0.5, y + 0.5)` lies inside it. Later objects paint over
//! earlier ones and masks record the visible pixels only.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::video::{Frame, Mask};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("scene has no objects to ask about")]
    NoObjects,
    #[error("no question template applies to this scene")]
    NoApplicableQuestion,
    #[error("could not place objects without overlap after {0} attempts")]
    Placement(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NamedColor {
    pub name: String,
    pub rgb: [u8; 3],
}

impl NamedColor {
    pub fn new(name: &str, rgb: [u8; 3]) -> Self {
        Self {
            name: name.to_string(),
            rgb,
        }
    }
}

/// Default palette; the first four colors are used by quadrant layouts.
pub fn palette() -> Vec<NamedColor> {
    vec![
        NamedColor::new("red", [220, 50, 50]),
        NamedColor::new("green", [60, 180, 75]),
        NamedColor::new("blue", [50, 90, 220]),
        NamedColor::new("yellow", [230, 210, 40]),
        NamedColor::new("purple", [150, 60, 190]),
        NamedColor::new("orange", [245, 130, 40]),
    ]
}

/// Abstract nouns injected as tagger false positives. None of them are in
/// the concrete-noun lexicon.
pub const NOISE_TAGS: [&str; 8] = [
    "happiness", "idea", "freedom", "moment", "style", "concept", "atmosphere", "beauty",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub color: NamedColor,
    /// Radius for circles, side length for squares and triangles.
    pub size: f64,
    /// Center `(x, y)` at the entry frame.
    pub start: (f64, f64),
    /// Pixels per frame `(dx, dy)`.
    pub velocity: (f64, f64),
    pub entry: usize,
    /// Exclusive.
    pub exit: usize,
}

impl ObjectSpec {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let dt = frame as f64 - self.entry as f64;
        (self.start.0 + self.velocity.0 * dt, self.start.1 + self.velocity.1 * dt)
    }

    /// Half-extent of the shape's bounding square around its center.
    fn half_extent(&self) -> f64 {
        match self.shape {
            ShapeKind::Circle => self.size,
            ShapeKind::Square | ShapeKind::Triangle => self.size / 2.0,
        }
    }

    pub fn contains(&self, frame: usize, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center_at(frame);
        let (dx, dy) = (px - cx, py - cy);
        match self.shape {
            ShapeKind::Circle => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Square => {
                let h = self.size / 2.0;
                dx >= -h && dx <= h && dy >= -h && dy <= h
            }
            ShapeKind::Triangle => {
                // Upward equilateral triangle with its centroid at the center.
                let s = self.size;
                let height = libm::sqrt(3.0) / 2.0 * s;
                let top = -2.0 * height / 3.0;
                let base = height / 3.0;
                if dy < top || dy > base {
                    return false;
                }
                let half_w = (dy - top) / height * (s / 2.0);
                dx >= -half_w && dx <= half_w
            }
        }
    }

    pub fn direction_word(&self) -> &'static str {
        let (vx, vy) = self.velocity;
        if vx == 0.0 && vy == 0.0 {
            "still"
        } else if libm::fabs(vx) >= libm::fabs(vy) {
            if vx > 0.0 {
                "right"
            } else {
                "left"
            }
        } else if vy > 0.0 {
            "down"
        } else {
            "up"
        }
    }

    /// Area formula of the continuous shape.
    pub fn nominal_area(&self) -> f64 {
        match self.shape {
            ShapeKind::Circle => core::f64::consts::PI * self.size * self.size,
            ShapeKind::Square => self.size * self.size,
            ShapeKind::Triangle => libm::sqrt(3.0) / 4.0 * self.size * self.size,
        }
    }

    pub fn nominal_perimeter(&self) -> f64 {
        match self.shape {
            ShapeKind::Circle => 2.0 * core::f64::consts::PI * self.size,
            ShapeKind::Square => 4.0 * self.size,
            ShapeKind::Triangle => 3.0 * self.size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectSpec>,
    pub background: [u8; 3],
    /// Probability that each of two noise-tag draws fires on a frame.
    pub noise_tag_rate: f64,
}

impl SceneSpec {
    pub fn new(seed: u64, frames: usize, objects: Vec<ObjectSpec>) -> Self {
        Self {
            seed,
            frames,
            height: 64,
            width: 64,
            objects,
            background: [24, 24, 24],
            noise_tag_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.frames == 0 {
            return Err(SceneError::Spec("frame count must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(SceneError::Spec("resolution must be positive".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.size > 0.0) {
                return Err(SceneError::Spec(format!("object {i}: size must be positive")));
            }
            if o.entry >= o.exit || o.exit > self.frames {
                return Err(SceneError::Spec(format!("object {i}: need entry < exit <= frames")));
            }
            let e = o.half_extent();
            if 2.0 * e > self.width.min(self.height) as f64 {
                return Err(SceneError::Spec(format!("object {i}: larger than the frame")));
            }
            let (cx, cy) = o.start;
            if cx - e < 0.0 || cy - e < 0.0 || cx + e > self.width as f64 || cy + e > self.height as f64 {
                return Err(SceneError::Spec(format!("object {i}: does not fit its entry frame")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QaKind {
    General,
    ObjectDetail,
    Referring,
}

impl QaKind {
    pub fn name(self) -> &'static str {
        match self {
            QaKind::General => "general",
            QaKind::ObjectDetail => "object_detail",
            QaKind::Referring => "referring",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [QaKind::General, QaKind::ObjectDetail, QaKind::Referring]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Placeholder that referring questions carry where the object token goes.
pub const OBJECT_PLACEHOLDER: &str = "<o>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaItem {
    pub kind: QaKind,
    pub question: String,
    /// Referred object (index into the scene's objects); referring items only.
    pub object: Option<usize>,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionTemplate {
    /// "how many objects appear?"
    CountObjects,
    /// "what color is the <shape>?" (shape must be unique in the scene)
    ColorOfShape,
    /// "where is the <color> object?" (color must be unique in the scene)
    WhereIsColor,
    ReferColor,
    ReferShape,
    ReferDirection,
    /// "where is <o>?", answered with the quadrant.
    ReferWhere,
}

impl QuestionTemplate {
    pub fn kind(self) -> QaKind {
        match self {
            QuestionTemplate::CountObjects => QaKind::General,
            QuestionTemplate::ColorOfShape | QuestionTemplate::WhereIsColor => QaKind::ObjectDetail,
            _ => QaKind::Referring,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub frames: Vec<Frame>,
    /// `masks[object][frame]`.
    pub masks: Vec<Vec<Mask>>,
    /// Raw per-frame tags (visible shape names plus noise), sorted.
    pub tags: Vec<Vec<String>>,
    pub caption: String,
}

impl SceneTruth {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_objects(&self) -> usize {
        self.masks.len()
    }

    /// Objects with a nonempty mask on at least one frame.
    pub fn visible_objects(&self) -> Vec<usize> {
        (0..self.masks.len())
            .filter(|&o| self.masks[o].iter().any(|m| !m.is_empty()))
            .collect()
    }

    /// Position word of an object's mean visible center.
    pub fn quadrant_word(&self, object: usize) -> &'static str {
        let (mut sy, mut sx, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for m in &self.masks[object] {
            if let Some((y, x)) = m.centroid() {
                sy += y;
                sx += x;
                n += 1.0;
            }
        }
        let (cy, cx) = (sy / n.max(1.0), sx / n.max(1.0));
        let top = cy < self.spec.height as f64 / 2.0;
        let left = cx < self.spec.width as f64 / 2.0;
        match (top, left) {
            (true, true) => "top left",
            (true, false) => "top right",
            (false, true) => "bottom left",
            (false, false) => "bottom right",
        }
    }
}

pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    WORDS.get(n).map_or_else(|| format!("{n}"), |w| (*w).to_string())
}

fn render_mask(spec: &SceneSpec, o: &ObjectSpec, frame: usize) -> Mask {
    let mut m = Mask::empty(spec.height, spec.width);
    if frame < o.entry || frame >= o.exit {
        return m;
    }
    let (cx, cy) = o.center_at(frame);
    let e = o.half_extent() + 1.0;
    let clampi = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
    let (x0, x1) = (clampi(libm::floor(cx - e), spec.width), clampi(libm::ceil(cx + e), spec.width));
    let (y0, y1) = (clampi(libm::floor(cy - e), spec.height), clampi(libm::ceil(cy + e), spec.height));
    for y in y0..y1 {
        for x in x0..x1 {
            if o.contains(frame, x as f64 + 0.5, y as f64 + 0.5) {
                m.set(y, x, true);
            }
        }
    }
    m
}

fn caption(spec: &SceneSpec) -> String {
    let clauses: Vec<String> = spec
        .objects
        .iter()
        .map(|o| {
            let motion = match o.direction_word() {
                "still" => "stays still".to_string(),
                d => format!("moves {d}"),
            };
            format!("a {} {} {}", o.color.name, o.shape.name(), motion)
        })
        .collect();
    if clauses.is_empty() {
        "an empty scene".to_string()
    } else {
        clauses.join(" while ")
    }
}

/// Renders a scene. Deterministic in the spec, including its seed.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneTruth, SceneError> {
    spec.validate()?;
    let mut rng = SeededRng::derived(spec.seed, 0x7a65);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks: Vec<Vec<Mask>> = vec![Vec::with_capacity(spec.frames); spec.objects.len()];
    let mut tags = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame = Frame::filled(spec.height, spec.width, spec.background);
        let mut shape_masks: Vec<Mask> = spec.objects.iter().map(|o| render_mask(spec, o, t)).collect();
        // Painter's order: later objects occlude earlier ones.
        for i in 0..shape_masks.len() {
            for j in i + 1..shape_masks.len() {
                let (lo, hi) = shape_masks.split_at_mut(j);
                for (a, b) in lo[i].bits.iter_mut().zip(&hi[0].bits) {
                    if *b {
                        *a = false;
                    }
                }
            }
        }
        for (o, m) in spec.objects.iter().zip(&shape_masks) {
            for y in 0..spec.height {
                for x in 0..spec.width {
                    if m.get(y, x) {
                        frame.set_pixel(y, x, o.color.rgb);
                    }
                }
            }
        }
        let mut frame_tags: Vec<String> = spec
            .objects
            .iter()
            .zip(&shape_masks)
            .filter(|(_, m)| !m.is_empty())
            .map(|(o, _)| o.shape.name().to_string())
            .collect();
        for _ in 0..2 {
            if spec.noise_tag_rate > 0.0 && rng.chance(spec.noise_tag_rate) {
                frame_tags.push(NOISE_TAGS[rng.below(0, NOISE_TAGS.len())].to_string());
            }
        }
        frame_tags.sort();
        frame_tags.dedup();
        tags.push(frame_tags);
        for (slot, m) in masks.iter_mut().zip(shape_masks) {
            slot.push(m);
        }
        frames.push(frame);
    }
    Ok(SceneTruth {
        spec: spec.clone(),
        frames,
        masks,
        tags,
        caption: caption(spec),
    })
}

/// Builds one question of the given template about `object`.
pub fn make_question(
    scene: &SceneTruth,
    template: QuestionTemplate,
    object: usize,
) -> Result<QaItem, SceneError> {
    let objs = &scene.spec.objects;
    if template != QuestionTemplate::CountObjects && object >= objs.len() {
        return Err(SceneError::NoObjects);
    }
    let item = |question: String, object: Option<usize>, answer: String| QaItem {
        kind: template.kind(),
        question,
        object,
        answer,
    };
    Ok(match template {
        QuestionTemplate::CountObjects => item(
            "how many objects appear?".into(),
            None,
            number_word(scene.visible_objects().len()),
        ),
        QuestionTemplate::ColorOfShape => {
            let o = &objs[object];
            if objs.iter().filter(|p| p.shape == o.shape).count() != 1 {
                return Err(SceneError::NoApplicableQuestion);
            }
            item(
                format!("what color is the {}?", o.shape.name()),
                None,
                o.color.name.clone(),
            )
        }
        QuestionTemplate::WhereIsColor => {
            let o = &objs[object];
            if objs.iter().filter(|p| p.color == o.color).count() != 1 {
                return Err(SceneError::NoApplicableQuestion);
            }
            item(
                format!("where is the {} object?", o.color.name),
                None,
                scene.quadrant_word(object).to_string(),
            )
        }
        QuestionTemplate::ReferColor => item(
            format!("what color is {OBJECT_PLACEHOLDER}?"),
            Some(object),
            objs[object].color.name.clone(),
        ),
        QuestionTemplate::ReferShape => item(
            format!("what shape is {OBJECT_PLACEHOLDER}?"),
            Some(object),
            objs[object].shape.name().to_string(),
        ),
        QuestionTemplate::ReferDirection => item(
            format!("which direction does {OBJECT_PLACEHOLDER} move?"),
            Some(object),
            objs[object].direction_word().to_string(),
        ),
        QuestionTemplate::ReferWhere => item(
            format!("where is {OBJECT_PLACEHOLDER}?"),
            Some(object),
            scene.quadrant_word(object).to_string(),
        ),
    })
}

/// Draws one question of `kind`, choosing template and target with `seed`.
pub fn make_qa(scene: &SceneTruth, kind: QaKind, seed: u64) -> Result<QaItem, SceneError> {
    let mut rng = SeededRng::derived(seed, 0x9a);
    let visible = scene.visible_objects();
    match kind {
        QaKind::General => make_question(scene, QuestionTemplate::CountObjects, 0),
        QaKind::ObjectDetail => {
            let mut options = Vec::new();
            for &o in &visible {
                for t in [QuestionTemplate::ColorOfShape, QuestionTemplate::WhereIsColor] {
                    if let Ok(q) = make_question(scene, t, o) {
                        options.push(q);
                    }
                }
            }
            if visible.is_empty() {
                return Err(SceneError::NoObjects);
            }
            if options.is_empty() {
                return Err(SceneError::NoApplicableQuestion);
            }
            Ok(options.swap_remove(rng.below(0, options.len())))
        }
        QaKind::Referring => {
            if visible.is_empty() {
                return Err(SceneError::NoObjects);
            }
            let o = visible[rng.below(0, visible.len())];
            let t = [
                QuestionTemplate::ReferColor,
                QuestionTemplate::ReferShape,
                QuestionTemplate::ReferDirection,
            ][rng.below(0, 3)];
            make_question(scene, t, o)
        }
    }
}

/// How objects are placed by [`random_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Anywhere in the frame.
    Free,
    /// One object per quadrant, each with a distinct color from the first
    /// four palette entries; objects never leave their quadrant.
    Quadrants,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneOptions {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub layout: Layout,
    /// Reject placements whose masks touch in any frame or across
    /// consecutive frames.
    pub disjoint: bool,
    /// Integer speeds are drawn from `-max_speed..=max_speed` per axis.
    pub max_speed: i64,
    pub min_size: f64,
    pub max_size: f64,
    pub noise_tag_rate: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 64,
            width: 64,
            min_objects: 1,
            max_objects: 3,
            layout: Layout::Free,
            disjoint: true,
            max_speed: 1,
            min_size: 6.0,
            max_size: 10.0,
            noise_tag_rate: 0.2,
        }
    }
}

impl SceneOptions {
    /// Four-object quadrant scenes used for referring experiments.
    pub fn quadrants(frames: usize) -> Self {
        Self {
            frames,
            min_objects: 4,
            max_objects: 4,
            layout: Layout::Quadrants,
            max_speed: 1,
            min_size: 5.0,
            max_size: 7.0,
            ..Self::default()
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

fn stays_inside(o: &ObjectSpec, frames: usize, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> bool {
    let e = o.half_extent();
    debug_assert!(o.exit <= frames);
    [o.entry, o.exit - 1].iter().all(|&t| {
        let (cx, cy) = o.center_at(t);
        cx - e >= x_lo && cx + e <= x_hi && cy - e >= y_lo && cy + e <= y_hi
    })
}

/// True when no two unoccluded object shapes share a pixel in any frame,
/// nor between one object on a frame and another on the next frame.
pub fn trajectories_disjoint(spec: &SceneSpec) -> bool {
    let raw: Vec<Vec<Mask>> = spec
        .objects
        .iter()
        .map(|o| (0..spec.frames).map(|t| render_mask(spec, o, t)).collect())
        .collect();
    let n = raw.len();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            for t in 0..spec.frames {
                if a < b && raw[a][t].intersection(&raw[b][t]) > 0 {
                    return false;
                }
                if t + 1 < spec.frames && raw[a][t].intersection(&raw[b][t + 1]) > 0 {
                    return false;
                }
            }
        }
    }
    true
}

/// Samples a scene spec. Every object stays fully inside the frame for the
/// whole video.
pub fn random_scene(seed: u64, opts: &SceneOptions) -> Result<SceneSpec, SceneError> {
    let mut rng = SeededRng::derived(seed, 0x5ce);
    let colors = palette();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let n = rng.below(opts.min_objects, opts.max_objects + 1);
        let mut color_order: Vec<usize> = match opts.layout {
            Layout::Quadrants => (0..4).collect(),
            Layout::Free => (0..colors.len()).collect(),
        };
        rng.shuffle(&mut color_order);
        let mut quadrant_order = [0usize, 1, 2, 3];
        rng.shuffle(&mut quadrant_order);
        let mut objects = Vec::with_capacity(n);
        let mut ok = true;
        for i in 0..n {
            let shape = ShapeKind::ALL[rng.below(0, 3)];
            let size = rng.uniform(opts.min_size, opts.max_size);
            let size = libm::round(size * 2.0) / 2.0;
            let velocity = (
                rng.int_range(-opts.max_speed, opts.max_speed) as f64,
                rng.int_range(-opts.max_speed, opts.max_speed) as f64,
            );
            let (x_lo, x_hi, y_lo, y_hi) = match opts.layout {
                Layout::Free => (0.0, opts.width as f64, 0.0, opts.height as f64),
                Layout::Quadrants => {
                    let (hw, hh) = (opts.width as f64 / 2.0, opts.height as f64 / 2.0);
                    let q = quadrant_order[i % 4];
                    let (qx, qy) = ((q % 2) as f64, (q / 2) as f64);
                    // One pixel of clearance from the quadrant borders.
                    (qx * hw + 1.0, (qx + 1.0) * hw - 1.0, qy * hh + 1.0, (qy + 1.0) * hh - 1.0)
                }
            };
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let start = (
                    libm::round(rng.uniform(x_lo, x_hi)),
                    libm::round(rng.uniform(y_lo, y_hi)),
                );
                let cand = ObjectSpec {
                    shape,
                    color: colors[color_order[i % color_order.len()]].clone(),
                    size,
                    start,
                    velocity,
                    entry: 0,
                    exit: opts.frames,
                };
                if stays_inside(&cand, opts.frames, x_lo, x_hi, y_lo, y_hi) {
                    placed = Some(cand);
                    break;
                }
            }
            match placed {
                Some(o) => objects.push(o),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let spec = SceneSpec {
            seed,
            frames: opts.frames,
            height: opts.height,
            width: opts.width,
            objects,
            background: [24, 24, 24],
            noise_tag_rate: opts.noise_tag_rate,
        };
        if spec.validate().is_err() {
            continue;
        }
        if opts.disjoint && !trajectories_disjoint(&spec) {
            continue;
        }
        return Ok(spec);
    }
    Err(SceneError::Placement(PLACEMENT_ATTEMPTS))
}
