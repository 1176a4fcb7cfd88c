//! Rasterizes synthetic benign and attack pages.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::phrases::{AttackFamily, BENIGN_NAV, BENIGN_TOPICS, SYLLABLES};

pub type Rgb = [u8; 3];

/// RGB8 drawing surface.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, bg: Rgb) -> Self {
        let pixels = bg.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    /// Fills the clipped rectangle.
    pub fn fill(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        let x0 = x.clamp(0, self.width as i64) as usize;
        let x1 = (x + w).clamp(0, self.width as i64) as usize;
        let y0 = y.clamp(0, self.height as i64) as usize;
        let y1 = (y + h).clamp(0, self.height as i64) as usize;
        if x0 >= x1 {
            return;
        }
        for row in y0..y1 {
            let base = (row * self.width) * 3;
            for p in self.pixels[base + x0 * 3..base + x1 * 3].chunks_exact_mut(3) {
                p.copy_from_slice(&c);
            }
        }
    }

    pub fn frame(&mut self, x: i64, y: i64, w: i64, h: i64, t: i64, c: Rgb) {
        self.fill(x, y, w, t, c);
        self.fill(x, y + h - t, w, t, c);
        self.fill(x, y, t, h, c);
        self.fill(x + w - t, y, t, h, c);
    }

    /// Draws `text` with the 8x8 font at integer `scale`; returns the width
    /// in pixels. Characters without a glyph render as blanks.
    pub fn text(&mut self, x: i64, y: i64, text: &str, scale: i64, c: Rgb) -> i64 {
        let mut cx = x;
        for ch in text.chars() {
            if let Some(glyph) = BASIC_FONTS.get(ch) {
                for (row, bits) in glyph.iter().enumerate() {
                    for col in 0..8 {
                        if bits >> col & 1 == 1 {
                            self.fill(cx + col * scale, y + row as i64 * scale, scale, scale, c);
                        }
                    }
                }
            }
            cx += 8 * scale;
        }
        cx - x
    }

    /// Filled isosceles triangle pointing up.
    pub fn triangle(&mut self, cx: i64, top: i64, h: i64, c: Rgb) {
        for dy in 0..h {
            let half = dy / 2 + 1;
            self.fill(cx - half, top + dy, 2 * half, 1, c);
        }
    }

    pub fn disc(&mut self, cx: i64, cy: i64, r: i64, c: Rgb) {
        for dy in -r..=r {
            let half = ((r * r - dy * dy) as f64).sqrt() as i64;
            self.fill(cx - half, cy + dy, 2 * half + 1, 1, c);
        }
    }
}

/// Greedy word wrap to at most `max_chars` per line.
pub fn wrap(text: &str, max_chars: usize) -> Vec<String> {
    let max_chars = max_chars.max(1);
    let mut lines = Vec::new();
    let mut cur = String::new();
    for w in text.split_whitespace() {
        let w: String = w.chars().take(max_chars).collect();
        if !cur.is_empty() && cur.chars().count() + 1 + w.chars().count() > max_chars {
            lines.push(std::mem::take(&mut cur));
        }
        if !cur.is_empty() {
            cur.push(' ');
        }
        cur.push_str(&w);
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    lines
}

/// Records drawn text in reading order.
struct Page {
    canvas: Canvas,
    lines: Vec<String>,
}

impl Page {
    /// Wraps and draws a paragraph inside a column; returns the next y.
    fn paragraph(&mut self, x: i64, y: i64, width: i64, text: &str, scale: i64, c: Rgb) -> i64 {
        let max_chars = (width / (8 * scale)).max(1) as usize;
        let mut y = y;
        for line in wrap(text, max_chars) {
            if y + 8 * scale > self.canvas.height as i64 {
                break;
            }
            self.canvas.text(x, y, &line, scale, c);
            self.lines.push(line);
            y += 11 * scale;
        }
        y
    }

    fn label(&mut self, x: i64, y: i64, text: &str, scale: i64, c: Rgb) -> i64 {
        if y + 8 * scale > self.canvas.height as i64 || y < 0 {
            return 0;
        }
        let max = ((self.canvas.width as i64 - x) / (8 * scale)).max(0) as usize;
        let t: String = text.chars().take(max).collect();
        if t.is_empty() {
            return 0;
        }
        self.lines.push(t.clone());
        self.canvas.text(x, y, &t, scale, c)
    }

    fn button(&mut self, x: i64, y: i64, text: &str, scale: i64, bg: Rgb, fg: Rgb) -> i64 {
        let w = (text.chars().count() as i64 * 8 + 12) * scale;
        let h = 14 * scale;
        self.canvas.fill(x, y, w, h, bg);
        self.label(x + 6 * scale, y + 3 * scale, text, scale, fg);
        w
    }
}

fn color(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> Rgb {
    [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)]
}

fn jitter(c: Rgb, rng: &mut ChaCha8Rng, by: i16) -> Rgb {
    c.map(|v| (v as i16 + rng.gen_range(-by..=by)).clamp(0, 255) as u8)
}

pub fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("syllables")).collect()
}

fn text_scale(w: usize, h: usize) -> i64 {
    (w.min(h) as i64 / 360).clamp(1, 4)
}

/// Background, accent, panel and ink colours typical of `family`.
fn family_palette(family: AttackFamily, rng: &mut ChaCha8Rng) -> (Rgb, Rgb, Rgb, Rgb) {
    match family {
        AttackFamily::TechSupport => (
            [rng.gen_range(0..60), rng.gen_range(40..120), rng.gen_range(150..230)],
            [rng.gen_range(180..255), rng.gen_range(0..50), rng.gen_range(0..50)],
            color(rng, 225, 255),
            [20, 20, 30],
        ),
        AttackFamily::FakeDownload => (
            color(rng, 10, 50),
            [rng.gen_range(0..60), rng.gen_range(150..220), rng.gen_range(40..110)],
            color(rng, 40, 80),
            [235, 235, 235],
        ),
        AttackFamily::NotificationBait => (
            color(rng, 0, 40),
            [rng.gen_range(20..80), rng.gen_range(100..160), rng.gen_range(200..255)],
            color(rng, 230, 255),
            [30, 30, 30],
        ),
        AttackFamily::FakeUpdate => (
            color(rng, 150, 200),
            [rng.gen_range(200..255), rng.gen_range(100..170), rng.gen_range(0..40)],
            color(rng, 235, 255),
            [25, 25, 25],
        ),
        AttackFamily::Sweepstakes => (
            [rng.gen_range(120..220), rng.gen_range(0..60), rng.gen_range(120..220)],
            [rng.gen_range(220..255), rng.gen_range(180..230), rng.gen_range(0..40)],
            color(rng, 235, 255),
            [40, 10, 40],
        ),
    }
}

/// Per-campaign visual and textual identity.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub id: String,
    pub family: AttackFamily,
    pub brand: String,
    pub panel: Rgb,
    pub ink: Rgb,
    pub title: &'static str,
    pub phrases: Vec<&'static str>,
    /// Dialog centre as fractions of the page.
    pub anchor: (f64, f64),
    pub overlay: bool,
}

impl Campaign {
    pub fn derive(id: &str, index: usize, rng: &mut ChaCha8Rng) -> Self {
        let family = AttackFamily::ALL[index % AttackFamily::ALL.len()];
        let (_, _, panel, ink) = family_palette(family, rng);
        let mut pool = family.phrases().to_vec();
        pool.shuffle(rng);
        pool.truncate(6);
        Self {
            id: id.to_string(),
            family,
            brand: pseudo_word(rng, 2),
            panel,
            ink,
            title: family.titles().choose(rng).expect("titles"),
            phrases: pool,
            anchor: (rng.gen_range(0.35..0.65), rng.gen_range(0.35..0.6)),
            overlay: rng.gen_bool(0.5),
        }
    }
}

/// Page text drawn independently of the class. Decoy pages of either
/// class show only this text, so it carries no label information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoyText {
    pub title: &'static str,
    pub phrases: Vec<&'static str>,
    pub button: &'static str,
}

impl DecoyText {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let family = *AttackFamily::ALL.choose(rng).expect("families");
        let phrases = (0..4)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    *family.phrases().choose(rng).expect("phrases")
                } else {
                    *BENIGN_TOPICS.choose(rng).expect("topics").1.choose(rng).expect("pool")
                }
            })
            .collect();
        Self {
            title: family.titles().choose(rng).expect("titles"),
            phrases,
            button: family.buttons().choose(rng).expect("buttons"),
        }
    }
}

/// Renders an attack page for `campaign`; returns pixels and drawn text.
pub fn render_attack(
    w: usize,
    h: usize,
    campaign: &Campaign,
    decoy: Option<&DecoyText>,
    rng: &mut ChaCha8Rng,
) -> (Canvas, Vec<String>) {
    let s = text_scale(w, h);
    let (wi, hi) = (w as i64, h as i64);
    // Colours vary per page within the family palette.
    let (background, accent, _, _) = family_palette(campaign.family, rng);
    let mut page = Page {
        canvas: Canvas::new(w, h, jitter(background, rng, 12)),
        lines: Vec::new(),
    };
    let ink = campaign.ink;
    let accent = jitter(accent, rng, 15);

    match campaign.family {
        AttackFamily::Sweepstakes => {
            for _ in 0..rng.gen_range(20..60) {
                let c = color(rng, 60, 255);
                let (x, y) = (rng.gen_range(0..wi), rng.gen_range(0..hi));
                page.canvas.fill(x, y, 4 * s, 10 * s, c);
            }
        }
        AttackFamily::TechSupport if decoy.is_none() => {
            let mut y = 6 * s;
            for phrase in campaign.phrases.iter().take(3) {
                y = page.paragraph(6 * s, y, wi - 12 * s, phrase, s, [240, 240, 250]);
            }
        }
        _ => {}
    }

    let dw = (wi * rng.gen_range(45..70) / 100).max(160 * s).min(wi - 4);
    let n_phr = decoy.map_or_else(|| rng.gen_range(2..=4), |d| d.phrases.len());
    let dh = ((30 + 12 * n_phr as i64 * 2 + 30) * s).min(hi - 4);
    let dx = ((wi as f64 * campaign.anchor.0) as i64 - dw / 2).clamp(0, (wi - dw).max(0));
    let dy = ((hi as f64 * campaign.anchor.1) as i64 - dh / 2).clamp(0, (hi - dh).max(0));
    if campaign.overlay {
        // Dim everything behind the dialog.
        for p in page.canvas.pixels.chunks_exact_mut(3) {
            for v in p {
                *v /= 2;
            }
        }
    }
    page.canvas.fill(dx + 3 * s, dy + 3 * s, dw, dh, [0, 0, 0]);
    page.canvas.fill(dx, dy, dw, dh, campaign.panel);
    page.canvas.fill(dx, dy, dw, 16 * s, accent);
    page.canvas.frame(dx, dy, dw, dh, s.max(1), jitter(accent, rng, 30));
    page.label(dx + 6 * s, dy + 4 * s, decoy.map_or(campaign.title, |d| d.title), s, [255, 255, 255]);
    let icon_r = 8 * s;
    match campaign.family {
        AttackFamily::TechSupport | AttackFamily::FakeUpdate => {
            page.canvas.triangle(dx + 8 * s + icon_r, dy + 22 * s, 2 * icon_r, [230, 180, 0])
        }
        _ => page.canvas.disc(dx + 8 * s + icon_r, dy + 22 * s + icon_r, icon_r, accent),
    }
    let tx = dx + 12 * s + 2 * icon_r;
    let mut y = dy + 22 * s;
    let chosen = match decoy {
        Some(d) => d.phrases.clone(),
        None => {
            let mut c = campaign.phrases.clone();
            c.shuffle(rng);
            c
        }
    };
    for phrase in chosen.iter().take(n_phr) {
        y = page.paragraph(tx, y, dw - (tx - dx) - 6 * s, phrase, s, ink);
    }
    if campaign.family == AttackFamily::FakeUpdate {
        let filled = rng.gen_range(10..90);
        page.canvas.fill(tx, y, dw / 2, 6 * s, [200, 200, 200]);
        page.canvas.fill(tx, y, dw / 2 * filled / 100, 6 * s, accent);
    }
    let by = dy + dh - 20 * s;
    let mut bx = dx + dw - 8 * s;
    let buttons = decoy.map_or_else(|| campaign.family.buttons().to_vec(), |d| vec![d.button]);
    for label in buttons.iter().take(rng.gen_range(1..=2)) {
        bx -= (label.chars().count() as i64 * 8 + 12) * s + 6 * s;
        page.button(bx.max(dx), by, label, s, accent, [255, 255, 255]);
    }
    if decoy.is_none() {
        let brand_y = hi - 14 * s;
        page.label(4 * s, brand_y, &format!("{} secure", campaign.brand), s, jitter(ink, rng, 20));
    }
    (page.canvas, page.lines)
}

/// Renders a neutral page. A decoy page shows only the decoy text in the
/// usual header, column and button layout.
pub fn render_benign(w: usize, h: usize, decoy: Option<&DecoyText>, rng: &mut ChaCha8Rng) -> (Canvas, Vec<String>) {
    let s = text_scale(w, h);
    let (wi, hi) = (w as i64, h as i64);
    let dark = rng.gen_bool(0.15);
    let bg = if dark { color(rng, 20, 45) } else { color(rng, 235, 255) };
    let ink = if dark { color(rng, 200, 230) } else { color(rng, 20, 70) };
    let mut page = Page {
        canvas: Canvas::new(w, h, bg),
        lines: Vec::new(),
    };
    let (topic, pool) = BENIGN_TOPICS.choose(rng).expect("topics");
    let site = format!("{} {}", pseudo_word(rng, 2), topic);
    let header = color(rng, 30, 200);
    let hh = 22 * s;
    page.canvas.fill(0, 0, wi, hh, header);
    if decoy.is_none() {
        let mut x = page.label(6 * s, 7 * s, &site, s, [255, 255, 255]) + 20 * s;
        let mut nav = BENIGN_NAV.to_vec();
        nav.shuffle(rng);
        for item in nav.iter().take(rng.gen_range(2..6)) {
            if x + (item.len() as i64 + 2) * 8 * s > wi {
                break;
            }
            x += page.label(x, 7 * s, item, s, [235, 235, 235]) + 12 * s;
        }
    }

    let margin = 10 * s;
    let mut top = hh + 10 * s;
    if let Some(d) = decoy {
        top = page.paragraph(margin, top, wi - 2 * margin, d.title, s, ink) + 4 * s;
    }
    let mut decoy_phrases = decoy.map(|d| d.phrases.iter());

    let cols = if wi > 700 { rng.gen_range(1..=2) } else { 1 };
    let col_w = (wi - margin * (cols as i64 + 1)) / cols as i64;
    for c in 0..cols {
        let cx = margin + c as i64 * (col_w + margin);
        let mut y = top;
        while y < hi - 40 * s {
            if rng.gen_bool(0.3) {
                let ih = rng.gen_range(30..80) * s;
                let base = color(rng, 60, 220);
                page.canvas.fill(cx, y, col_w, ih, base);
                page.canvas.fill(cx + col_w / 4, y + ih / 4, col_w / 2, ih / 2, jitter(base, rng, 40));
                y += ih + 8 * s;
            } else {
                let phrase = match decoy_phrases.as_mut() {
                    Some(it) => match it.next() {
                        Some(p) => p,
                        None => break,
                    },
                    None => pool.choose(rng).expect("pool"),
                };
                y = page.paragraph(cx, y, col_w, phrase, s, ink) + 6 * s;
            }
        }
    }
    if let Some(d) = decoy {
        page.button(margin, hi - 30 * s, d.button, s, header, [255, 255, 255]);
    } else if rng.gen_bool(0.15) {
        let bh = 24 * s;
        page.canvas.fill(0, hi - bh, wi, bh, if dark { [60, 60, 70] } else { [50, 50, 60] });
        page.label(6 * s, hi - bh + 8 * s, "We use cookies to improve your experience", s, [240, 240, 240]);
        page.button(wi - 80 * s, hi - bh + 5 * s, "Accept", s, [90, 140, 220], [255, 255, 255]);
    }
    (page.canvas, page.lines)
}
