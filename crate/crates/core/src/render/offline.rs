//! Browserless renderer with a deliberately small, fully specified box model.
//!
//! Supported: inline `style` attributes with `display` (`none`, `block`,
//! `inline`, `inline-block`), `position` (`static`, `relative`, `absolute`,
//! `fixed`), `left`, `top`, `width`, `height` (px or %), `z-index`,
//! `background`/`background-color`, `color`, `font-size`, `padding`, `margin`
//! and `border`. Widths and heights are border-box sizes. `<style>` sheets and
//! class selectors are ignored.
//!
//! Text uses fixed metrics: every character advances `0.5 × font-size`, every
//! line box is `1.25 × font-size` tall, and words break greedily at spaces.
//! Glyphs are painted as solid cells, so screenshots are schematic but their
//! geometry is exact and reproducible.

use std::collections::HashMap;
use std::time::Instant;

use image::{imageops, Rgba, RgbaImage};

use super::{RenderError, RenderJob, RenderResult, Renderer, Timings, Viewport};
use crate::geometry::{
    grid_points, line_boxes, visibility_from_hits, RawPayload, RawRecord, RawRect, RawVisibility,
};
use crate::markup::{self, decode_entities, Node};
use crate::model::{Dims, ElementKind, FineLabel, Kind};

pub const CHAR_ADVANCE: f64 = 0.5;
pub const LINE_HEIGHT: f64 = 1.25;
pub const DEFAULT_FONT_SIZE: f64 = 16.0;

pub fn advance(font_size: f64) -> f64 {
    font_size * CHAR_ADVANCE
}

pub fn line_height(font_size: f64) -> f64 {
    font_size * LINE_HEIGHT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Display {
    None,
    Block,
    Inline,
    InlineBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Static,
    Relative,
    Absolute,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Len {
    Px(f64),
    Pct(f64),
}

impl Len {
    fn resolve(self, basis: f64) -> f64 {
        match self {
            Len::Px(v) => v,
            Len::Pct(p) => basis * p / 100.0,
        }
    }
}

type Color = [u8; 4];

const BLACK: Color = [20, 20, 20, 255];
const WHITE: Color = [255, 255, 255, 255];

#[derive(Debug, Clone)]
struct Style {
    display: Display,
    position: Position,
    left: Option<Len>,
    top: Option<Len>,
    width: Option<Len>,
    height: Option<Len>,
    z: Option<i32>,
    background: Option<Color>,
    color: Color,
    font_size: f64,
    /// top, right, bottom, left
    padding: [f64; 4],
    margin: [f64; 4],
    border: Option<(f64, Color)>,
}

fn parse_len(v: &str) -> Option<Len> {
    let v = v.trim();
    if let Some(p) = v.strip_suffix('%') {
        return p.trim().parse().ok().map(Len::Pct);
    }
    let n = v.strip_suffix("px").unwrap_or(v).trim();
    n.parse().ok().map(Len::Px)
}

fn parse_px(v: &str) -> Option<f64> {
    match parse_len(v)? {
        Len::Px(p) => Some(p),
        Len::Pct(_) => None,
    }
}

fn parse_box(v: &str) -> Option<[f64; 4]> {
    let parts: Option<Vec<f64>> = v.split_whitespace().map(parse_px).collect();
    match parts?.as_slice() {
        [a] => Some([*a; 4]),
        [v, h] => Some([*v, *h, *v, *h]),
        [t, h, b] => Some([*t, *h, *b, *h]),
        [t, r, b, l] => Some([*t, *r, *b, *l]),
        _ => None,
    }
}

fn hex(s: &str) -> Option<u8> {
    u8::from_str_radix(s, 16).ok()
}

fn parse_color(v: &str) -> Option<Color> {
    let v = v.trim().to_ascii_lowercase();
    if let Some(h) = v.strip_prefix('#') {
        return match h.len() {
            3 => {
                let c: Vec<u8> = h.chars().filter_map(|c| hex(&format!("{c}{c}"))).collect();
                (c.len() == 3).then(|| [c[0], c[1], c[2], 255])
            }
            6 => Some([hex(&h[0..2])?, hex(&h[2..4])?, hex(&h[4..6])?, 255]),
            8 => Some([
                hex(&h[0..2])?,
                hex(&h[2..4])?,
                hex(&h[4..6])?,
                hex(&h[6..8])?,
            ]),
            _ => None,
        };
    }
    if let Some(args) = v.strip_prefix("rgba(").or_else(|| v.strip_prefix("rgb(")) {
        let nums: Vec<f64> = args
            .trim_end_matches(')')
            .split(',')
            .filter_map(|p| p.trim().parse().ok())
            .collect();
        return match nums.as_slice() {
            [r, g, b] => Some([*r as u8, *g as u8, *b as u8, 255]),
            [r, g, b, a] => Some([
                *r as u8,
                *g as u8,
                *b as u8,
                (a.clamp(0.0, 1.0) * 255.0).round() as u8,
            ]),
            _ => None,
        };
    }
    let named = match v.as_str() {
        "black" => BLACK,
        "white" => WHITE,
        "red" => [220, 40, 40, 255],
        "green" => [40, 150, 60, 255],
        "blue" => [40, 80, 220, 255],
        "orange" => [255, 153, 0, 255],
        "yellow" => [250, 220, 60, 255],
        "navy" => [20, 30, 90, 255],
        "gray" | "grey" => [128, 128, 128, 255],
        "lightgray" | "lightgrey" => [211, 211, 211, 255],
        "darkgray" | "darkgrey" => [90, 90, 90, 255],
        "whitesmoke" => [245, 245, 245, 255],
        "transparent" => [0, 0, 0, 0],
        _ => return None,
    };
    Some(named)
}

const BLOCK_TAGS: &[&str] = &[
    "html",
    "body",
    "div",
    "p",
    "section",
    "article",
    "header",
    "footer",
    "main",
    "nav",
    "aside",
    "form",
    "fieldset",
    "ul",
    "ol",
    "li",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "table",
    "thead",
    "tbody",
    "tfoot",
    "tr",
    "dl",
    "dt",
    "dd",
    "figure",
    "figcaption",
    "blockquote",
    "pre",
    "hr",
    "address",
    "legend",
    "details",
    "summary",
];
const HIDDEN_TAGS: &[&str] = &[
    "head", "script", "style", "title", "meta", "link", "template", "noscript", "option",
    "optgroup", "base",
];
const REPLACED_TAGS: &[&str] = &["img", "input", "select", "textarea"];

fn default_style(tag: &str, parent: Option<&Style>) -> Style {
    let font_size = match tag {
        "h1" => 32.0,
        "h2" => 24.0,
        "h3" => 20.0,
        "h4" => 18.0,
        "h6" | "small" => 14.0,
        _ => parent.map_or(DEFAULT_FONT_SIZE, |p| p.font_size),
    };
    let display = if HIDDEN_TAGS.contains(&tag) {
        Display::None
    } else if BLOCK_TAGS.contains(&tag) {
        Display::Block
    } else if REPLACED_TAGS.contains(&tag) || matches!(tag, "button" | "td" | "th") {
        Display::InlineBlock
    } else {
        Display::Inline
    };
    let mut s = Style {
        display,
        position: Position::Static,
        left: None,
        top: None,
        width: None,
        height: None,
        z: None,
        background: None,
        color: parent.map_or(BLACK, |p| p.color),
        font_size,
        padding: [0.0; 4],
        margin: [0.0; 4],
        border: None,
    };
    match tag {
        "ul" | "ol" => s.padding[3] = 24.0,
        "hr" => {
            s.height = Some(Len::Px(1.0));
            s.background = Some([200, 200, 200, 255]);
        }
        "button" => {
            s.padding = [4.0, 8.0, 4.0, 8.0];
            s.background = Some([238, 238, 238, 255]);
            s.border = Some((1.0, [150, 150, 150, 255]));
        }
        "td" | "th" => s.padding = [4.0; 4],
        _ => {}
    }
    s
}

fn apply_inline_style(s: &mut Style, decl: &str) {
    for item in decl.split(';') {
        let Some((prop, value)) = item.split_once(':') else {
            continue;
        };
        let prop = prop.trim().to_ascii_lowercase();
        let value = value.trim();
        match prop.as_str() {
            "display" => {
                s.display = match value {
                    "none" => Display::None,
                    "block" | "flex" | "grid" | "list-item" | "table" | "table-row" => {
                        Display::Block
                    }
                    "inline" => Display::Inline,
                    "inline-block" | "inline-flex" | "table-cell" => Display::InlineBlock,
                    _ => s.display,
                }
            }
            "position" => {
                s.position = match value {
                    "relative" => Position::Relative,
                    "absolute" => Position::Absolute,
                    "fixed" | "sticky" => Position::Fixed,
                    _ => Position::Static,
                }
            }
            "left" => s.left = parse_len(value),
            "top" => s.top = parse_len(value),
            "width" => s.width = parse_len(value),
            "height" => s.height = parse_len(value),
            "z-index" => s.z = value.parse().ok(),
            "background" | "background-color" => {
                s.background = value
                    .split_whitespace()
                    .find_map(parse_color)
                    .or(s.background)
            }
            "color" => s.color = parse_color(value).unwrap_or(s.color),
            "font-size" => s.font_size = parse_px(value).unwrap_or(s.font_size),
            "padding" => s.padding = parse_box(value).unwrap_or(s.padding),
            "margin" => s.margin = parse_box(value).unwrap_or(s.margin),
            "padding-left" => s.padding[3] = parse_px(value).unwrap_or(s.padding[3]),
            "padding-top" => s.padding[0] = parse_px(value).unwrap_or(s.padding[0]),
            "margin-bottom" => s.margin[2] = parse_px(value).unwrap_or(s.margin[2]),
            "margin-top" => s.margin[0] = parse_px(value).unwrap_or(s.margin[0]),
            "border" => {
                let width = value.split_whitespace().find_map(parse_px).unwrap_or(1.0);
                let color = value
                    .split_whitespace()
                    .find_map(parse_color)
                    .unwrap_or(BLACK);
                s.border = (value != "none" && width > 0.0).then_some((width, color));
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone)]
enum Child {
    El(usize),
    Text(String),
}

#[derive(Debug, Clone)]
struct DNode {
    tag: String,
    attrs: Vec<(String, Option<String>)>,
    parent: Option<usize>,
    children: Vec<Child>,
    style: Style,
    hidden: bool,
    /// (stacking z, positioned, tree order)
    paint_key: (i32, u8, usize),
}

impl DNode {
    fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_deref().unwrap_or(""))
    }

    fn has_attr(&self, name: &str) -> bool {
        self.attrs.iter().any(|(n, _)| n == name)
    }

    fn is_replaced(&self) -> bool {
        REPLACED_TAGS.contains(&self.tag.as_str())
    }

    fn out_of_flow(&self) -> bool {
        matches!(self.style.position, Position::Absolute | Position::Fixed)
    }
}

struct Dom {
    nodes: Vec<DNode>,
}

impl Dom {
    fn build(doc: &markup::Document) -> Dom {
        let mut dom = Dom {
            nodes: vec![DNode {
                tag: "#root".into(),
                attrs: Vec::new(),
                parent: None,
                children: Vec::new(),
                style: default_style("div", None),
                hidden: false,
                paint_key: (0, 0, 0),
            }],
        };
        dom.nodes[0].style.display = Display::Block;
        let children = dom.add_children(&doc.nodes, 0);
        dom.nodes[0].children = children;
        dom
    }

    fn add_children(&mut self, nodes: &[Node], parent: usize) -> Vec<Child> {
        let mut out = Vec::new();
        for node in nodes {
            match node {
                Node::Text(t) => out.push(Child::Text(decode_entities(t))),
                Node::Element(el) => {
                    let p = &self.nodes[parent];
                    let mut style = default_style(&el.name, Some(&p.style));
                    if el.name == "input" && el.attr("type") == Some("hidden") {
                        style.display = Display::None;
                    }
                    if let Some(decl) = el.attr("style") {
                        apply_inline_style(&mut style, &decode_entities(decl));
                    }
                    if matches!(style.position, Position::Absolute | Position::Fixed)
                        && style.display != Display::None
                    {
                        style.display =
                            if el.name == "img" || REPLACED_TAGS.contains(&el.name.as_str()) {
                                Display::InlineBlock
                            } else {
                                Display::Block
                            };
                    }
                    let hidden = p.hidden || style.display == Display::None;
                    let positioned = style.position != Position::Static;
                    let z = match (positioned, style.z) {
                        (true, Some(z)) => z,
                        _ => p.paint_key.0,
                    };
                    let pos_flag = u8::from(positioned) | p.paint_key.1;
                    let id = self.nodes.len();
                    self.nodes.push(DNode {
                        tag: el.name.clone(),
                        attrs: el
                            .attrs
                            .iter()
                            .map(|a| (a.name.clone(), a.value.clone()))
                            .collect(),
                        parent: Some(parent),
                        children: Vec::new(),
                        style,
                        hidden,
                        paint_key: (z, pos_flag, id),
                    });
                    let kids = self.add_children(&el.children, id);
                    self.nodes[id].children = kids;
                    out.push(Child::El(id));
                }
                _ => {}
            }
        }
        out
    }

    fn is_within(&self, mut node: usize, ancestor: usize) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.nodes[node].parent {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    fn positioned_ancestor(&self, id: usize) -> usize {
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            if self.nodes[p].style.position != Position::Static || p == 0 {
                return p;
            }
            cur = self.nodes[p].parent;
        }
        0
    }
}

#[derive(Debug, Clone)]
struct Word {
    owner: usize,
    text: String,
    rect: RawRect,
    space_before: bool,
    font_size: f64,
    color: Color,
}

#[derive(Debug, Clone, Default)]
struct Geo {
    rect: Option<RawRect>,
    frags: Vec<RawRect>,
    shift: (f64, f64),
}

#[derive(Debug, Clone)]
enum Tok {
    Word {
        text: String,
        owner: usize,
        chain: Vec<usize>,
    },
    Space,
    Atom {
        id: usize,
        chain: Vec<usize>,
    },
    Break {
        font_size: f64,
    },
}

struct Engine<'d> {
    dom: &'d Dom,
    geo: Vec<Geo>,
    words: Vec<Word>,
    record: bool,
    viewport: Viewport,
}

struct Piece {
    tok: usize,
    w: f64,
    h: f64,
}

impl<'d> Engine<'d> {
    fn new(dom: &'d Dom, viewport: Viewport) -> Self {
        Engine {
            dom,
            geo: vec![Geo::default(); dom.nodes.len()],
            words: Vec::new(),
            record: true,
            viewport,
        }
    }

    fn style(&self, id: usize) -> &Style {
        &self.dom.nodes[id].style
    }

    fn collect_inline(
        &self,
        children: &[Child],
        owner: usize,
        chain: &mut Vec<usize>,
        out: &mut Vec<Tok>,
    ) {
        for child in children {
            match child {
                Child::Text(t) => {
                    if t.starts_with(char::is_whitespace) {
                        out.push(Tok::Space);
                    }
                    let mut first = true;
                    for word in t.split_whitespace() {
                        if !first {
                            out.push(Tok::Space);
                        }
                        first = false;
                        out.push(Tok::Word {
                            text: word.to_string(),
                            owner,
                            chain: chain.clone(),
                        });
                    }
                    if t.ends_with(char::is_whitespace) && !t.trim().is_empty() {
                        out.push(Tok::Space);
                    }
                }
                Child::El(id) => {
                    let n = &self.dom.nodes[*id];
                    if n.hidden {
                        continue;
                    }
                    if n.tag == "br" {
                        out.push(Tok::Break {
                            font_size: n.style.font_size,
                        });
                    } else if n.style.display == Display::Inline && !n.is_replaced() {
                        chain.push(*id);
                        self.collect_inline(&n.children, *id, chain, out);
                        chain.pop();
                    } else {
                        out.push(Tok::Atom {
                            id: *id,
                            chain: chain.clone(),
                        });
                    }
                }
            }
        }
    }

    fn replaced_size(&self, id: usize, avail: f64) -> (f64, f64) {
        let n = &self.dom.nodes[id];
        let st = &n.style;
        let lh = line_height(st.font_size);
        let (dw, dh) = match n.tag.as_str() {
            "img" => (
                n.attr("width").and_then(parse_px).unwrap_or(100.0),
                n.attr("height").and_then(parse_px).unwrap_or(100.0),
            ),
            "input" => match n.attr("type").unwrap_or("text") {
                "checkbox" | "radio" => (16.0, 16.0),
                "submit" | "button" => (
                    n.attr("value").map_or(0.0, |v| v.chars().count() as f64)
                        * advance(st.font_size)
                        + 16.0,
                    lh + 10.0,
                ),
                _ => (200.0, lh + 10.0),
            },
            "select" => (200.0, lh + 10.0),
            "textarea" => (300.0, 3.0 * lh + 10.0),
            _ => (0.0, 0.0),
        };
        (
            st.width.map_or(dw, |l| l.resolve(avail)),
            st.height.map_or(dh, |l| l.resolve(avail)),
        )
    }

    /// Shrink-to-fit width of a block laid out inside `avail`.
    fn fit_width(&mut self, id: usize, avail: f64) -> f64 {
        let saved = self.record;
        self.record = false;
        let (_, used) = self.layout_block(id, 0.0, 0.0, avail);
        self.record = saved;
        used.min(avail)
    }

    fn atom_size(&mut self, id: usize, avail: f64) -> (f64, f64) {
        if self.dom.nodes[id].is_replaced() {
            return self.replaced_size(id, avail);
        }
        let st = self.style(id).clone();
        let w = match st.width {
            Some(l) => l.resolve(avail),
            None => self.fit_width(id, avail),
        };
        let saved = self.record;
        self.record = false;
        let (h, _) = self.layout_block(id, 0.0, 0.0, w);
        self.record = saved;
        (w, h)
    }

    fn place_atom(&mut self, id: usize, x: f64, y: f64, w: f64, h: f64) {
        if self.dom.nodes[id].is_replaced() {
            self.geo[id].rect = Some(RawRect::new(x, y, w, h));
        } else {
            self.layout_block(id, x, y, w);
        }
    }

    /// Lays out a block at `(x, y)` with border-box width `w`. Returns (height, used width).
    fn layout_block(&mut self, id: usize, x: f64, y: f64, w: f64) -> (f64, f64) {
        let st = self.style(id).clone();
        self.geo[id].rect = Some(RawRect::new(x, y, w, 0.0));
        if self.record {
            self.geo[id].frags.clear();
        }
        let pad = st.padding;
        let cx = x + pad[3];
        let cw = (w - pad[1] - pad[3]).max(0.0);
        let mut cursor = y + pad[0];
        let mut used: f64 = 0.0;
        let mut run: Vec<Child> = Vec::new();
        let children = self.dom.nodes[id].children.clone();
        for child in &children {
            match child {
                Child::Text(_) => run.push(child.clone()),
                Child::El(c) => {
                    let n = &self.dom.nodes[*c];
                    if n.hidden {
                        continue;
                    }
                    if n.out_of_flow() {
                        self.flush_run(&mut run, id, cx, &mut cursor, cw, &mut used);
                        self.layout_out_of_flow(*c, cx, cursor);
                    } else if n.style.display == Display::Block {
                        self.flush_run(&mut run, id, cx, &mut cursor, cw, &mut used);
                        let cs = n.style.clone();
                        let m = cs.margin;
                        let child_w = match cs.width {
                            Some(l) => l.resolve(cw),
                            None => (cw - m[1] - m[3]).max(0.0),
                        };
                        cursor += m[0];
                        let (h, u) = self.layout_block(*c, cx + m[3], cursor, child_w);
                        cursor += h + m[2];
                        let extent = if cs.width.is_some() { child_w } else { u };
                        used = used.max(extent + m[1] + m[3]);
                    } else {
                        run.push(child.clone());
                    }
                }
            }
        }
        self.flush_run(&mut run, id, cx, &mut cursor, cw, &mut used);
        let content_h = cursor - (y + pad[0]);
        let h = st.height.map_or(content_h + pad[0] + pad[2], |l| {
            l.resolve(self.viewport.height as f64)
        });
        self.geo[id].rect = Some(RawRect::new(x, y, w, h));
        if st.position == Position::Relative {
            self.geo[id].shift = (
                st.left.map_or(0.0, |l| l.resolve(cw)),
                st.top.map_or(0.0, |l| l.resolve(h)),
            );
        }
        (h, used + pad[1] + pad[3])
    }

    fn layout_out_of_flow(&mut self, id: usize, static_x: f64, static_y: f64) {
        let st = self.style(id).clone();
        let cb = if st.position == Position::Fixed {
            RawRect::new(
                0.0,
                0.0,
                self.viewport.width as f64,
                self.viewport.height as f64,
            )
        } else {
            let a = self.dom.positioned_ancestor(id);
            self.geo[a].rect.unwrap_or(RawRect::new(
                0.0,
                0.0,
                self.viewport.width as f64,
                self.viewport.height as f64,
            ))
        };
        let x = st.left.map_or(static_x, |l| cb.x + l.resolve(cb.w));
        let y = st.top.map_or(static_y, |l| cb.y + l.resolve(cb.h));
        let avail = (cb.right() - x).max(0.0);
        if self.dom.nodes[id].is_replaced() {
            let (w, h) = self.replaced_size(id, cb.w);
            self.geo[id].rect = Some(RawRect::new(x, y, w, h));
            return;
        }
        let w = match st.width {
            Some(l) => l.resolve(cb.w),
            None => self.fit_width(id, avail),
        };
        self.layout_block(id, x, y, w);
    }

    fn flush_run(
        &mut self,
        run: &mut Vec<Child>,
        owner: usize,
        x: f64,
        cursor: &mut f64,
        w: f64,
        used: &mut f64,
    ) {
        if run.is_empty() {
            return;
        }
        let mut toks = Vec::new();
        self.collect_inline(run, owner, &mut Vec::new(), &mut toks);
        run.clear();
        let has_content = toks.iter().any(|t| !matches!(t, Tok::Space));
        if !has_content {
            return;
        }
        let font = self.style(owner).font_size;
        let (h, u) = self.layout_inline(&toks, x, *cursor, w, font);
        *cursor += h;
        *used = used.max(u);
    }

    fn tok_font(&self, tok: &Tok) -> f64 {
        match tok {
            Tok::Word { owner, .. } => self.style(*owner).font_size,
            Tok::Atom { id, .. } => self.style(*id).font_size,
            Tok::Break { font_size } => *font_size,
            Tok::Space => DEFAULT_FONT_SIZE,
        }
    }

    fn layout_inline(
        &mut self,
        toks: &[Tok],
        x: f64,
        y: f64,
        width: f64,
        block_font: f64,
    ) -> (f64, f64) {
        // Unbreakable segments: runs of glued words; atoms stand alone.
        struct Seg {
            pieces: Vec<Piece>,
            w: f64,
            space_before: bool,
            hard_break: bool,
        }
        let mut segs: Vec<Seg> = Vec::new();
        let mut pending_space = false;
        let mut open = false;
        for (i, tok) in toks.iter().enumerate() {
            match tok {
                Tok::Space => {
                    pending_space = true;
                    open = false;
                }
                Tok::Break { .. } => {
                    segs.push(Seg {
                        pieces: vec![Piece {
                            tok: i,
                            w: 0.0,
                            h: line_height(self.tok_font(tok)),
                        }],
                        w: 0.0,
                        space_before: false,
                        hard_break: true,
                    });
                    pending_space = false;
                    open = false;
                }
                Tok::Word { text, owner, .. } => {
                    let fs = self.style(*owner).font_size;
                    let piece = Piece {
                        tok: i,
                        w: text.chars().count() as f64 * advance(fs),
                        h: line_height(fs),
                    };
                    if open {
                        let seg = segs.last_mut().unwrap();
                        seg.w += piece.w;
                        seg.pieces.push(piece);
                    } else {
                        segs.push(Seg {
                            w: piece.w,
                            pieces: vec![piece],
                            space_before: pending_space,
                            hard_break: false,
                        });
                        open = true;
                    }
                    pending_space = false;
                }
                Tok::Atom { id, .. } => {
                    let (w, h) = self.atom_size(*id, width);
                    let m = self.style(*id).margin;
                    segs.push(Seg {
                        pieces: vec![Piece {
                            tok: i,
                            w: w + m[1] + m[3],
                            h: h + m[0] + m[2],
                        }],
                        w: w + m[1] + m[3],
                        space_before: pending_space,
                        hard_break: false,
                    });
                    pending_space = false;
                    open = false;
                }
            }
        }

        // Greedy line filling: (x offset, piece, space_before) per line.
        let mut lines: Vec<Vec<(f64, Piece, bool)>> = vec![Vec::new()];
        let mut line_x = 0.0;
        let mut line_heights: Vec<f64> = vec![0.0];
        let space_w = advance(block_font);
        for seg in segs {
            if seg.hard_break {
                let h = seg.pieces[0].h;
                let last = line_heights.last_mut().unwrap();
                if lines.last().unwrap().is_empty() {
                    *last = last.max(h);
                }
                lines.push(Vec::new());
                line_heights.push(0.0);
                line_x = 0.0;
                continue;
            }
            let gap = if seg.space_before && !lines.last().unwrap().is_empty() {
                space_w
            } else {
                0.0
            };
            if !lines.last().unwrap().is_empty() && line_x + gap + seg.w > width + 1e-9 {
                lines.push(Vec::new());
                line_heights.push(0.0);
                line_x = 0.0;
            }
            let gap = if lines.last().unwrap().is_empty() {
                0.0
            } else {
                gap
            };
            line_x += gap;
            let mut first = true;
            for piece in seg.pieces {
                let lh = line_heights.last_mut().unwrap();
                *lh = lh.max(piece.h);
                let px = line_x;
                line_x += piece.w;
                lines
                    .last_mut()
                    .unwrap()
                    .push((px, piece, first && seg.space_before));
                first = false;
            }
        }
        if lines.last().is_some_and(|l| l.is_empty()) && lines.len() > 1 {
            lines.pop();
            line_heights.pop();
        }

        let mut top = y;
        let mut used: f64 = 0.0;
        for (line, mut lh) in lines.into_iter().zip(line_heights) {
            if lh == 0.0 {
                lh = line_height(block_font);
            }
            let mut frags: HashMap<usize, RawRect> = HashMap::new();
            let mut frag_order: Vec<usize> = Vec::new();
            for (px, piece, space_before) in &line {
                let bottom = top + lh;
                let rect = RawRect::new(x + px, bottom - piece.h, piece.w, piece.h);
                used = used.max(px + piece.w);
                let chain = match &toks[piece.tok] {
                    Tok::Word { text, owner, chain } => {
                        if self.record {
                            let st = self.style(*owner);
                            self.words.push(Word {
                                owner: *owner,
                                text: text.clone(),
                                rect,
                                space_before: *space_before,
                                font_size: st.font_size,
                                color: st.color,
                            });
                        }
                        chain.clone()
                    }
                    Tok::Atom { id, chain } => {
                        let m = self.style(*id).margin;
                        self.place_atom(
                            *id,
                            rect.x + m[3],
                            rect.y + m[0],
                            piece.w - m[1] - m[3],
                            piece.h - m[0] - m[2],
                        );
                        chain.clone()
                    }
                    _ => Vec::new(),
                };
                for el in chain {
                    match frags.get_mut(&el) {
                        Some(f) => *f = f.union(&rect),
                        None => {
                            frags.insert(el, rect);
                            frag_order.push(el);
                        }
                    }
                }
            }
            if self.record {
                for el in frag_order {
                    self.geo[el].frags.push(frags[&el]);
                }
            }
            top += lh;
        }
        (top - y, used)
    }

    fn run(&mut self) -> f64 {
        let w = self.viewport.width as f64;
        self.layout_block(0, 0.0, 0.0, w);
        // Inline elements take their box from their fragments.
        for id in 1..self.dom.nodes.len() {
            let n = &self.dom.nodes[id];
            if n.style.display == Display::Inline && !n.is_replaced() && !n.out_of_flow() {
                let frags = &self.geo[id].frags;
                self.geo[id].rect = frags.iter().copied().reduce(|a, b| a.union(&b));
            }
            if n.hidden {
                self.geo[id] = Geo::default();
            }
        }
        // Relative offsets apply to whole subtrees.
        let mut total = vec![(0.0, 0.0); self.dom.nodes.len()];
        for id in 1..self.dom.nodes.len() {
            let n = &self.dom.nodes[id];
            let inherited = if n.style.position == Position::Fixed {
                (0.0, 0.0)
            } else {
                total[n.parent.unwrap_or(0)]
            };
            let own = self.geo[id].shift;
            total[id] = (inherited.0 + own.0, inherited.1 + own.1);
        }
        let mv = |r: &mut RawRect, d: (f64, f64)| {
            r.x += d.0;
            r.y += d.1;
        };
        for (id, geo) in self.geo.iter_mut().enumerate() {
            if let Some(r) = geo.rect.as_mut() {
                mv(r, total[id]);
            }
            for f in geo.frags.iter_mut() {
                mv(f, total[id]);
            }
        }
        for word in self.words.iter_mut() {
            mv(&mut word.rect, total[word.owner]);
        }
        let mut bottom: f64 = 0.0;
        for geo in &self.geo {
            if let Some(r) = geo.rect {
                bottom = bottom.max(r.bottom());
            }
        }
        for word in &self.words {
            bottom = bottom.max(word.rect.bottom());
        }
        bottom
    }
}

/// A laid-out page: geometry for every element plus word boxes.
pub struct Page {
    dom: Dom,
    geo: Vec<Geo>,
    words: Vec<Word>,
    pub dims: Dims,
    hit_order: Vec<usize>,
}

impl Page {
    pub fn layout(
        document: &str,
        viewport: Viewport,
        full_page: bool,
    ) -> Result<Page, RenderError> {
        let doc = markup::parse(document)
            .map_err(|e| RenderError::InvalidJob(format!("document: {e}")))?;
        let dom = Dom::build(&doc);
        let mut engine = Engine::new(&dom, viewport);
        let bottom = engine.run();
        let Engine { geo, words, .. } = engine;
        let height = if full_page {
            (bottom.ceil() as u32).max(viewport.height)
        } else {
            viewport.height
        };
        let mut geo = geo;
        geo[0].rect = Some(RawRect::new(0.0, 0.0, viewport.width as f64, height as f64));
        let mut hit_order: Vec<usize> = (0..dom.nodes.len())
            .filter(|&i| !dom.nodes[i].hidden && geo[i].rect.is_some())
            .collect();
        hit_order.sort_by(|a, b| dom.nodes[*b].paint_key.cmp(&dom.nodes[*a].paint_key));
        Ok(Page {
            dom,
            geo,
            words,
            dims: Dims::new(viewport.width, height),
            hit_order,
        })
    }

    fn hit_regions(&self, id: usize) -> Vec<RawRect> {
        let n = &self.dom.nodes[id];
        if n.style.display == Display::Inline && !n.is_replaced() && !n.out_of_flow() {
            self.geo[id].frags.clone()
        } else {
            self.geo[id].rect.into_iter().collect()
        }
    }

    /// Top-most element whose box contains the point.
    pub fn element_at(&self, x: f64, y: f64) -> Option<usize> {
        if x < 0.0 || y < 0.0 || x >= self.dims.width as f64 || y >= self.dims.height as f64 {
            return None;
        }
        self.hit_order.iter().copied().find(|&id| {
            self.hit_regions(id)
                .iter()
                .any(|r| x >= r.x && x < r.right() && y >= r.y && y < r.bottom())
        })
    }

    fn element_box(&self, id: usize) -> Option<RawRect> {
        self.geo[id].rect.filter(|r| !r.is_empty())
    }

    fn visibility(&self, id: usize, rect: &RawRect) -> RawVisibility {
        let mut hits = [false; 9];
        for (i, (px, py)) in grid_points(rect).into_iter().enumerate() {
            hits[i] = self
                .element_at(px, py)
                .is_some_and(|h| self.dom.is_within(h, id));
        }
        visibility_from_hits(rect, &hits)
    }

    fn text_rects(&self, id: usize) -> Result<Vec<RawRect>, String> {
        let words: Vec<&Word> = self
            .words
            .iter()
            .filter(|w| self.dom.is_within(w.owner, id))
            .collect();
        let mut chars: Vec<char> = Vec::new();
        let mut map: Vec<Option<(usize, usize)>> = Vec::new();
        for (wi, w) in words.iter().enumerate() {
            if wi > 0 && w.space_before {
                chars.push(' ');
                map.push(None);
            }
            for (ci, c) in w.text.chars().enumerate() {
                chars.push(c);
                map.push(Some((wi, ci)));
            }
        }
        let target: Vec<char> = match self.dom.nodes[id].attr("data-match") {
            Some(m) => decode_entities(m)
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .chars()
                .collect(),
            None => chars.clone(),
        };
        if target.is_empty() {
            return Err("empty value".into());
        }
        let start = (0..=chars.len().saturating_sub(target.len()))
            .find(|&s| chars.len() >= target.len() && chars[s..s + target.len()] == target[..])
            .ok_or_else(|| "value not found in rendered text".to_string())?;
        let mut spans: Vec<(usize, usize, usize)> = Vec::new();
        for (wi, ci) in map[start..start + target.len()].iter().flatten().copied() {
            match spans.last_mut() {
                Some((w, _, hi)) if *w == wi => *hi = ci,
                _ => spans.push((wi, ci, ci)),
            }
        }
        let rects: Vec<RawRect> = spans
            .into_iter()
            .map(|(wi, lo, hi)| {
                let w = words[wi];
                let adv = advance(w.font_size);
                RawRect::new(
                    w.rect.x + lo as f64 * adv,
                    w.rect.y,
                    (hi - lo + 1) as f64 * adv,
                    w.rect.h,
                )
            })
            .collect();
        Ok(line_boxes(&rects))
    }

    /// One record per annotated element, in document order.
    pub fn extract(&self) -> RawPayload {
        let mut records = Vec::new();
        for (id, n) in self.dom.nodes.iter().enumerate() {
            let Some((family, raw_label)) = [Kind::Pii, Kind::Product, Kind::Order]
                .into_iter()
                .find_map(|k| n.attr(k.attribute()).map(|v| (k, v)))
            else {
                continue;
            };
            let source_key = n.attr("data-src").unwrap_or_default().to_string();
            let label: FineLabel = match raw_label.parse() {
                Ok(l) => l,
                Err(_) => {
                    records.push(RawRecord {
                        source_key,
                        family,
                        label: FineLabel::OtherPii,
                        element_kind: ElementKind::Text,
                        rects: Vec::new(),
                        visibility: RawVisibility::Occluded,
                        error: Some(format!("unknown label `{raw_label}`")),
                    });
                    continue;
                }
            };
            let element_kind = label.element_kind();
            let mut record = RawRecord {
                source_key,
                family,
                label,
                element_kind,
                rects: Vec::new(),
                visibility: RawVisibility::Occluded,
                error: None,
            };
            let Some(rect) = (!n.hidden).then(|| self.element_box(id)).flatten() else {
                records.push(record);
                continue;
            };
            let rects = match element_kind {
                ElementKind::Input => Ok(vec![rect]),
                ElementKind::Image => {
                    let p = n.style.padding;
                    Ok(vec![RawRect::new(
                        rect.x + p[3],
                        rect.y + p[0],
                        (rect.w - p[1] - p[3]).max(0.0),
                        (rect.h - p[0] - p[2]).max(0.0),
                    )])
                }
                ElementKind::Text => self.text_rects(id),
            };
            match rects {
                Ok(rects) => {
                    record.visibility = self.visibility(id, &rect);
                    if record.visibility != RawVisibility::Occluded {
                        record.rects = rects;
                    }
                }
                Err(e) => record.error = Some(e),
            }
            records.push(record);
        }
        RawPayload::new(records)
    }

    /// Paints the page into an RGBA buffer.
    pub fn paint(&self, images: &mut ImageCache) -> RgbaImage {
        let mut canvas = RgbaImage::from_pixel(self.dims.width, self.dims.height, Rgba(WHITE));
        let mut order: Vec<usize> = self.hit_order.clone();
        order.reverse();
        let mut words_by_owner: HashMap<usize, Vec<&Word>> = HashMap::new();
        for w in &self.words {
            words_by_owner.entry(w.owner).or_default().push(w);
        }
        for id in order {
            let n = &self.dom.nodes[id];
            let regions = self.hit_regions(id);
            if let Some(bg) = n.style.background {
                for r in &regions {
                    fill(&mut canvas, r, bg);
                }
            }
            if let Some((bw, color)) = n.style.border {
                for r in &regions {
                    stroke(&mut canvas, r, bw, color);
                }
            }
            if n.is_replaced() {
                if let Some(r) = self.geo[id].rect {
                    self.paint_replaced(&mut canvas, n, &r, images);
                }
            }
            if let Some(words) = words_by_owner.get(&id) {
                for w in words {
                    glyphs(
                        &mut canvas,
                        w.rect.x,
                        w.rect.y,
                        &w.text,
                        w.font_size,
                        w.color,
                    );
                }
            }
        }
        canvas
    }

    fn paint_replaced(
        &self,
        canvas: &mut RgbaImage,
        n: &DNode,
        r: &RawRect,
        images: &mut ImageCache,
    ) {
        let fs = n.style.font_size;
        let text_y = r.y + (r.h - line_height(fs)) / 2.0;
        match n.tag.as_str() {
            "img" => match n.attr("src").and_then(|s| images.get(s)) {
                Some(img) => {
                    let (w, h) = (r.w.round().max(1.0) as u32, r.h.round().max(1.0) as u32);
                    let scaled = imageops::resize(img, w, h, imageops::FilterType::Triangle);
                    imageops::overlay(canvas, &scaled, r.x.round() as i64, r.y.round() as i64);
                }
                None => fill(canvas, r, [210, 210, 210, 255]),
            },
            "input" if matches!(n.attr("type"), Some("checkbox") | Some("radio")) => {
                fill(canvas, r, WHITE);
                stroke(canvas, r, 1.0, [110, 110, 110, 255]);
                if n.has_attr("checked") {
                    let inner = RawRect::new(r.x + 3.0, r.y + 3.0, r.w - 6.0, r.h - 6.0);
                    fill(canvas, &inner, [30, 100, 220, 255]);
                }
            }
            _ => {
                if n.style.background.is_none() {
                    fill(canvas, r, WHITE);
                }
                if n.style.border.is_none() {
                    stroke(canvas, r, 1.0, [140, 140, 140, 255]);
                }
                let (text, color) = self.control_text(n);
                glyphs(canvas, r.x + 6.0, text_y, &text, fs, color);
            }
        }
    }

    fn control_text(&self, n: &DNode) -> (String, Color) {
        let gray: Color = [150, 150, 150, 255];
        match n.tag.as_str() {
            "select" | "textarea" => self
                .option_text(n)
                .unwrap_or((String::new(), n.style.color)),
            _ => match n.attr("value").filter(|v| !v.is_empty()) {
                Some(v) => (decode_entities(v), n.style.color),
                None => (
                    decode_entities(n.attr("placeholder").unwrap_or_default()),
                    gray,
                ),
            },
        }
    }

    fn shows(&self, owner: usize, r: &RawRect) -> bool {
        self.element_at(r.x + r.w / 2.0, r.y + r.h / 2.0)
            .is_some_and(|h| self.dom.is_within(h, owner) || self.dom.is_within(owner, h))
    }

    /// Every painted word with its box, as a reader of the image would see
    /// it: flow text plus the text drawn inside form controls, minus words
    /// covered by other content.
    pub fn words(&self) -> Vec<(String, RawRect)> {
        let mut out: Vec<(usize, String, RawRect)> = self
            .words
            .iter()
            .filter(|w| !self.dom.nodes[w.owner].hidden && self.shows(w.owner, &w.rect))
            .map(|w| (w.owner, w.text.clone(), w.rect))
            .collect();
        for (id, n) in self.dom.nodes.iter().enumerate() {
            let Some(r) = self.geo[id].rect.filter(|_| !n.hidden && n.is_replaced()) else {
                continue;
            };
            if n.tag == "img" || matches!(n.attr("type"), Some("checkbox") | Some("radio")) {
                continue;
            }
            let fs = n.style.font_size;
            let (adv, lh) = (advance(fs), line_height(fs));
            let y = r.y + (r.h - lh) / 2.0;
            let (text, _) = self.control_text(n);
            let mut col = 0usize;
            for token in text.split(' ') {
                let len = token.chars().count();
                if len > 0 {
                    let rect = RawRect::new(r.x + 6.0 + col as f64 * adv, y, len as f64 * adv, lh);
                    if self.shows(id, &rect) {
                        out.push((id, token.to_string(), rect));
                    }
                }
                col += len + 1;
            }
        }
        out.sort_by(|a, b| {
            (a.2.y, a.2.x)
                .partial_cmp(&(b.2.y, b.2.x))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out.into_iter().map(|(_, t, r)| (t, r)).collect()
    }

    fn option_text(&self, n: &DNode) -> Option<(String, Color)> {
        let gray: Color = [150, 150, 150, 255];
        let kids: Vec<&DNode> = n
            .children
            .iter()
            .filter_map(|c| match c {
                Child::El(id) => Some(&self.dom.nodes[*id]),
                _ => None,
            })
            .collect();
        if n.tag == "textarea" {
            let text: String = n
                .children
                .iter()
                .filter_map(|c| match c {
                    Child::Text(t) => Some(t.as_str()),
                    _ => None,
                })
                .collect();
            return Some(if text.trim().is_empty() {
                (
                    decode_entities(n.attr("placeholder").unwrap_or_default()),
                    gray,
                )
            } else {
                (
                    text.split_whitespace().collect::<Vec<_>>().join(" "),
                    n.style.color,
                )
            });
        }
        let selected = kids
            .iter()
            .find(|o| o.has_attr("selected"))
            .or(kids.first())?;
        let label: String = selected
            .children
            .iter()
            .filter_map(|c| match c {
                Child::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        let color = if selected.attr("value") == Some("") {
            gray
        } else {
            n.style.color
        };
        Some((label.trim().to_string(), color))
    }
}

/// Decoded images keyed by their `src`.
#[derive(Default)]
pub struct ImageCache {
    images: HashMap<String, Option<RgbaImage>>,
}

impl ImageCache {
    fn get(&mut self, src: &str) -> Option<&RgbaImage> {
        self.images
            .entry(src.to_string())
            .or_insert_with(|| {
                let path = src.strip_prefix("file://").unwrap_or(src);
                image::open(path).ok().map(|i| i.to_rgba8())
            })
            .as_ref()
    }
}

fn blend(dst: &mut Rgba<u8>, src: Color) {
    let a = src[3] as u32;
    if a == 255 {
        *dst = Rgba(src);
        return;
    }
    for c in 0..3 {
        dst.0[c] = ((src[c] as u32 * a + dst.0[c] as u32 * (255 - a) + 127) / 255) as u8;
    }
    dst.0[3] = 255;
}

fn fill(canvas: &mut RgbaImage, r: &RawRect, color: Color) {
    if color[3] == 0 {
        return;
    }
    let x0 = r.x.round().max(0.0) as u32;
    let y0 = r.y.round().max(0.0) as u32;
    let x1 = (r.right().round().max(0.0) as u32).min(canvas.width());
    let y1 = (r.bottom().round().max(0.0) as u32).min(canvas.height());
    for y in y0..y1 {
        for x in x0..x1 {
            blend(canvas.get_pixel_mut(x, y), color);
        }
    }
}

fn stroke(canvas: &mut RgbaImage, r: &RawRect, width: f64, color: Color) {
    fill(canvas, &RawRect::new(r.x, r.y, r.w, width), color);
    fill(
        canvas,
        &RawRect::new(r.x, r.bottom() - width, r.w, width),
        color,
    );
    fill(canvas, &RawRect::new(r.x, r.y, width, r.h), color);
    fill(
        canvas,
        &RawRect::new(r.right() - width, r.y, width, r.h),
        color,
    );
}

fn glyphs(canvas: &mut RgbaImage, x: f64, y: f64, text: &str, font_size: f64, color: Color) {
    let adv = advance(font_size);
    let lh = line_height(font_size);
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            continue;
        }
        let cell = RawRect::new(
            x + i as f64 * adv + adv * 0.15,
            y + lh * 0.2,
            adv * 0.7,
            font_size * 0.75,
        );
        fill(canvas, &cell, color);
    }
}

/// Renders with the built-in layout engine.
#[derive(Default)]
pub struct OfflineRenderer {
    images: ImageCache,
}

impl OfflineRenderer {
    pub fn new() -> Self {
        Self::default()
    }
}

pub const OFFLINE_ENGINE: &str = "offline-box/1";

impl Renderer for OfflineRenderer {
    fn render(&mut self, job: &RenderJob) -> Result<RenderResult, RenderError> {
        job.check()?;
        let t0 = Instant::now();
        let page = Page::layout(&job.document, job.viewport, job.full_page)?;
        let t1 = Instant::now();
        let raw_annotations = page.extract();
        let t2 = Instant::now();
        let canvas = page.paint(&mut self.images);
        let mut image = Vec::new();
        canvas
            .write_to(
                &mut std::io::Cursor::new(&mut image),
                image::ImageFormat::Png,
            )
            .map_err(|e| RenderError::Image(e.to_string()))?;
        let t3 = Instant::now();
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1000.0;
        Ok(RenderResult {
            image,
            image_dims: page.dims,
            raw_annotations,
            timings: Timings {
                load_ms: ms(t0, t1),
                extract_ms: ms(t1, t2),
                capture_ms: ms(t2, t3),
            },
        })
    }

    fn describe(&self) -> String {
        OFFLINE_ENGINE.to_string()
    }
}
